//! DDPM noise schedule and the deterministic DDIM sampler.
//!
//! Timesteps are one-based: t runs from 1 (barely noised) to K (pure noise
//! up to a vanishing signal term), and t = 0 denotes clean data where the
//! cumulative signal fraction is exactly one.

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs at least one step")]
    Empty,
    #[error("beta[{index}] = {value} is outside (0, 1)")]
    BetaOutOfRange { index: usize, value: f64 },
    #[error("beta must be non-decreasing, beta[{index}] dropped")]
    BetaNotMonotone { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Array1<f64>,
    alpha_bar: Array1<f64>,
}

impl NoiseSchedule {
    pub fn new(beta: Array1<f64>) -> Result<Self, ScheduleError> {
        if beta.is_empty() {
            return Err(ScheduleError::Empty);
        }
        for (i, &b) in beta.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(ScheduleError::BetaOutOfRange { index: i, value: b });
            }
            if i > 0 && b < beta[i - 1] {
                return Err(ScheduleError::BetaNotMonotone { index: i });
            }
        }
        let mut alpha_bar = Array1::zeros(beta.len());
        let mut prod = 1.0;
        for (i, &b) in beta.iter().enumerate() {
            prod *= 1.0 - b;
            alpha_bar[i] = prod;
        }
        Ok(Self { beta, alpha_bar })
    }

    /// Linear beta ramp, the classic image-diffusion configuration.
    pub fn ddpm_linear(k_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if k_steps == 0 {
            return Err(ScheduleError::Empty);
        }
        let beta = if k_steps == 1 {
            Array1::from_elem(1, beta_start)
        } else {
            Array1::linspace(beta_start, beta_end, k_steps)
        };
        Self::new(beta)
    }

    pub fn k_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    /// Cumulative signal fraction at timestep t; t = 0 is exactly 1.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// a^t = sqrt(abar_t) a^0 + sqrt(1 - abar_t) eps. The shorthand
    /// "clean plus noise" always means this scaled mixture.
    pub fn forward_noise(&self, a0: &Array1<f64>, eps: &Array1<f64>, t: usize) -> Array1<f64> {
        assert!(t >= 1 && t <= self.k_steps(), "timestep {t} out of range");
        let ab = self.alpha_bar_at(t);
        a0 * ab.sqrt() + eps * (1.0 - ab).sqrt()
    }

    /// n + 1 timesteps descending from K to 0, evenly spaced.
    pub fn ddim_times(&self, n: usize) -> Vec<usize> {
        assert!(n >= 1 && n <= self.k_steps());
        let k = self.k_steps() as f64;
        (0..=n)
            .map(|i| ((k * (n - i) as f64) / n as f64).round() as usize)
            .collect()
    }

    /// One deterministic update from t_cur down to t_prev.
    pub fn ddim_step(
        &self,
        a: &Array1<f64>,
        eps_hat: &Array1<f64>,
        t_cur: usize,
        t_prev: usize,
    ) -> Array1<f64> {
        assert!(t_prev < t_cur, "must step toward clean data");
        let ab_cur = self.alpha_bar_at(t_cur);
        let ab_prev = self.alpha_bar_at(t_prev);
        let a0_hat = (a - &(eps_hat * (1.0 - ab_cur).sqrt())) / ab_cur.sqrt();
        a0_hat * ab_prev.sqrt() + eps_hat * (1.0 - ab_prev).sqrt()
    }

    /// Runs the n-step sampler from the given initial noise. Every
    /// operation is deterministic, so identical inputs give bit-identical
    /// outputs.
    pub fn ddim_sample<F>(&self, init_noise: Array1<f64>, n: usize, mut denoiser: F) -> Array1<f64>
    where
        F: FnMut(&Array1<f64>, usize) -> Array1<f64>,
    {
        let times = self.ddim_times(n);
        let mut a = init_noise;
        for w in times.windows(2) {
            let (t_cur, t_prev) = (w[0], w[1]);
            let eps_hat = denoiser(&a, t_cur);
            a = self.ddim_step(&a, &eps_hat, t_cur, t_prev);
        }
        a
    }
}

pub fn standard_normal_vec<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| StandardNormal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_ramp_satisfies_the_schedule_invariants() {
        let s = NoiseSchedule::ddpm_linear(100, 1e-4, 2e-2).unwrap();
        assert_eq!(s.k_steps(), 100);
        assert_abs_diff_eq!(s.beta()[0], 1e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(s.beta()[99], 2e-2, epsilon = 1e-15);
        for t in 1..=100 {
            let ab = s.alpha_bar_at(t);
            assert!(ab > 0.0 && ab < 1.0);
            assert!(ab < s.alpha_bar_at(t - 1), "alpha_bar must strictly decrease");
        }
    }

    #[test]
    fn cumulative_products_match_direct_evaluation() {
        let s = NoiseSchedule::new(Array1::from_elem(2, 0.01)).unwrap();
        assert_abs_diff_eq!(s.alpha_bar_at(2), 0.9801, epsilon = 1e-15);

        let s = NoiseSchedule::ddpm_linear(100, 1e-4, 2e-2).unwrap();
        for t in 1..=100 {
            let direct: f64 = (0..t).map(|i| 1.0 - s.beta()[i]).product();
            assert_abs_diff_eq!(s.alpha_bar_at(t), direct, epsilon = 1e-15);
        }
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert_eq!(
            NoiseSchedule::ddpm_linear(0, 1e-4, 2e-2),
            Err(ScheduleError::Empty)
        );
        assert!(matches!(
            NoiseSchedule::new(Array1::from(vec![0.1, 0.05])),
            Err(ScheduleError::BetaNotMonotone { index: 1 })
        ));
        assert!(matches!(
            NoiseSchedule::new(Array1::from(vec![0.0, 0.1])),
            Err(ScheduleError::BetaOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn forward_noise_mean_and_variance_match_the_mixture() {
        let s = NoiseSchedule::ddpm_linear(100, 1e-4, 2e-2).unwrap();
        let t = 60;
        let ab = s.alpha_bar_at(t);
        let a0 = Array1::from(vec![0.7, -1.2, 0.3, 2.0]);
        let mut rng = substream(72, "fwd-noise", 0);
        let draws = 100_000;
        let mut sum = Array1::<f64>::zeros(4);
        let mut sum_sq = Array1::<f64>::zeros(4);
        for _ in 0..draws {
            let eps = standard_normal_vec(&mut rng, 4);
            let at = s.forward_noise(&a0, &eps, t);
            sum += &at;
            sum_sq += &at.mapv(|v| v * v);
        }
        let mean = sum / draws as f64;
        let var = sum_sq / draws as f64 - mean.mapv(|v| v * v);
        for d in 0..4 {
            assert_abs_diff_eq!(mean[d], ab.sqrt() * a0[d], epsilon = 0.02);
            let rel = (var[d] - (1.0 - ab)).abs() / (1.0 - ab);
            assert!(rel < 0.02, "variance off by {rel:.3}");
        }
    }

    #[test]
    fn ddim_times_descend_evenly_to_zero() {
        let s = NoiseSchedule::ddpm_linear(100, 1e-4, 2e-2).unwrap();
        let times = s.ddim_times(16);
        assert_eq!(times.len(), 17);
        assert_eq!(times[0], 100);
        assert_eq!(*times.last().unwrap(), 0);
        for w in times.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn oracle_denoiser_converges_to_its_target() {
        let s = NoiseSchedule::ddpm_linear(100, 1e-4, 2e-2).unwrap();
        let target = Array1::from(vec![0.4, -0.9, 1.3, 0.0, 0.25]);
        let mut rng = substream(72, "ddim", 1);
        let init = standard_normal_vec(&mut rng, 5);
        let t_copy = target.clone();
        let out = s.ddim_sample(init, 16, |a, t| {
            let ab = s.alpha_bar_at(t);
            (a - &(t_copy.clone() * ab.sqrt())) / (1.0 - ab).sqrt()
        });
        let mut worst = 0.0f64;
        for (a, b) in out.iter().zip(target.iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-6, "sampler missed the fixed point by {worst:.3e}");
    }

    #[test]
    fn sampling_is_bit_identical_for_identical_seeds() {
        let s = NoiseSchedule::ddpm_linear(100, 1e-4, 2e-2).unwrap();
        let run = || {
            let mut rng = substream(72, "ddim", 2);
            let init = standard_normal_vec(&mut rng, 6);
            s.ddim_sample(init, 16, |a, t| a * (0.01 * t as f64))
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
