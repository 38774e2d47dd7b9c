//! Real spherical harmonics, orthonormal under the full solid-angle integral,
//! with no Condon-Shortley phase: the associated Legendre functions are the
//! plain (1-x^2)^(m/2) d^m/dx^m P_l(x), all positive at x -> 1 for cos(m phi)
//! terms. Y_{0,0} = 1/(2 sqrt(pi)).
//!
//! Basis layout everywhere: degree-major, order ascending; index(l, m) =
//! l^2 + l + m.

/// Number of real harmonics through degree l_max.
pub fn sh_dim(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

pub(crate) fn factorial(n: usize) -> f64 {
    const TABLE_LEN: usize = 40;
    static TABLE: [f64; TABLE_LEN] = {
        let mut t = [1.0f64; TABLE_LEN];
        let mut i = 1;
        while i < TABLE_LEN {
            t[i] = t[i - 1] * i as f64;
            i += 1;
        }
        t
    };
    assert!(n < TABLE_LEN, "factorial range supports bandwidth <= 16");
    TABLE[n]
}

/// Associated Legendre P_l^m(x) without the Condon-Shortley phase, m >= 0.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    assert!(m <= l);
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    // P_m^m = (2m-1)!! (1-x^2)^{m/2}
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (x * (2.0 * ll as f64 - 1.0) * pmmp1 - (ll + m - 1) as f64 * pmm)
            / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real spherical harmonic Y_{l,m}(theta, phi), |m| <= l.
pub fn real_sh(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    assert!(am <= l);
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am)
        / factorial(l + am))
    .sqrt();
    let p = assoc_legendre(l, am, theta.cos());
    if m == 0 {
        norm * p
    } else if m > 0 {
        std::f64::consts::SQRT_2 * norm * p * (am as f64 * phi).cos()
    } else {
        std::f64::consts::SQRT_2 * norm * p * (am as f64 * phi).sin()
    }
}

/// All harmonics through l_max at one direction, basis order.
pub fn sh_basis_row(l_max: usize, theta: f64, phi: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(sh_dim(l_max));
    for l in 0..=l_max {
        for m in -(l as i64)..=(l as i64) {
            row.push(real_sh(l, m, theta, phi));
        }
    }
    row
}

pub fn dir_to_angles(p: [f64; 3]) -> (f64, f64) {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let theta = (p[2] / r).clamp(-1.0, 1.0).acos();
    let phi = p[1].atan2(p[0]);
    (theta, phi)
}

/// Gauss-Legendre nodes and weights on [-1, 1], exact for polynomials of
/// degree 2n - 1. Newton iteration on P_n from the Chebyshev initial guess.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    // Mirror to the negative half; odd n keeps its center node (the last
    // computed root, x = 0) exactly once.
    let mut full: Vec<(f64, f64)> = out.iter().map(|&(x, w)| (-x, w)).collect();
    let center = if n % 2 == 1 { 1 } else { 0 };
    full.extend(out.into_iter().take(m - center));
    full.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    full
}
