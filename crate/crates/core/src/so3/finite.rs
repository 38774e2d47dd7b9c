//! Finite rotation groups and group-closed sampling sets.
//!
//! Elements are stored in canonical-quaternion lexicographic order, so tables
//! are reproducible across runs. Composition tables are built by nearest-match
//! lookup with a 1e-9 geodesic threshold; anything farther is a closure bug.

use super::rotation::Rotation;
use thiserror::Error;

const MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("group closure failed: product {0} has no match within 1e-9")]
    ClosureFailure(usize),
    #[error("closure exceeded bound of {0} elements")]
    ClosureOverflow(usize),
    #[error("sampling set degenerate: {got} members for group of order {group}")]
    DegenerateSamplingSet { got: usize, group: usize },
    #[error("orbit map is not a permutation for group element {0}")]
    OrbitNotBijective(usize),
}

#[derive(Debug, Clone)]
pub struct FiniteGroup {
    pub name: String,
    pub elements: Vec<Rotation>,
    /// cayley[i][j] = index of elements[i] * elements[j].
    pub cayley: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
}

fn sort_canonical(elements: &mut [Rotation]) {
    elements.sort_by(|a, b| {
        [a.w, a.x, a.y, a.z]
            .partial_cmp(&[b.w, b.x, b.y, b.z])
            .unwrap()
    });
}

fn find_index(elements: &[Rotation], r: &Rotation) -> Option<usize> {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, e) in elements.iter().enumerate() {
        let d = e.geodesic_distance(r);
        if d < best.0 {
            best = (d, i);
        }
    }
    (best.0 < MATCH_TOL).then_some(best.1)
}

impl FiniteGroup {
    fn from_elements(name: &str, mut elements: Vec<Rotation>) -> Result<Self, GroupError> {
        sort_canonical(&mut elements);
        let n = elements.len();
        let mut cayley = vec![vec![0usize; n]; n];
        for i in 0..n {
            for j in 0..n {
                let p = elements[i].compose(&elements[j]);
                cayley[i][j] =
                    find_index(&elements, &p).ok_or(GroupError::ClosureFailure(i * n + j))?;
            }
        }
        let mut inverse = vec![0usize; n];
        for i in 0..n {
            let inv = elements[i].inverse();
            inverse[i] = find_index(&elements, &inv).ok_or(GroupError::ClosureFailure(i))?;
        }
        Ok(Self { name: name.to_string(), elements, cayley, inverse })
    }

    /// Cyclic group of order n about the +z axis.
    pub fn cyclic(n: usize) -> Result<Self, GroupError> {
        assert!(n >= 1);
        let elements: Vec<Rotation> = (0..n)
            .map(|k| Rotation::rz(2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        Self::from_elements(&format!("C{n}"), elements)
    }

    /// Proper icosahedral rotation group (order 60), oriented with a 5-fold
    /// axis along +z. Generated by the 5-fold z rotation and a 2-fold flip
    /// about an adjacent edge-midpoint axis, closed under composition.
    pub fn icosahedral() -> Result<Self, GroupError> {
        let five = Rotation::rz(2.0 * std::f64::consts::PI / 5.0);
        // Icosahedron with a vertex at +z: the nearest vertex ring sits at
        // cos(theta) = 1/sqrt(5). The 2-fold axis runs through the midpoint of
        // the edge joining the pole vertex to a ring vertex.
        let c = 1.0 / 5.0_f64.sqrt();
        let s = 2.0 / 5.0_f64.sqrt();
        let mid = [s / 2.0, 0.0, (1.0 + c) / 2.0];
        let two = Rotation::from_axis_angle(mid, std::f64::consts::PI).unwrap();

        let mut elements = vec![Rotation::IDENTITY];
        let mut frontier = vec![Rotation::IDENTITY];
        while let Some(g) = frontier.pop() {
            for gen in [&five, &two] {
                let p = g.compose(gen);
                if find_index(&elements, &p).is_none() {
                    if elements.len() >= 200 {
                        return Err(GroupError::ClosureOverflow(200));
                    }
                    elements.push(p);
                    frontier.push(p);
                }
            }
        }
        Self::from_elements("I60", elements)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn identity_index(&self) -> usize {
        find_index(&self.elements, &Rotation::IDENTITY).expect("identity in group")
    }

    pub fn index_of(&self, r: &Rotation) -> Option<usize> {
        find_index(&self.elements, r)
    }

    pub fn element_order(&self, i: usize) -> usize {
        let e = self.identity_index();
        let mut cur = i;
        for k in 1..=self.len() {
            if cur == e {
                return k;
            }
            cur = self.cayley[i][cur];
        }
        unreachable!("element order exceeds group order")
    }

    /// Indices of elements that rotate about the +z axis (the identity included),
    /// sorted by rotation angle.
    pub fn z_subgroup(&self) -> Vec<usize> {
        let mut found: Vec<(f64, usize)> = Vec::new();
        for (i, e) in self.elements.iter().enumerate() {
            let (axis, angle) = e.to_axis_angle();
            if angle < 1e-12 || axis[2].abs() > 1.0 - 1e-9 {
                let signed = if axis[2] >= 0.0 { angle } else { 2.0 * std::f64::consts::PI - angle };
                found.push((if angle < 1e-12 { 0.0 } else { signed }, i));
            }
        }
        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        found.into_iter().map(|(_, i)| i).collect()
    }

    pub fn verify_latin_square(&self) -> bool {
        let n = self.len();
        for i in 0..n {
            let mut row = vec![false; n];
            let mut col = vec![false; n];
            for j in 0..n {
                row[self.cayley[i][j]] = true;
                col[self.cayley[j][i]] = true;
            }
            if row.iter().any(|&b| !b) || col.iter().any(|&b| !b) {
                return false;
            }
        }
        true
    }
}

/// Deterministic off-axis offsets for sampling sets that need more rotations
/// than the group itself provides. n = 1 yields just the identity.
pub fn standard_offsets(n: usize) -> Vec<Rotation> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|j| {
            if j == 0 {
                Rotation::IDENTITY
            } else {
                let beta = std::f64::consts::PI * (j as f64 + 0.5) / (n as f64 + 1.0);
                Rotation::ry(beta).compose(&Rotation::rz(golden * j as f64))
            }
        })
        .collect()
}

/// A finite subset S of SO(3) closed under left multiplication by a group H:
/// h * S = S for every h, realized as an explicit row permutation.
#[derive(Debug, Clone)]
pub struct SamplingSet {
    pub group: FiniteGroup,
    pub offsets: Vec<Rotation>,
    pub members: Vec<Rotation>,
    /// orbit_perm[h][i] = index of group.elements[h] * members[i] in members.
    pub orbit_perm: Vec<Vec<usize>>,
}

impl SamplingSet {
    pub fn build(group: FiniteGroup, offsets: Vec<Rotation>) -> Result<Self, GroupError> {
        let mut members: Vec<Rotation> = Vec::new();
        for o in &offsets {
            for h in &group.elements {
                let m = h.compose(o);
                if find_index(&members, &m).is_none() {
                    members.push(m);
                }
            }
        }
        sort_canonical(&mut members);
        if members.len() < group.len() {
            return Err(GroupError::DegenerateSamplingSet {
                got: members.len(),
                group: group.len(),
            });
        }
        let mut orbit_perm = Vec::with_capacity(group.len());
        for (h_idx, h) in group.elements.iter().enumerate() {
            let mut perm = Vec::with_capacity(members.len());
            let mut seen = vec![false; members.len()];
            for s in &members {
                let target = h.compose(s);
                let k = find_index(&members, &target)
                    .ok_or(GroupError::OrbitNotBijective(h_idx))?;
                if seen[k] {
                    return Err(GroupError::OrbitNotBijective(h_idx));
                }
                seen[k] = true;
                perm.push(k);
            }
            orbit_perm.push(perm);
        }
        Ok(Self { group, offsets, members, orbit_perm })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_cayley_is_modular_addition() {
        let g = FiniteGroup::cyclic(8).unwrap();
        assert_eq!(g.len(), 8);
        // Oracle: reconstruct each element's step count from its angle, then
        // check the table against addition mod 8.
        let step = |r: &Rotation| -> usize {
            let (axis, angle) = r.to_axis_angle();
            if angle < 1e-12 {
                return 0;
            }
            let signed = if axis[2] > 0.0 { angle } else { -angle };
            let k = (signed / (2.0 * std::f64::consts::PI / 8.0)).round() as i64;
            k.rem_euclid(8) as usize
        };
        for i in 0..8 {
            for j in 0..8 {
                let expect = (step(&g.elements[i]) + step(&g.elements[j])) % 8;
                assert_eq!(step(&g.elements[g.cayley[i][j]]), expect);
            }
        }
        assert!(g.verify_latin_square());
        assert_eq!(g.z_subgroup().len(), 8);
    }

    #[test]
    fn icosahedral_structure() {
        let g = FiniteGroup::icosahedral().unwrap();
        assert_eq!(g.len(), 60);
        assert!(g.verify_latin_square());

        // Analytic order histogram for the icosahedral rotation group:
        // 1 identity, 15 two-fold, 20 three-fold, 24 five-fold.
        let mut hist = std::collections::BTreeMap::new();
        for i in 0..g.len() {
            *hist.entry(g.element_order(i)).or_insert(0usize) += 1;
        }
        assert_eq!(hist.get(&1), Some(&1));
        assert_eq!(hist.get(&2), Some(&15));
        assert_eq!(hist.get(&3), Some(&20));
        assert_eq!(hist.get(&5), Some(&24));
        assert_eq!(hist.values().sum::<usize>(), 60);

        // Oriented with the 5-fold axis on z.
        assert_eq!(g.z_subgroup().len(), 5);

        // Inverses land inside the group.
        for i in 0..g.len() {
            let e = g.cayley[i][g.inverse[i]];
            assert_eq!(e, g.identity_index());
        }
    }

    #[test]
    fn icosahedral_is_deterministic() {
        let a = FiniteGroup::icosahedral().unwrap();
        let b = FiniteGroup::icosahedral().unwrap();
        for (x, y) in a.elements.iter().zip(&b.elements) {
            assert_eq!(x, y);
        }
        assert_eq!(a.cayley, b.cayley);
    }

    #[test]
    fn sampling_set_identity_offset_reduces_to_group() {
        let g = FiniteGroup::cyclic(8).unwrap();
        let s = SamplingSet::build(g.clone(), vec![Rotation::IDENTITY]).unwrap();
        assert_eq!(s.len(), 8);
        // With S = H sorted identically, the orbit permutation is the Cayley row.
        for h in 0..8 {
            for i in 0..8 {
                assert_eq!(s.orbit_perm[h][i], g.cayley[h][i]);
            }
        }
    }

    #[test]
    fn sampling_set_duplicate_offsets_collapse() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let s = SamplingSet::build(g, vec![Rotation::IDENTITY, Rotation::rz(0.0)]).unwrap();
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn sampling_set_multi_offset_closure() {
        let g = FiniteGroup::cyclic(8).unwrap();
        let s = SamplingSet::build(g, standard_offsets(6)).unwrap();
        assert_eq!(s.len(), 48);
        for perm in &s.orbit_perm {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..48).collect::<Vec<_>>());
        }
    }

    #[test]
    fn icosahedral_sampling_set() {
        let g = FiniteGroup::icosahedral().unwrap();
        let s = SamplingSet::build(g, standard_offsets(1)).unwrap();
        assert_eq!(s.len(), 60);
        for perm in &s.orbit_perm {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..60).collect::<Vec<_>>());
        }
    }
}
