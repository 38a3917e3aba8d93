//! Pareto dominance (maximisation), non-dominated filtering and the
//! hypervolume indicator.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::RngStream;

/// Margin subtracted from the nadir when deriving a reference point.
pub const REFERENCE_MARGIN: f64 = 1e-6;

/// `u` is at least as good as `v` everywhere and strictly better somewhere.
pub fn dominates<T: Real>(u: &[T], v: &[T]) -> Result<bool> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "cannot compare vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dominates_unchecked(u, v))
}

fn dominates_unchecked<T: Real>(u: &[T], v: &[T]) -> bool {
    let mut strict = false;
    for (&a, &b) in u.iter().zip(v) {
        if a < b {
            return false;
        }
        strict |= a > b;
    }
    strict
}

fn lex_desc<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Indices (ascending) of the points no other point dominates. Identical
/// points are all kept.
///
/// Points are visited in descending lexicographic order, so any dominator of
/// a point is visited before it; each point is only checked against the
/// front accumulated so far.
pub fn non_dominated<T: Real>(points: &[Vec<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_desc(&points[a], &points[b]));
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&j| dominates_unchecked(&points[j], &points[i])) {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

/// Componentwise minimum minus `margin`.
pub fn reference_point<T: Real>(points: &[Vec<T>], margin: T) -> Result<Vec<T>> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("reference point of an empty set".into()))?;
    if margin < T::zero() {
        return Err(Error::InvalidInput(format!("negative margin {margin}")));
    }
    let mut r = first.clone();
    for p in &points[1..] {
        r.iter_mut().zip(p).for_each(|(r, &x)| *r = r.min(x));
    }
    Ok(r.into_iter().map(|x| x - margin).collect())
}

fn check_points<T: Real>(points: &[Vec<T>], reference: &[T]) -> Result<()> {
    if let Some(p) = points.iter().find(|p| p.len() != reference.len()) {
        return Err(Error::InvalidInput(format!(
            "point of length {} against reference of length {}",
            p.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Exact Lebesgue measure of the union of boxes `[reference, p]`, for 2 to 4
/// objectives. Points that do not strictly dominate the reference in every
/// coordinate contribute nothing.
pub fn hypervolume<T: Real>(points: &[Vec<T>], reference: &[T]) -> Result<T> {
    let q = reference.len();
    if !(2..=4).contains(&q) {
        return Err(Error::UnsupportedDimension(q));
    }
    check_points(points, reference)?;
    let inside: Vec<Vec<T>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(&x, &r)| x > r))
        .cloned()
        .collect();
    let front: Vec<Vec<T>> = non_dominated(&inside).into_iter().map(|i| inside[i].clone()).collect();
    Ok(sweep(front, reference, q))
}

/// Dimension sweep over the first `d` coordinates: slice along the last
/// one and recurse; the planar case is a sorted staircase.
fn sweep<T: Real>(mut pts: Vec<Vec<T>>, reference: &[T], d: usize) -> T {
    if pts.is_empty() {
        return T::zero();
    }
    let desc = |k: usize| move |a: &Vec<T>, b: &Vec<T>| b[k].partial_cmp(&a[k]).unwrap_or(Ordering::Equal);
    if d == 2 {
        pts.sort_by(desc(0));
        let mut area = T::zero();
        let mut top = reference[1];
        for p in &pts {
            if p[1] > top {
                area = area + (p[0] - reference[0]) * (p[1] - top);
                top = p[1];
            }
        }
        return area;
    }
    let k = d - 1;
    pts.sort_by(desc(k));
    let mut volume = T::zero();
    for i in 0..pts.len() {
        let floor = pts.get(i + 1).map_or(reference[k], |p| p[k]);
        let height = pts[i][k] - floor;
        if height > T::zero() {
            volume = volume + sweep(pts[..=i].to_vec(), reference, d - 1) * height;
        }
    }
    volume
}

/// Monte-Carlo estimate of the hypervolume over the box from the reference
/// to the componentwise maximum of the points; returns `(estimate, std_error)`.
pub fn hypervolume_mc<T: Real>(
    points: &[Vec<T>],
    reference: &[T],
    samples: usize,
    rng: &mut RngStream,
) -> Result<(T, T)> {
    if samples == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    check_points(points, reference)?;
    let q = reference.len();
    let mut upper = reference.to_vec();
    for p in points {
        upper.iter_mut().zip(p).for_each(|(u, &x)| *u = u.max(x));
    }
    let box_volume = upper
        .iter()
        .zip(reference)
        .fold(T::one(), |acc, (&u, &r)| acc * (u - r));
    if box_volume <= T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let inside: Vec<&Vec<T>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(&x, &r)| x > r))
        .collect();
    let mut x = vec![T::zero(); q];
    let mut hits = 0usize;
    for _ in 0..samples {
        for k in 0..q {
            x[k] = rng.uniform_in(reference[k], upper[k]);
        }
        if inside.iter().any(|p| p.iter().zip(&x).all(|(&pk, &xk)| pk >= xk)) {
            hits += 1;
        }
    }
    let n = T::lit(samples as f64);
    let frac = T::lit(hits as f64) / n;
    let se = box_volume * (frac * (T::one() - frac) / n).sqrt();
    Ok((box_volume * frac, se))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry<T> {
    pub policy_id: usize,
    pub preference: Vec<T>,
    pub mean_return: Vec<T>,
    pub valid: bool,
    pub non_dominated: bool,
}

/// Evaluated policies of one front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive<T> {
    pub entries: Vec<ArchiveEntry<T>>,
    pub reference_point: Vec<T>,
    pub hypervolume: Option<T>,
}

impl<T: Real> ParetoArchive<T> {
    /// Builds an archive and marks dominance among the valid entries.
    /// Reference point and hypervolume are left unset.
    pub fn new(entries: Vec<ArchiveEntry<T>>) -> Self {
        let mut archive = Self {
            entries,
            reference_point: Vec::new(),
            hypervolume: None,
        };
        archive.refresh_dominance();
        archive
    }

    pub fn refresh_dominance(&mut self) {
        let valid: Vec<usize> = (0..self.entries.len()).filter(|&i| self.entries[i].valid).collect();
        let points: Vec<Vec<T>> = valid.iter().map(|&i| self.entries[i].mean_return.clone()).collect();
        self.entries.iter_mut().for_each(|e| e.non_dominated = false);
        for k in non_dominated(&points) {
            self.entries[valid[k]].non_dominated = true;
        }
    }

    pub fn valid_points(&self) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .filter(|e| e.valid)
            .map(|e| e.mean_return.clone())
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.valid).count()
    }

    pub fn non_dominated_count(&self) -> usize {
        self.entries.iter().filter(|e| e.non_dominated).count()
    }

    /// Sets the reference point and the hypervolume of the valid entries.
    pub fn set_reference(&mut self, reference: Vec<T>) -> Result<()> {
        let hv = hypervolume(&self.valid_points(), &reference)?;
        self.reference_point = reference;
        self.hypervolume = Some(hv);
        Ok(())
    }

    /// Nadir of the valid entries minus [`REFERENCE_MARGIN`]; `None` when
    /// nothing is valid.
    pub fn own_reference(&self) -> Option<Vec<T>> {
        reference_point(&self.valid_points(), T::lit(REFERENCE_MARGIN)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 2.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 2.0], &[2.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 2.0], &[1.0, 2.0]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn non_dominated_examples() {
        assert_eq!(non_dominated(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.4, 0.4]]), vec![0, 1, 2]);
        assert_eq!(non_dominated(&[vec![1.0, 1.0], vec![0.0, 0.0]]), vec![0]);
        assert_eq!(non_dominated(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.1, 0.1]]), vec![0, 1]);
    }

    #[test]
    fn reference_point_examples() {
        assert_eq!(reference_point(&[vec![1.0, 2.0], vec![3.0, 0.0]], 0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(reference_point(&[vec![1.0, 2.0]], 0.5).unwrap(), vec![0.5, 1.5]);
        assert!(reference_point::<f64>(&[], 0.0).is_err());
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[vec![1.0, 1.0]], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(hypervolume(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[0.0, 0.0]).unwrap(), 3.0);
        let hv3: f64 = hypervolume(&[vec![1.0, 1.0, 1.0], vec![0.5, 0.5, 2.0]], &[0.0; 3]).unwrap();
        assert!((hv3 - 1.25).abs() < 1e-15);
        assert!(matches!(hypervolume(&[vec![1.0]], &[0.0]), Err(Error::UnsupportedDimension(1))));
        assert!(matches!(hypervolume(&[vec![1.0; 5]], &[0.0; 5]), Err(Error::UnsupportedDimension(5))));
    }

    #[test]
    fn hypervolume_four_objectives_by_inclusion_exclusion() {
        // |A| + |B| - |A n B| with A = [0,(2,1,1,1)], B = [0,(1,1,1,3)].
        let hv = hypervolume(&[vec![2.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 3.0]], &[0.0; 4]).unwrap();
        assert_eq!(hv, 2.0 + 3.0 - 1.0);
    }

    #[test]
    fn points_outside_reference_are_ignored() {
        let hv = hypervolume(&[vec![1.0, 1.0], vec![5.0, -1.0], vec![-2.0, 9.0]], &[0.0, 0.0]).unwrap();
        assert_eq!(hv, 1.0);
        assert_eq!(hypervolume::<f64>(&[], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_on_full_box() {
        let mut rng = RngStream::new(1);
        let (est, se) = hypervolume_mc(&[vec![1.0, 1.0]], &[0.0, 0.0], 1000, &mut rng).unwrap();
        assert_eq!((est, se), (1.0, 0.0));
        let (est, se): (f64, f64) = hypervolume_mc(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[0.0, 0.0], 1, &mut rng).unwrap();
        assert!(est.is_finite() && se == 0.0);
    }

    #[test]
    fn archive_marks_dominance_over_valid_entries() {
        let entry = |id, r: [f64; 2], valid| ArchiveEntry {
            policy_id: id,
            preference: vec![0.5, 0.5],
            mean_return: r.to_vec(),
            valid,
            non_dominated: false,
        };
        let mut archive = ParetoArchive::new(vec![
            entry(0, [1.0, 1.0], true),
            entry(1, [0.0, 0.0], true),
            entry(2, [5.0, 5.0], false),
        ]);
        let flags: Vec<bool> = archive.entries.iter().map(|e| e.non_dominated).collect();
        assert_eq!(flags, vec![true, false, false]);
        let r = archive.own_reference().unwrap();
        archive.set_reference(r).unwrap();
        assert!(archive.hypervolume.unwrap() > 0.0);
    }

    fn cloud(q: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, q), 1..25)
    }

    proptest! {
        #[test]
        fn adding_a_point_never_decreases(pts in cloud(3), extra in prop::collection::vec(0.0f64..1.0, 3)) {
            let r = vec![0.0; 3];
            let before = hypervolume(&pts, &r).unwrap();
            let mut more = pts.clone();
            more.push(extra);
            prop_assert!(hypervolume(&more, &r).unwrap() >= before);
        }

        #[test]
        fn dominated_points_do_not_change_hypervolume(pts in cloud(3)) {
            let r = vec![0.0; 3];
            let nd: Vec<Vec<f64>> = non_dominated(&pts).into_iter().map(|i| pts[i].clone()).collect();
            prop_assert_eq!(hypervolume(&pts, &r).unwrap(), hypervolume(&nd, &r).unwrap());
        }

        #[test]
        fn translation_equivariant(pts in cloud(2), shift in prop::collection::vec(-3.0f64..3.0, 2)) {
            let r = vec![0.0; 2];
            let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let a = hypervolume(&pts, &r).unwrap();
            let b = hypervolume(&moved, &shift).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn objective_permutation_invariant(pts in cloud(4), seed in 0u64..500) {
            let perm = RngStream::new(seed).permutation(4);
            let permuted: Vec<Vec<f64>> = pts.iter().map(|p| perm.iter().map(|&k| p[k]).collect()).collect();
            let a = hypervolume(&pts, &[0.0; 4]).unwrap();
            let b = hypervolume(&permuted, &[0.0; 4]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn dominance_is_a_strict_partial_order(u in prop::collection::vec(0i8..3, 3),
                                               v in prop::collection::vec(0i8..3, 3),
                                               w in prop::collection::vec(0i8..3, 3)) {
            let f = |x: &Vec<i8>| x.iter().map(|&a| a as f64).collect::<Vec<f64>>();
            let (u, v, w) = (f(&u), f(&v), f(&w));
            prop_assert!(!dominates(&u, &u).unwrap());
            prop_assert!(!(dominates(&u, &v).unwrap() && dominates(&v, &u).unwrap()));
            if dominates(&u, &v).unwrap() && dominates(&v, &w).unwrap() {
                prop_assert!(dominates(&u, &w).unwrap());
            }
        }
    }
}
