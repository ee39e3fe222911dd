//! In-plane realignment of SA slices against LA slices.
//!
//! Each SA/LA pair shares an intersection segment that both images should
//! agree on. Slices are shifted by whole pixels to minimise the normalised
//! mean squared difference of the two intensity profiles along those
//! segments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersect_planes, SlicePlane};
use crate::register::ordered_shifts;

/// Fewest paired samples for a segment to count.
pub const MIN_SEGMENT_SAMPLES: usize = 8;

/// Cost charged for a segment that cannot be compared: the largest value
/// normalised MSSD can take.
pub const UNUSABLE_SEGMENT_COST: f64 = 4.0;

fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (sd > 1e-12 * mean.abs().max(1.0)).then(|| x.iter().map(|v| (v - mean) / sd).collect())
}

/// Mean squared difference of the two vectors after standardising each to
/// zero mean and unit standard deviation.
pub fn normalized_mssd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation("sample vectors differ in length"));
    }
    if a.len() < MIN_SEGMENT_SAMPLES {
        return Err(Error::validation(format!(
            "need at least {MIN_SEGMENT_SAMPLES} samples, got {}",
            a.len()
        )));
    }
    let sa = standardize(a).ok_or_else(|| Error::DegenerateSample("constant first vector".into()))?;
    let sb = standardize(b).ok_or_else(|| Error::DegenerateSample("constant second vector".into()))?;
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Paired samples of two images along their intersection, one SA pixel apart.
fn segment_samples(a: &SlicePlane, b: &SlicePlane) -> Option<(Vec<f64>, Vec<f64>)> {
    let seg = intersect_planes(a, b)?;
    let len = seg.length();
    let step = a.pixel_spacing;
    let n = (len / step).floor() as usize + 1;
    let dir = if len > 0.0 { (seg.b - seg.a) / len } else { return None };
    let (mut xa, mut xb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let p = seg.a + dir * (i as f64 * step);
        if let (Some(va), Some(vb)) = (a.sample_world(&p), b.sample_world(&p)) {
            xa.push(va);
            xb.push(vb);
        }
    }
    (xa.len() >= MIN_SEGMENT_SAMPLES).then_some((xa, xb))
}

/// Mismatch of `moving` against every image in `fixed`; `None` when no
/// segment is usable.
fn pair_cost(moving: &SlicePlane, fixed: &[&SlicePlane]) -> Option<f64> {
    let mut total = 0.0;
    let mut usable = false;
    for f in fixed {
        match segment_samples(moving, f).and_then(|(a, b)| normalized_mssd(&a, &b).ok()) {
            Some(c) => {
                total += c;
                usable = true;
            }
            None => total += UNUSABLE_SEGMENT_COST,
        }
    }
    usable.then_some(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Shift applied to each SA slice, pixels.
    pub sa_shifts: Vec<(i32, i32)>,
    pub sa_unalignable: Vec<bool>,
    /// Shift applied to each LA slice; all zero unless the LA pass ran.
    pub la_shifts: Vec<(i32, i32)>,
    /// Total residual after initialisation and after every pass.
    pub residuals: Vec<f64>,
    pub passes: usize,
}

impl AlignmentResult {
    pub fn residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&0.0)
    }

    pub fn apply(&self, sa: &[SlicePlane]) -> Vec<SlicePlane> {
        sa.iter()
            .zip(&self.sa_shifts)
            .map(|(s, &(du, dv))| s.translated_in_plane(du, dv))
            .collect()
    }

    pub fn apply_la(&self, la: &[SlicePlane]) -> Vec<SlicePlane> {
        la.iter()
            .zip(&self.la_shifts)
            .map(|(s, &(du, dv))| s.translated_in_plane(du, dv))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub search_radius: u32,
    pub max_passes: usize,
    /// Run one pass moving LA slices against the corrected SA stack.
    pub la_pass: bool,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            search_radius: 10,
            max_passes: 3,
            la_pass: false,
        }
    }
}

/// Best shift of `plane` against `fixed`; ties to the smallest shift.
fn best_shift(plane: &SlicePlane, fixed: &[&SlicePlane], candidates: &[(i32, i32)]) -> Option<((i32, i32), f64)> {
    let costs: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|&(du, dv)| pair_cost(&plane.translated_in_plane(du, dv), fixed))
        .collect();
    let mut best: Option<((i32, i32), f64)> = None;
    for (&s, c) in candidates.iter().zip(costs) {
        if let Some(c) = c {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((s, c));
            }
        }
    }
    best
}

fn total_residual(sa: &[SlicePlane], la: &[&SlicePlane], usable: &[bool]) -> f64 {
    sa.iter()
        .zip(usable)
        .filter(|(_, &u)| u)
        .map(|(s, _)| pair_cost(s, la).unwrap_or(UNUSABLE_SEGMENT_COST * la.len() as f64))
        .sum()
}

/// Greedy exhaustive realignment. Shifts are absolute (relative to the
/// input poses) and bounded by the search radius.
pub fn realign(sa: &[SlicePlane], la: &[SlicePlane], params: &AlignParams) -> Result<AlignmentResult> {
    let candidates = ordered_shifts(params.search_radius as i32);
    let la_ref: Vec<&SlicePlane> = la.iter().collect();
    let mut shifts = vec![(0, 0); sa.len()];
    let mut usable = vec![false; sa.len()];
    let mut current: Vec<SlicePlane> = sa.to_vec();
    for (k, s) in sa.iter().enumerate() {
        usable[k] = !la.is_empty() && pair_cost(s, &la_ref).is_some();
    }
    let mut residuals = vec![total_residual(&current, &la_ref, &usable)];
    let mut passes = 0;
    let mut la_shifts = vec![(0, 0); la.len()];
    while passes < params.max_passes {
        passes += 1;
        let mut moved = false;
        for k in 0..sa.len() {
            if !usable[k] {
                continue;
            }
            if let Some((s, _)) = best_shift(&sa[k], &la_ref, &candidates) {
                if s != shifts[k] {
                    shifts[k] = s;
                    current[k] = sa[k].translated_in_plane(s.0, s.1);
                    moved = true;
                }
            }
        }
        residuals.push(total_residual(&current, &la_ref, &usable));
        if !moved {
            break;
        }
    }
    if params.la_pass && passes < params.max_passes && !la.is_empty() {
        passes += 1;
        let sa_ref: Vec<&SlicePlane> = current
            .iter()
            .zip(&usable)
            .filter(|(_, &u)| u)
            .map(|(s, _)| s)
            .collect();
        let mut la_now: Vec<SlicePlane> = la.to_vec();
        for (j, l) in la.iter().enumerate() {
            let stay = pair_cost(l, &sa_ref);
            if let (Some((s, c)), Some(c0)) = (best_shift(l, &sa_ref, &candidates), stay) {
                if c < c0 {
                    la_shifts[j] = s;
                    la_now[j] = l.translated_in_plane(s.0, s.1);
                }
            }
        }
        let la_now_ref: Vec<&SlicePlane> = la_now.iter().collect();
        residuals.push(total_residual(&current, &la_now_ref, &usable));
    }
    Ok(AlignmentResult {
        sa_shifts: shifts,
        sa_unalignable: usable.iter().map(|u| !u).collect(),
        la_shifts,
        residuals,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mssd_examples() {
        let a: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() + i as f64 * 0.1).collect();
        assert_close!(normalized_mssd(&a, &a).unwrap(), 0.0, 1e-15);
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 5.0).collect();
        assert_close!(normalized_mssd(&a, &b).unwrap(), 0.0, 1e-12);

        let ramp: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let rev: Vec<f64> = ramp.iter().rev().copied().collect();
        // standardised ramp z_i = (i - 3.5)/sd; reversed is -z_i; mean of (2 z_i)^2 = 4
        assert_close!(normalized_mssd(&ramp, &rev).unwrap(), 4.0, 1e-12);
    }

    #[test]
    fn mssd_errors() {
        let c = vec![2.0; 9];
        let a: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert!(matches!(normalized_mssd(&c, &a), Err(Error::DegenerateSample(_))));
        assert!(normalized_mssd(&a[..5], &a[..5]).is_err());
        assert!(normalized_mssd(&a[..8], &a[..7]).is_err());
    }

    #[test]
    fn empty_la_flags_every_slice() {
        let spec = crate::phantom::PhantomSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let p = crate::phantom::generate(&spec).unwrap();
        let r = realign(&p.lge_sa, &[], &AlignParams::default()).unwrap();
        assert!(r.sa_unalignable.iter().all(|&u| u));
        assert!(r.sa_shifts.iter().all(|&s| s == (0, 0)));
    }

    proptest! {
        #[test]
        fn mssd_bounded_and_symmetric(a in proptest::collection::vec(-10.0..10.0f64, 8..40), seed in 0u64..100) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.3 + ((i as u64 * 31 + seed) % 7) as f64).collect();
            if let (Ok(x), Ok(y)) = (normalized_mssd(&a, &b), normalized_mssd(&b, &a)) {
                prop_assert!((0.0..=4.0 + 1e-12).contains(&x));
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
