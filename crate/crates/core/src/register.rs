//! Translational registration of cine onto LGE images by pattern intensity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Image, SlicePlane, Vec2};
use crate::profile::PolarContour;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternIntensityParams {
    pub r: usize,
    pub delta: f64,
}

impl Default for PatternIntensityParams {
    fn default() -> Self {
        Self { r: 5, delta: 0.1 }
    }
}

impl PatternIntensityParams {
    pub fn validate(&self) -> Result<()> {
        if self.r < 1 || !(self.delta > 0.0) {
            return Err(Error::validation("pattern intensity needs r >= 1 and delta > 0"));
        }
        Ok(())
    }

    /// Offsets `(du, dv)` with `0 < du² + dv² <= r²` in one half-plane;
    /// the other half is covered by symmetry.
    fn half_disc(&self) -> Vec<(isize, isize)> {
        let r = self.r as isize;
        let mut out = Vec::new();
        for dv in 0..=r {
            for du in -r..=r {
                if dv == 0 && du <= 0 {
                    continue;
                }
                if du * du + dv * dv <= r * r {
                    out.push((du, dv));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub u0: usize,
    pub v0: usize,
    pub width: usize,
    pub height: usize,
}

/// Pattern intensity of the difference image `i1 - i2`: the mean over
/// pixels of the mean over in-window neighbours within radius `r` of
/// `δ² / (δ² + (d(x) - d(y))²)`.
pub fn pattern_intensity(i1: &Image, i2: &Image, p: &PatternIntensityParams) -> Result<f64> {
    p.validate()?;
    if i1.width != i2.width || i1.height != i2.height {
        return Err(Error::validation("pattern intensity windows differ in size"));
    }
    let diff: Vec<f64> = i1.data.iter().zip(&i2.data).map(|(a, b)| a - b).collect();
    Ok(pattern_intensity_diff(&diff, i1.width, i1.height, p))
}

fn pattern_intensity_diff(diff: &[f64], w: usize, h: usize, p: &PatternIntensityParams) -> f64 {
    let d2 = p.delta * p.delta;
    let mut score = vec![0.0; w * h];
    let mut count = vec![0u32; w * h];
    for (du, dv) in p.half_disc() {
        let dv = dv as usize;
        if dv >= h || du.unsigned_abs() >= w {
            continue;
        }
        let (u_lo, u_hi) = if du >= 0 {
            (0, w - du as usize)
        } else {
            (du.unsigned_abs(), w)
        };
        for v in 0..h - dv {
            let row = v * w;
            let nrow = (v + dv) * w;
            for u in u_lo..u_hi {
                let a = row + u;
                let b = (nrow as isize + u as isize + du) as usize;
                let x = diff[a] - diff[b];
                let term = d2 / (d2 + x * x);
                score[a] += term;
                score[b] += term;
                count[a] += 1;
                count[b] += 1;
            }
        }
    }
    let total: f64 = score
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 1.0 } else { s / c as f64 })
        .sum();
    total / (w * h) as f64
}

/// Bounding box of the contour doubled about its centre and clipped to the
/// image.
pub fn define_roi(epi: &[Vec2], width: usize, height: usize) -> Result<Roi> {
    if epi.is_empty() {
        return Err(Error::validation("cannot define an ROI from an empty contour"));
    }
    let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
    for p in epi {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let c = (lo + hi) / 2.0;
    let ext = hi - lo;
    let (lo2, hi2) = (c - ext, c + ext);
    let clip = |a: f64, b: f64, n: usize| -> (usize, usize) {
        let a = a.floor().max(0.0) as usize;
        let b = (b.ceil().max(0.0) as usize).min(n);
        (a.min(n), b.max(a.min(n)))
    };
    let (u0, u1) = clip(lo2.x, hi2.x, width);
    let (v0, v1) = clip(lo2.y, hi2.y, height);
    if u1 <= u0 || v1 <= v0 {
        return Err(Error::validation("ROI lies outside the image"));
    }
    Ok(Roi {
        u0,
        v0,
        width: u1 - u0,
        height: v1 - v0,
    })
}

/// Candidate shifts ordered so the first strict maximum is the tie-break
/// winner: smallest Euclidean norm, then lexicographic.
pub(crate) fn ordered_shifts(radius: i32) -> Vec<(i32, i32)> {
    let mut out: Vec<(i32, i32)> = (-radius..=radius)
        .flat_map(|du| (-radius..=radius).map(move |dv| (du, dv)))
        .collect();
    out.sort_by_key(|&(du, dv)| (du * du + dv * dv, du, dv));
    out
}

/// Integer shift `(du, dv)` maximising pattern intensity between the cine
/// ROI and the LGE window at the ROI moved by `(du, dv)`: LGE pixel
/// `(u + du, v + dv)` corresponds to cine pixel `(u, v)`.
pub fn register_translation(
    cine: &SlicePlane,
    lge: &SlicePlane,
    roi: &Roi,
    search_radius: u32,
    p: &PatternIntensityParams,
) -> Result<(i32, i32)> {
    p.validate()?;
    if roi.width == 0 || roi.height == 0 {
        return Err(Error::validation("empty ROI"));
    }
    let cine_n = cine.pixels.normalized_unit();
    let lge_n = lge.pixels.normalized_unit();
    let fixed = cine_n
        .window(roi.u0 as i64, roi.v0 as i64, roi.width, roi.height)
        .ok_or_else(|| Error::validation("ROI leaves the cine image"))?;
    let shifts = ordered_shifts(search_radius as i32);
    let scores: Vec<Option<f64>> = shifts
        .par_iter()
        .map(|&(du, dv)| {
            let moving = lge_n.window(
                roi.u0 as i64 + du as i64,
                roi.v0 as i64 + dv as i64,
                roi.width,
                roi.height,
            )?;
            let diff: Vec<f64> = fixed.data.iter().zip(&moving.data).map(|(a, b)| a - b).collect();
            Some(pattern_intensity_diff(&diff, roi.width, roi.height, p))
        })
        .collect();
    let mut best: Option<((i32, i32), f64)> = None;
    for (&s, score) in shifts.iter().zip(&scores) {
        if let Some(v) = score {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((s, *v));
            }
        }
    }
    best.map(|(s, _)| s).ok_or(Error::RegistrationFailure)
}

/// Rigid in-plane translation of a contour.
pub fn propagate_contour(points: &[Vec2], shift: (i32, i32)) -> Vec<Vec2> {
    let s = Vec2::new(shift.0 as f64, shift.1 as f64);
    points.iter().map(|p| p + s).collect()
}

pub fn propagate_polar(contour: &PolarContour, shift: (i32, i32)) -> PolarContour {
    contour.translated(Vec2::new(shift.0 as f64, shift.1 as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SliceLabel, Vec3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation with a full disc per pixel.
    fn naive_pi(a: &Image, b: &Image, p: &PatternIntensityParams) -> f64 {
        let (w, h) = (a.width as isize, a.height as isize);
        let r = p.r as isize;
        let d2 = p.delta * p.delta;
        let diff = |u: isize, v: isize| a.get(u as usize, v as usize) - b.get(u as usize, v as usize);
        let mut total = 0.0;
        for v in 0..h {
            for u in 0..w {
                let (mut s, mut n) = (0.0, 0usize);
                for dv in -r..=r {
                    for du in -r..=r {
                        if (du == 0 && dv == 0) || du * du + dv * dv > r * r {
                            continue;
                        }
                        let (x, y) = (u + du, v + dv);
                        if x < 0 || y < 0 || x >= w || y >= h {
                            continue;
                        }
                        let e = diff(u, v) - diff(x, y);
                        s += d2 / (d2 + e * e);
                        n += 1;
                    }
                }
                total += if n == 0 { 1.0 } else { s / n as f64 };
            }
        }
        total / (w * h) as f64
    }

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    fn plane(img: Image) -> SlicePlane {
        SlicePlane::new(img, Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 7.0, SliceLabel::Sa).unwrap()
    }

    #[test]
    fn identity_and_offset_give_one() {
        let p = PatternIntensityParams::default();
        let a = random_image(1, 32, 32);
        assert_eq!(pattern_intensity(&a, &a, &p).unwrap(), 1.0);
        let b = Image::from_fn(32, 32, |u, v| a.get(u, v) + 0.37);
        assert_eq!(pattern_intensity(&a, &b, &p).unwrap(), 1.0);
    }

    #[test]
    fn shifted_window_scores_lower() {
        let p = PatternIntensityParams::default();
        let big = random_image(5, 12, 12);
        let a = big.window(0, 0, 8, 8).unwrap();
        let b = big.window(2, 0, 8, 8).unwrap();
        let shifted = pattern_intensity(&a, &b, &p).unwrap();
        assert!(shifted < pattern_intensity(&a, &a, &p).unwrap());
        assert_close!(shifted, naive_pi(&a, &b, &p), 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = PatternIntensityParams::default();
        let r = pattern_intensity(&random_image(1, 8, 8), &random_image(1, 8, 9), &p);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn roi_examples() {
        let bbox = [Vec2::new(10.0, 20.0), Vec2::new(30.0, 40.0), Vec2::new(20.0, 30.0)];
        let roi = define_roi(&bbox, 100, 100).unwrap();
        assert_eq!(roi, Roi { u0: 0, v0: 10, width: 40, height: 40 });
        let corner = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 10.0)];
        let roi = define_roi(&corner, 12, 12).unwrap();
        assert!(roi.u0 + roi.width <= 12 && roi.v0 + roi.height <= 12);
        let mid = [Vec2::new(40.0, 40.0), Vec2::new(50.0, 56.0)];
        let roi = define_roi(&mid, 100, 100).unwrap();
        assert_eq!(roi.width * roi.height, 4 * 10 * 16);
        assert!(define_roi(&[], 10, 10).is_err());
    }

    #[test]
    fn recovers_constructed_shift() {
        let p = PatternIntensityParams::default();
        // smooth blobs so the registration basin is wide
        let field = |u: f64, v: f64| {
            ((u - 30.0).powi(2) + (v - 28.0).powi(2)).sqrt().min(14.0) + 0.3 * (u * 0.4).sin()
        };
        let cine = plane(Image::from_fn(64, 64, |u, v| field(u as f64, v as f64)));
        let lge = plane(Image::from_fn(64, 64, |u, v| field(u as f64 - 3.0, v as f64 + 2.0)));
        let roi = Roi { u0: 16, v0: 14, width: 28, height: 28 };
        assert_eq!(register_translation(&cine, &lge, &roi, 6, &p).unwrap(), (3, -2));
        assert_eq!(register_translation(&cine, &cine, &roi, 6, &p).unwrap(), (0, 0));
    }

    #[test]
    fn all_candidates_outside_fails() {
        let p = PatternIntensityParams::default();
        let img = plane(random_image(2, 10, 10));
        let roi = Roi { u0: 0, v0: 0, width: 10, height: 10 };
        let small = plane(random_image(2, 6, 6));
        assert!(matches!(
            register_translation(&img, &small, &roi, 1, &p),
            Err(Error::RegistrationFailure)
        ));
    }

    #[test]
    fn propagation_is_rigid() {
        let pts = vec![Vec2::new(1.0, 2.0), Vec2::new(3.0, 5.0)];
        assert_eq!(propagate_contour(&pts, (0, 0)), pts);
        assert_eq!(propagate_contour(&pts, (2, -1))[1], Vec2::new(5.0, 4.0));
    }

    proptest! {
        #[test]
        fn optimized_matches_naive(seed in 0u64..500, r in 1usize..6) {
            let p = PatternIntensityParams { r, delta: 0.1 };
            let a = random_image(seed, 16, 16);
            let b = random_image(seed + 1000, 16, 16);
            let fast = pattern_intensity(&a, &b, &p).unwrap();
            prop_assert!((fast - naive_pi(&a, &b, &p)).abs() < 1e-12);
            prop_assert!(fast > 0.0 && fast <= 1.0);
            prop_assert_eq!(fast, pattern_intensity(&b, &a, &p).unwrap());
        }

        #[test]
        fn argmax_invariant_to_constant(c in -0.5..0.5f64) {
            let p = PatternIntensityParams::default();
            let field = |u: f64, v: f64| ((u - 20.0).powi(2) + (v - 22.0).powi(2)).sqrt().min(9.0);
            let cine = plane(Image::from_fn(44, 44, |u, v| field(u as f64, v as f64)));
            let lge = plane(Image::from_fn(44, 44, |u, v| field(u as f64 - 1.0, v as f64 - 2.0)));
            let lge_c = plane(Image::from_fn(44, 44, |u, v| field(u as f64 - 1.0, v as f64 - 2.0) + c));
            let roi = Roi { u0: 10, v0: 12, width: 20, height: 20 };
            prop_assert_eq!(
                register_translation(&cine, &lge, &roi, 3, &p).unwrap(),
                register_translation(&cine, &lge_c, &roi, 3, &p).unwrap()
            );
        }
    }
}
