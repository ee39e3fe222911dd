//! Region and distance measures between segmentations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Binary pixel mask, row-major like [`crate::Image`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn same_shape(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::validation(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.same_shape(other)?;
        Ok(self.zip_with(other, |a, b| a && b))
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.same_shape(other)?;
        Ok(self.zip_with(other, |a, b| a && !b))
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Even-odd fill of a closed polygon sampled at pixel centres (integer
/// coordinates).
pub fn rasterize(polygon: &[Vec2], width: usize, height: usize) -> Mask {
    let mut mask = Mask::new(width, height);
    let n = polygon.len();
    if n < 3 {
        return mask;
    }
    let mut xs = Vec::new();
    for v in 0..height {
        let y = v as f64;
        xs.clear();
        for i in 0..n {
            let a = polygon[i];
            let b = polygon[(i + 1) % n];
            // half-open in y so shared vertices count once
            if (a.y <= y && b.y > y) || (b.y <= y && a.y > y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(|p, q| p.total_cmp(q));
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1];
            if hi < 0.0 {
                continue;
            }
            let mut u = lo as usize;
            while u < width && (u as f64) < hi {
                mask.set(u, v, true);
                u += 1;
            }
        }
    }
    mask
}

/// Blood pool, myocardium and whole-LV masks of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMasks {
    pub bp: Mask,
    pub myo: Mask,
    pub lv: Mask,
}

impl SegmentationMasks {
    pub fn from_contours(endo: &[Vec2], epi: &[Vec2], width: usize, height: usize) -> Self {
        let lv = rasterize(epi, width, height);
        let bp = rasterize(endo, width, height).and(&lv).expect("same shape");
        let myo = lv.and_not(&bp).expect("same shape");
        Self { bp, myo, lv }
    }
}

pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.same_shape(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Dice over whole stacks, every voxel weighted equally.
pub fn volumetric_dice(a: &[Mask], b: &[Mask]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "stack lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (ma, mb) in a.iter().zip(b) {
        ma.same_shape(mb)?;
        for (&x, &y) in ma.data.iter().zip(&mb.data) {
            total += x as usize + y as usize;
            inter += (x && y) as usize;
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

fn point_segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn point_polyline_distance(p: &Vec2, poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, &poly[i], &poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn directed_mean(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().map(|p| point_polyline_distance(p, b)).sum::<f64>() / a.len() as f64
}

/// Symmetric mean point-to-closed-polyline distance, in the units of the
/// inputs.
pub fn mean_contour_distance(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    for c in [a, b] {
        if c.len() < 8 {
            return Err(Error::validation("contours need at least 8 points"));
        }
        if c.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::validation("contour has non-finite coordinates"));
        }
    }
    Ok(0.5 * (directed_mean(a, b) + directed_mean(b, a)))
}

/// Slice-wise and volumetric comparison of two contour stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub volumetric_dice_lv: f64,
    pub volumetric_dice_bp: f64,
    pub volumetric_dice_myo: f64,
    pub slice_dice_myo: Vec<f64>,
    pub mean_distance_endo_mm: f64,
    pub mean_distance_epi_mm: f64,
    /// Average of the endocardial and epicardial mean distances.
    pub mean_distance_mm: f64,
    pub slice_distance_endo_mm: Vec<f64>,
    pub slice_distance_epi_mm: Vec<f64>,
}

/// A contour pair per slice, in pixel coordinates.
pub struct ContourStack<'a> {
    pub endo: &'a [Vec<Vec2>],
    pub epi: &'a [Vec<Vec2>],
}

pub fn compare_stacks(
    a: &ContourStack<'_>,
    b: &ContourStack<'_>,
    width: usize,
    height: usize,
    spacing_mm: f64,
) -> Result<MetricsReport> {
    let n = a.endo.len();
    if a.epi.len() != n || b.endo.len() != n || b.epi.len() != n {
        return Err(Error::validation("contour stacks have different slice counts"));
    }
    if n == 0 {
        return Err(Error::validation("empty contour stacks"));
    }
    let mut ma = Vec::with_capacity(n);
    let mut mb = Vec::with_capacity(n);
    let mut slice_dice_myo = Vec::with_capacity(n);
    let mut d_endo = Vec::with_capacity(n);
    let mut d_epi = Vec::with_capacity(n);
    for k in 0..n {
        let sa = SegmentationMasks::from_contours(&a.endo[k], &a.epi[k], width, height);
        let sb = SegmentationMasks::from_contours(&b.endo[k], &b.epi[k], width, height);
        slice_dice_myo.push(dice(&sa.myo, &sb.myo)?);
        d_endo.push(mean_contour_distance(&a.endo[k], &b.endo[k])? * spacing_mm);
        d_epi.push(mean_contour_distance(&a.epi[k], &b.epi[k])? * spacing_mm);
        ma.push(sa);
        mb.push(sb);
    }
    let pick = |f: fn(&SegmentationMasks) -> &Mask, s: &[SegmentationMasks]| -> Vec<Mask> {
        s.iter().map(|m| f(m).clone()).collect()
    };
    let vd = |f: fn(&SegmentationMasks) -> &Mask| volumetric_dice(&pick(f, &ma), &pick(f, &mb));
    let endo = d_endo.iter().sum::<f64>() / n as f64;
    let epi = d_epi.iter().sum::<f64>() / n as f64;
    Ok(MetricsReport {
        volumetric_dice_lv: vd(|m| &m.lv)?,
        volumetric_dice_bp: vd(|m| &m.bp)?,
        volumetric_dice_myo: vd(|m| &m.myo)?,
        slice_dice_myo,
        mean_distance_endo_mm: endo,
        mean_distance_epi_mm: epi,
        mean_distance_mm: 0.5 * (endo + epi),
        slice_distance_endo_mm: d_endo,
        slice_distance_epi_mm: d_epi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, side: f64) -> Vec<Vec2> {
        // 8 points so the distance pre-condition holds
        let s = side;
        vec![
            Vec2::new(x0, y0),
            Vec2::new(x0 + s / 2.0, y0),
            Vec2::new(x0 + s, y0),
            Vec2::new(x0 + s, y0 + s / 2.0),
            Vec2::new(x0 + s, y0 + s),
            Vec2::new(x0 + s / 2.0, y0 + s),
            Vec2::new(x0, y0 + s),
            Vec2::new(x0, y0 + s / 2.0),
        ]
    }

    fn circle(c: Vec2, r: f64, n: usize) -> Vec<Vec2> {
        (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                c + Vec2::new(a.cos(), a.sin()) * r
            })
            .collect()
    }

    fn block(w: usize, h: usize, u0: usize, v0: usize, du: usize, dv: usize) -> Mask {
        let mut m = Mask::new(w, h);
        for v in v0..v0 + dv {
            for u in u0..u0 + du {
                m.set(u, v, true);
            }
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = block(30, 30, 0, 0, 10, 10);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let far = block(30, 30, 15, 15, 10, 10);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        let half = block(30, 30, 5, 0, 10, 10);
        assert_close!(dice(&a, &half).unwrap(), 0.5, 1e-15);
        assert_eq!(dice(&Mask::new(4, 4), &Mask::new(4, 4)).unwrap(), 1.0);
        assert!(dice(&Mask::new(4, 4), &Mask::new(4, 5)).is_err());
    }

    #[test]
    fn volumetric_dice_counts_voxels() {
        let a = vec![block(20, 20, 0, 0, 10, 10), block(20, 20, 0, 0, 4, 5)];
        let b = vec![block(20, 20, 5, 0, 10, 10), block(20, 20, 0, 0, 4, 5)];
        // direct count: intersections 50 + 20, totals 200 + 40
        assert_close!(volumetric_dice(&a, &b).unwrap(), 2.0 * 70.0 / 240.0, 1e-15);
        assert_eq!(volumetric_dice(&a, &a).unwrap(), 1.0);
        let mut with_empty = a.clone();
        with_empty.push(Mask::new(20, 20));
        assert_eq!(volumetric_dice(&with_empty, &with_empty).unwrap(), 1.0);
        assert!(volumetric_dice(&a, &b[..1]).is_err());
    }

    #[test]
    fn rasterize_square_counts_pixel_centres() {
        let m = rasterize(&square(1.5, 2.5, 4.0), 10, 10);
        // centres u in {2..5}, v in {3..6}
        assert_eq!(m.count(), 16);
        assert!(m.get(2, 3) && m.get(5, 6) && !m.get(1, 3) && !m.get(6, 6));
    }

    #[test]
    fn concentric_circles_are_one_apart() {
        let a = circle(Vec2::new(50.0, 50.0), 20.0, 2000);
        let b = circle(Vec2::new(50.0, 50.0), 21.0, 2000);
        assert_close!(mean_contour_distance(&a, &b).unwrap(), 1.0, 0.01);
        assert_eq!(mean_contour_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn translated_squares_match_dense_oracle() {
        let a = square(0.0, 0.0, 10.0);
        let b = square(2.0, 0.0, 10.0);
        // dense oracle: sample both boundaries finely, average nearest distances
        let dense = |sq: &[Vec2]| -> Vec<Vec2> {
            let mut out = Vec::new();
            for i in 0..sq.len() {
                let (p, q) = (sq[i], sq[(i + 1) % sq.len()]);
                for k in 0..250 {
                    out.push(p + (q - p) * (k as f64 / 250.0));
                }
            }
            out
        };
        let (da, db) = (dense(&a), dense(&b));
        let nearest = |p: &Vec2, set: &[Vec2]| set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
        let oracle_ab = a.iter().map(|p| nearest(p, &db)).sum::<f64>() / a.len() as f64;
        let oracle_ba = b.iter().map(|p| nearest(p, &da)).sum::<f64>() / b.len() as f64;
        let got = mean_contour_distance(&a, &b).unwrap();
        assert_close!(got, 0.5 * (oracle_ab + oracle_ba), 0.01);
    }

    #[test]
    fn degenerate_contour_rejected() {
        assert!(mean_contour_distance(&square(0.0, 0.0, 1.0)[..4], &square(0.0, 0.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn masks_partition_lv(cx in 20.0..40.0f64, cy in 20.0..40.0f64, r in 4.0..12.0f64, t in 1.0..6.0f64) {
            let c = Vec2::new(cx, cy);
            let m = SegmentationMasks::from_contours(&circle(c, r, 64), &circle(c, r + t, 64), 64, 64);
            prop_assert_eq!(m.bp.count() + m.myo.count(), m.lv.count());
            prop_assert_eq!(m.bp.and(&m.myo).unwrap().count(), 0);
        }

        #[test]
        fn dice_is_symmetric(u0 in 0usize..10, v0 in 0usize..10, u1 in 0usize..10, v1 in 0usize..10) {
            let a = block(20, 20, u0, v0, 8, 6);
            let b = block(20, 20, u1, v1, 5, 9);
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        }

        #[test]
        fn distance_symmetric_and_triangle(r1 in 5.0..15.0f64, r2 in 5.0..15.0f64, r3 in 5.0..15.0f64, dx in -3.0..3.0f64) {
            let c = Vec2::new(30.0, 30.0);
            let a = circle(c, r1, 400);
            let b = circle(c + Vec2::new(dx, 0.0), r2, 400);
            let d = circle(c, r3, 400);
            let ab = mean_contour_distance(&a, &b).unwrap();
            prop_assert!((ab - mean_contour_distance(&b, &a).unwrap()).abs() < 1e-12);
            let ad = mean_contour_distance(&a, &d).unwrap();
            let bd = mean_contour_distance(&b, &d).unwrap();
            prop_assert!(ab <= ad + bd + 0.05);
        }
    }
}
