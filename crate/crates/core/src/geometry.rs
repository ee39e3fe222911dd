//! Pose arithmetic for image planes.
//!
//! Every image in a study is a [`SlicePlane`]: a 2D pixel grid with a full
//! 3D pose. Pixel `(u, v)` (column `u`, row `v`) sits at
//! `origin + u·s·row_dir + v·s·col_dir`, so integer coordinates are pixel
//! centres and the footprint is the rectangle `[0, w-1] × [0, h-1]`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const COPLANAR_TOL: f64 = 1e-6;

/// Row-major scalar image, `data[v * width + u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    /// Bilinear interpolation at continuous pixel coordinates; `None` outside
    /// the footprint of pixel centres.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
            return None;
        }
        let u0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let v0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let top = self.get(u0, v0) * (1.0 - fu) + self.get(u1, v0) * fu;
        let bottom = self.get(u0, v1) * (1.0 - fu) + self.get(u1, v1) * fu;
        Some(top * (1.0 - fv) + bottom * fv)
    }

    /// Copy of the rectangle starting at `(u0, v0)`; `None` if it leaves the image.
    pub fn window(&self, u0: i64, v0: i64, width: usize, height: usize) -> Option<Image> {
        if u0 < 0 || v0 < 0 {
            return None;
        }
        let (u0, v0) = (u0 as usize, v0 as usize);
        if u0 + width > self.width || v0 + height > self.height {
            return None;
        }
        let mut data = Vec::with_capacity(width * height);
        for v in v0..v0 + height {
            data.extend_from_slice(&self.data[v * self.width + u0..v * self.width + u0 + width]);
        }
        Some(Image {
            width,
            height,
            data,
        })
    }

    /// Linear map of the intensity range onto `[0, 1]`. Constant images map to 0.
    pub fn normalized_unit(&self) -> Image {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data.iter().map(|&x| (x - lo) / span).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceLabel {
    Sa,
    La4c,
    La2c,
}

impl SliceLabel {
    pub fn is_long_axis(self) -> bool {
        !matches!(self, SliceLabel::Sa)
    }
}

/// A 2D pixel grid with a 3D pose (millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlane {
    pub pixels: Image,
    pub origin: Vec3,
    pub row_dir: Vec3,
    pub col_dir: Vec3,
    pub pixel_spacing: f64,
    pub thickness: f64,
    pub label: SliceLabel,
}

impl SlicePlane {
    pub fn new(
        pixels: Image,
        origin: Vec3,
        row_dir: Vec3,
        col_dir: Vec3,
        pixel_spacing: f64,
        thickness: f64,
        label: SliceLabel,
    ) -> Result<Self> {
        let plane = Self {
            pixels,
            origin,
            row_dir,
            col_dir,
            pixel_spacing,
            thickness,
            label,
        };
        plane.validate()?;
        Ok(plane)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.row_dir.norm() - 1.0).abs() > ORTHO_TOL
            || (self.col_dir.norm() - 1.0).abs() > ORTHO_TOL
        {
            return Err(Error::validation("plane direction cosines must be unit vectors"));
        }
        if self.row_dir.dot(&self.col_dir).abs() > ORTHO_TOL {
            return Err(Error::validation("plane direction cosines must be orthogonal"));
        }
        if !(self.pixel_spacing > 0.0) {
            return Err(Error::validation("pixel spacing must be positive"));
        }
        if !(self.thickness >= 0.0) {
            return Err(Error::validation("slice thickness must be non-negative"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    pub fn normal(&self) -> Vec3 {
        self.row_dir.cross(&self.col_dir)
    }

    /// Pixel coordinates of the orthogonal projection of `p` onto the plane.
    pub fn world_to_image(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(
            d.dot(&self.row_dir) / self.pixel_spacing,
            d.dot(&self.col_dir) / self.pixel_spacing,
        )
    }

    pub fn image_to_world(&self, uv: &Vec2) -> Vec3 {
        self.origin + self.row_dir * (uv.x * self.pixel_spacing) + self.col_dir * (uv.y * self.pixel_spacing)
    }

    /// Signed distance of `p` from the plane along its normal.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.normal())
    }

    /// Same pixels, origin moved in-plane by `(du, dv)` pixels.
    pub fn translated_in_plane(&self, du: i32, dv: i32) -> SlicePlane {
        let mut out = self.clone();
        out.origin += self.row_dir * (du as f64 * self.pixel_spacing)
            + self.col_dir * (dv as f64 * self.pixel_spacing);
        out
    }

    pub fn sample_world(&self, p: &Vec3) -> Option<f64> {
        let uv = self.world_to_image(p);
        self.pixels.bilinear(uv.x, uv.y)
    }

    /// Resample onto a grid with the requested spacing covering the same
    /// physical extent. The origin (centre of pixel (0,0)) is kept.
    pub fn resampled(&self, spacing: f64) -> Result<SlicePlane> {
        if !(spacing > 0.0) {
            return Err(Error::validation("resampling spacing must be positive"));
        }
        let scale = self.pixel_spacing / spacing;
        let width = (((self.width() - 1) as f64 * scale).floor() as usize) + 1;
        let height = (((self.height() - 1) as f64 * scale).floor() as usize) + 1;
        let pixels = Image::from_fn(width, height, |u, v| {
            self.pixels
                .bilinear(u as f64 / scale, v as f64 / scale)
                .unwrap_or(0.0)
        });
        Ok(SlicePlane {
            pixels,
            pixel_spacing: spacing,
            ..self.clone()
        })
    }
}

/// Sampling ray: `length` points starting at `start`, `step` mm apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub start: Vec3,
    pub direction: Vec3,
    pub step: f64,
    pub length: usize,
}

impl Ray {
    pub fn new(start: Vec3, direction: Vec3, step: f64, length: usize) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) {
            return Err(Error::validation("ray direction must be non-zero"));
        }
        if !(step > 0.0) {
            return Err(Error::validation("ray step must be positive"));
        }
        if length < 2 {
            return Err(Error::validation("ray must have at least two samples"));
        }
        Ok(Self {
            start,
            direction: direction / n,
            step,
            length,
        })
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.start + self.direction * (i as f64 * self.step)
    }
}

/// Bilinear samples along `ray`; samples outside the image footprint are `None`.
pub fn sample_along(img: &SlicePlane, ray: &Ray) -> Result<Vec<Option<f64>>> {
    let n = img.normal();
    let off_dir = ray.direction.dot(&n).abs();
    let off_start = img.signed_distance(&ray.start).abs() / img.pixel_spacing;
    if off_dir > COPLANAR_TOL || off_start > COPLANAR_TOL {
        return Err(Error::NotCoplanar(off_dir.max(off_start)));
    }
    Ok((0..ray.length)
        .map(|i| img.sample_world(&ray.point(i)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec3,
    pub b: Vec3,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Intersection line of two image planes clipped to both rectangular
/// footprints. `None` for parallel planes or disjoint footprints.
pub fn intersect_planes(a: &SlicePlane, b: &SlicePlane) -> Option<Segment> {
    let na = a.normal();
    let nb = b.normal();
    let dir = na.cross(&nb);
    let dir_norm = dir.norm();
    if dir_norm < 1e-12 {
        return None;
    }
    let dir = dir / dir_norm;
    let ha = na.dot(&a.origin);
    let hb = nb.dot(&b.origin);
    let nab = na.dot(&nb);
    let det = na.dot(&na) * nb.dot(&nb) - nab * nab;
    let p0 = na * ((ha * nb.dot(&nb) - hb * nab) / det) + nb * ((hb * na.dot(&na) - ha * nab) / det);

    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for plane in [a, b] {
        let (l, h) = clip_line_to_footprint(plane, &p0, &dir)?;
        lo = lo.max(l);
        hi = hi.min(h);
    }
    if !(lo <= hi) {
        return None;
    }
    Some(Segment {
        a: p0 + dir * lo,
        b: p0 + dir * hi,
    })
}

/// Parameter interval (mm along `dir`) for which `p0 + s·dir` lies inside the
/// footprint of `plane` (Liang–Barsky on the pixel rectangle).
fn clip_line_to_footprint(plane: &SlicePlane, p0: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let start = plane.world_to_image(p0);
    let step = Vec2::new(
        dir.dot(&plane.row_dir) / plane.pixel_spacing,
        dir.dot(&plane.col_dir) / plane.pixel_spacing,
    );
    let bounds = [
        (start.x, step.x, (plane.width() - 1) as f64),
        (start.y, step.y, (plane.height() - 1) as f64),
    ];
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (s0, ds, max) in bounds {
        if ds.abs() < 1e-15 {
            if s0 < 0.0 || s0 > max {
                return None;
            }
            continue;
        }
        let t0 = (0.0 - s0) / ds;
        let t1 = (max - s0) / ds;
        let (t0, t1) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(t0);
        hi = hi.min(t1);
    }
    (lo <= hi).then_some((lo, hi))
}

/// Coordinate system of a reference image plane in pixel units: `x`, `y`
/// along the plane's row/column directions and `z` along its normal, all
/// measured in multiples of the plane's pixel spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFrame {
    pub origin: Vec3,
    pub x_dir: Vec3,
    pub y_dir: Vec3,
    pub z_dir: Vec3,
    pub spacing: f64,
}

impl ReferenceFrame {
    pub fn from_plane(plane: &SlicePlane) -> Self {
        Self {
            origin: plane.origin,
            x_dir: plane.row_dir,
            y_dir: plane.col_dir,
            z_dir: plane.normal(),
            spacing: plane.pixel_spacing,
        }
    }

    pub fn to_frame(&self, p: &Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(&self.x_dir), d.dot(&self.y_dir), d.dot(&self.z_dir)) / self.spacing
    }

    pub fn to_world(&self, q: &Vec3) -> Vec3 {
        self.origin + (self.x_dir * q.x + self.y_dir * q.y + self.z_dir * q.z) * self.spacing
    }

    /// Vector (not point) conversion.
    pub fn dir_to_frame(&self, d: &Vec3) -> Vec3 {
        Vec3::new(d.dot(&self.x_dir), d.dot(&self.y_dir), d.dot(&self.z_dir))
    }
}

/// Mean of a point list.
pub fn centroid2(points: &[Vec2]) -> Option<Vec2> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec2::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

pub fn centroid3(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

/// Parameters `s` at which the line `origin + s·dir` crosses the edges of
/// the closed polygon, sorted ascending. Each edge is treated as half-open
/// so a crossing through a vertex is reported once.
pub fn line_polygon_crossings(origin: &Vec2, dir: &Vec2, polygon: &[Vec2]) -> Vec<f64> {
    let n = polygon.len();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        let e = b - a;
        let denom = dir.x * e.y - dir.y * e.x;
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = a - origin;
        let s = (w.x * e.y - w.y * e.x) / denom;
        let t = (w.x * dir.y - w.y * dir.x) / denom;
        if (0.0..1.0).contains(&t) {
            out.push(s);
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Distance from `center` to the polygon along the unit direction `dir`
/// (nearest forward crossing).
pub fn radial_distance(center: &Vec2, dir: &Vec2, polygon: &[Vec2]) -> Option<f64> {
    line_polygon_crossings(center, dir, polygon)
        .into_iter()
        .find(|&s| s > 0.0)
}

/// Unit direction in pixel coordinates for angle `theta` (radians, measured
/// from +u towards +v).
#[inline]
pub fn angle_dir(theta: f64) -> Vec2 {
    Vec2::new(theta.cos(), theta.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axial_plane(width: usize, height: usize, z: f64) -> SlicePlane {
        SlicePlane::new(
            Image::filled(width, height, 0.0),
            Vec3::new(0.0, 0.0, z),
            Vec3::x(),
            Vec3::y(),
            1.0,
            7.0,
            SliceLabel::Sa,
        )
        .unwrap()
    }

    #[test]
    fn origin_maps_to_zero() {
        let mut plane = axial_plane(10, 10, 3.0);
        plane.pixel_spacing = 1.5;
        let uv = plane.world_to_image(&plane.origin);
        assert_eq!(uv, Vec2::zeros());
        let p = plane.origin + plane.row_dir * (3.0 * 1.5);
        let uv = plane.world_to_image(&p);
        assert_close!(uv.x, 3.0, 1e-12);
        assert_close!(uv.y, 0.0, 1e-12);
    }

    #[test]
    fn rejects_non_orthogonal_pose() {
        let err = SlicePlane::new(
            Image::filled(2, 2, 0.0),
            Vec3::zeros(),
            Vec3::x(),
            Vec3::new(0.1, 1.0, 0.0).normalize(),
            1.0,
            1.0,
            SliceLabel::Sa,
        );
        assert!(err.is_err());
    }

    #[test]
    fn parallel_planes_do_not_intersect() {
        let a = axial_plane(10, 10, 0.0);
        let b = axial_plane(10, 10, 5.0);
        assert!(intersect_planes(&a, &b).is_none());
    }

    #[test]
    fn axis_aligned_intersection_is_clipped() {
        // z = 0 plane spanning [0, 99]², and x = 50 plane spanning y ∈ [0, 99], z ∈ [-20, 79].
        let a = axial_plane(100, 100, 0.0);
        let b = SlicePlane::new(
            Image::filled(100, 100, 0.0),
            Vec3::new(50.0, 0.0, -20.0),
            Vec3::y(),
            Vec3::z(),
            1.0,
            7.0,
            SliceLabel::La4c,
        )
        .unwrap();
        let seg = intersect_planes(&a, &b).unwrap();
        let (lo, hi) = if seg.a.y < seg.b.y { (seg.a, seg.b) } else { (seg.b, seg.a) };
        assert_close!(lo.x, 50.0, 1e-9);
        assert_close!(lo.z, 0.0, 1e-9);
        assert_close!(lo.y, 0.0, 1e-9);
        assert_close!(hi.y, 99.0, 1e-9);
    }

    #[test]
    fn disjoint_footprints_do_not_intersect() {
        let a = axial_plane(10, 10, 0.0);
        let b = SlicePlane::new(
            Image::filled(10, 10, 0.0),
            Vec3::new(50.0, 0.0, -5.0),
            Vec3::y(),
            Vec3::z(),
            1.0,
            7.0,
            SliceLabel::La4c,
        )
        .unwrap();
        assert!(intersect_planes(&a, &b).is_none());
    }

    #[test]
    fn constant_image_samples_constant() {
        let mut plane = axial_plane(20, 20, 0.0);
        plane.pixels = Image::filled(20, 20, 7.0);
        let ray = Ray::new(Vec3::new(2.0, 3.0, 0.0), Vec3::new(1.0, 1.0, 0.0), 0.7, 10).unwrap();
        let s = sample_along(&plane, &ray).unwrap();
        assert!(s.iter().all(|x| *x == Some(7.0)));
    }

    #[test]
    fn linear_ramp_is_reproduced_exactly() {
        let mut plane = axial_plane(20, 20, 0.0);
        plane.pixels = Image::from_fn(20, 20, |u, _| u as f64);
        let ray = Ray::new(Vec3::new(1.0, 4.0, 0.0), Vec3::x(), 1.0, 12).unwrap();
        let s = sample_along(&plane, &ray).unwrap();
        for (i, x) in s.iter().enumerate() {
            assert_eq!(*x, Some(1.0 + i as f64));
        }
    }

    #[test]
    fn out_of_footprint_samples_are_invalid() {
        let plane = axial_plane(5, 5, 0.0);
        let ray = Ray::new(Vec3::new(2.0, 2.0, 0.0), Vec3::x(), 1.0, 5).unwrap();
        let s = sample_along(&plane, &ray).unwrap();
        assert!(s[2].is_some());
        assert!(s[3].is_none() && s[4].is_none());
    }

    #[test]
    fn non_coplanar_ray_is_rejected() {
        let plane = axial_plane(5, 5, 0.0);
        let ray = Ray::new(Vec3::new(2.0, 2.0, 0.0), Vec3::new(1.0, 0.0, 0.1), 1.0, 5).unwrap();
        assert!(matches!(sample_along(&plane, &ray), Err(Error::NotCoplanar(_))));
    }

    #[test]
    fn radial_distance_to_square() {
        let square = [
            Vec2::new(-2.0, -2.0),
            Vec2::new(2.0, -2.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(-2.0, 2.0),
        ];
        let r = radial_distance(&Vec2::zeros(), &Vec2::x(), &square).unwrap();
        assert_close!(r, 2.0, 1e-12);
        let diag = radial_distance(&Vec2::zeros(), &Vec2::new(1.0, 1.0).normalize(), &square).unwrap();
        assert_close!(diag, 8f64.sqrt(), 1e-12);
    }

    #[test]
    fn resampling_keeps_physical_positions() {
        let mut plane = axial_plane(11, 11, 0.0);
        plane.pixels = Image::from_fn(11, 11, |u, v| u as f64 + 2.0 * v as f64);
        let fine = plane.resampled(0.5).unwrap();
        assert_eq!(fine.width(), 21);
        let p = Vec3::new(3.5, 2.5, 0.0);
        assert_close!(fine.sample_world(&p).unwrap(), plane.sample_world(&p).unwrap(), 1e-12);
    }

    #[test]
    fn reference_frame_round_trip() {
        let plane = SlicePlane::new(
            Image::filled(4, 4, 0.0),
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            1.34,
            7.0,
            SliceLabel::La2c,
        )
        .unwrap();
        let frame = ReferenceFrame::from_plane(&plane);
        let p = Vec3::new(-4.0, 9.5, 0.25);
        let q = frame.to_world(&frame.to_frame(&p));
        assert!((p - q).norm() < 1e-12);
    }
}
