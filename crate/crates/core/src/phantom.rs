//! Procedural LGE/cine phantom of the left ventricle with analytic ground truth.
//!
//! The ventricle is a truncated shell whose long axis is the world `z` axis
//! (base plane at `z = 0`, apex towards negative `z`). Cross-sections are
//! ellipses with semi-axes `r·(1+e)` along `x` and `r·(1-e)` along `y`. The
//! endocardial radius tapers linearly from the base to the start of a
//! spherical apical cap; the epicardium is offset by the wall thickness.
//!
//! Every rendered pixel is the mean of the tissue intensities sampled across
//! the slice thickness (one sample per voxel step) and a 3×3 in-plane grid,
//! plus the mean of independent Gaussian voxel noise across the thickness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Image, SliceLabel, SlicePlane, Vec2, Vec3};
use crate::metrics::Mask;
use crate::profile::PolarContour;

const IN_PLANE_SUPERSAMPLE: usize = 3;
const TRUTH_POINTS: usize = 360;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfarctSpec {
    pub azimuth_center_deg: f64,
    pub azimuth_span_deg: f64,
    pub long_extent_mm: f64,
    pub transmurality: f64,
}

impl Default for InfarctSpec {
    fn default() -> Self {
        Self {
            azimuth_center_deg: 45.0,
            azimuth_span_deg: 100.0,
            long_extent_mm: 50.0,
            transmurality: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TissueIntensities {
    pub blood: f64,
    pub myo: f64,
    pub infarct: f64,
    pub background: f64,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            blood: 180.0,
            myo: 60.0,
            infarct: 220.0,
            background: 180.0,
        }
    }
}

/// How the cine frame differs from the LGE frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CinePhase {
    pub wall_scale: f64,
    pub endo_scale: f64,
    /// Respiratory offset of the whole heart, in-plane (x, y), mm.
    pub offset_mm: [f64; 2],
}

impl Default for CinePhase {
    fn default() -> Self {
        Self {
            wall_scale: 1.15,
            endo_scale: 0.95,
            offset_mm: [2.4, 3.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub voxel_mm: f64,
    pub n_sa_slices: usize,
    pub slice_thickness_mm: f64,
    pub slice_gap_mm: f64,
    /// Base plane to epicardial apex.
    pub lv_long_axis_mm: f64,
    pub endo_radius_base_mm: f64,
    /// Endocardial radius where the linear taper meets the apical cap.
    pub endo_radius_apex_mm: f64,
    pub wall_thickness_mm: f64,
    pub ellipticity: f64,
    pub infarct: Option<InfarctSpec>,
    pub intensities: TissueIntensities,
    /// Voxel noise standard deviation as a fraction of the blood mean.
    pub noise_sigma: f64,
    pub fov_mm: f64,
    pub la2c_azimuth_deg: f64,
    pub la4c_azimuth_deg: f64,
    pub cine: CinePhase,
    /// Largest injected in-plane SA misalignment, pixels.
    pub misalignment_px: u32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            voxel_mm: 1.34,
            n_sa_slices: 8,
            slice_thickness_mm: 7.0,
            slice_gap_mm: 3.0,
            lv_long_axis_mm: 95.0,
            endo_radius_base_mm: 25.0,
            endo_radius_apex_mm: 14.0,
            wall_thickness_mm: 10.0,
            ellipticity: 0.1,
            infarct: Some(InfarctSpec::default()),
            intensities: TissueIntensities::default(),
            noise_sigma: 0.05,
            fov_mm: 200.0,
            la2c_azimuth_deg: 0.0,
            la4c_azimuth_deg: 60.0,
            cine: CinePhase::default(),
            misalignment_px: 2,
            seed: 1,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("voxel_mm", self.voxel_mm),
            ("slice_thickness_mm", self.slice_thickness_mm),
            ("lv_long_axis_mm", self.lv_long_axis_mm),
            ("endo_radius_base_mm", self.endo_radius_base_mm),
            ("endo_radius_apex_mm", self.endo_radius_apex_mm),
            ("wall_thickness_mm", self.wall_thickness_mm),
            ("fov_mm", self.fov_mm),
            ("cine.wall_scale", self.cine.wall_scale),
            ("cine.endo_scale", self.cine.endo_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_sa_slices < 3 {
            return Err(Error::validation("at least three SA slices are required"));
        }
        if !(self.slice_gap_mm >= 0.0) {
            return Err(Error::validation("slice gap must be non-negative"));
        }
        if self.wall_thickness_mm >= self.endo_radius_base_mm {
            return Err(Error::validation(
                "wall thickness must be smaller than the basal endocardial radius",
            ));
        }
        if !(0.0..0.5).contains(&self.ellipticity) {
            return Err(Error::validation("ellipticity must lie in [0, 0.5)"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::validation("noise sigma must be non-negative"));
        }
        if self.taper_length() <= 0.0 {
            return Err(Error::validation(
                "long axis too short for the wall thickness and apical radius",
            ));
        }
        let last = self.slice_center_z(self.n_sa_slices - 1);
        if last - self.slice_thickness_mm / 2.0 <= -(self.taper_length() + self.endo_radius_apex_mm) {
            return Err(Error::validation("SA stack extends beyond the endocardial apex"));
        }
        if let Some(inf) = &self.infarct {
            if !(inf.azimuth_span_deg > 0.0 && inf.azimuth_span_deg <= 360.0) {
                return Err(Error::validation("infarct azimuth span must lie in (0, 360]"));
            }
            if !(inf.transmurality > 0.0 && inf.transmurality <= 1.0) {
                return Err(Error::validation("infarct transmurality must lie in (0, 1]"));
            }
            if !(inf.long_extent_mm > 0.0) {
                return Err(Error::validation("infarct long-axis extent must be positive"));
            }
        }
        let fov_px = self.fov_px();
        let needed = 2.0 * (self.endo_radius_base_mm * (1.0 + self.ellipticity) + self.wall_thickness_mm * 1.5);
        if (fov_px - 1) as f64 * self.voxel_mm < needed {
            return Err(Error::validation("field of view too small for the ventricle"));
        }
        Ok(())
    }

    fn taper_length(&self) -> f64 {
        self.lv_long_axis_mm - self.wall_thickness_mm - self.endo_radius_apex_mm
    }

    /// Centre of SA slice `k` along the long axis (mm, base plane at 0).
    pub fn slice_center_z(&self, k: usize) -> f64 {
        -self.slice_thickness_mm / 2.0 - k as f64 * (self.slice_thickness_mm + self.slice_gap_mm)
    }

    fn fov_px(&self) -> usize {
        let n = (self.fov_mm / self.voxel_mm).round() as usize;
        n.max(3) | 1
    }

    fn lge_shell(&self) -> Shell {
        Shell {
            center: Vec2::zeros(),
            radius_base: self.endo_radius_base_mm,
            radius_apex: self.endo_radius_apex_mm,
            wall: self.wall_thickness_mm,
            taper: self.taper_length(),
            ellipticity: self.ellipticity,
        }
    }

    fn cine_shell(&self) -> Shell {
        Shell {
            center: Vec2::new(self.cine.offset_mm[0], self.cine.offset_mm[1]),
            radius_base: self.endo_radius_base_mm * self.cine.endo_scale,
            radius_apex: self.endo_radius_apex_mm * self.cine.endo_scale,
            wall: self.wall_thickness_mm * self.cine.wall_scale,
            taper: self.taper_length(),
            ellipticity: self.ellipticity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Blood,
    Myocardium,
    Infarct,
}

#[derive(Debug, Clone, Copy)]
struct Shell {
    center: Vec2,
    radius_base: f64,
    radius_apex: f64,
    wall: f64,
    taper: f64,
    ellipticity: f64,
}

impl Shell {
    fn endo_radius(&self, z: f64) -> Option<f64> {
        if z > 0.0 {
            return None;
        }
        if z >= -self.taper {
            return Some(self.radius_base + (self.radius_apex - self.radius_base) * (-z / self.taper));
        }
        let dz = z + self.taper;
        (dz.abs() < self.radius_apex).then(|| (self.radius_apex * self.radius_apex - dz * dz).sqrt())
    }

    fn epi_radius(&self, z: f64) -> Option<f64> {
        if z > 0.0 {
            return None;
        }
        if z >= -self.taper {
            return self.endo_radius(z).map(|r| r + self.wall);
        }
        let dz = z + self.taper;
        let cap = self.radius_apex + self.wall;
        (dz.abs() < cap).then(|| (cap * cap - dz * dz).sqrt())
    }

    /// Normalised in-plane coordinates (the ellipse becomes a circle).
    fn normalized(&self, x: f64, y: f64) -> Vec2 {
        Vec2::new(
            (x - self.center.x) / (1.0 + self.ellipticity),
            (y - self.center.y) / (1.0 - self.ellipticity),
        )
    }

    /// Point on the cross-section boundary of radius `r` at parameter `psi`.
    fn boundary_point(&self, r: f64, psi: f64, z: f64) -> Vec3 {
        Vec3::new(
            self.center.x + r * (1.0 + self.ellipticity) * psi.cos(),
            self.center.y + r * (1.0 - self.ellipticity) * psi.sin(),
            z,
        )
    }

    /// Distance from the axis to the boundary of radius `r` along the unit
    /// in-plane direction `(cos a, sin a)`.
    fn directional_radius(&self, r: f64, a: f64) -> f64 {
        let cx = a.cos() / (1.0 + self.ellipticity);
        let cy = a.sin() / (1.0 - self.ellipticity);
        r / (cx * cx + cy * cy).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct InfarctRegion {
    center_rad: f64,
    half_span_rad: f64,
    z_lo: f64,
    z_hi: f64,
    transmurality: f64,
}

impl InfarctRegion {
    fn contains(&self, q: &Vec2, z: f64, rho: f64, endo: Option<f64>, epi: f64) -> bool {
        if z < self.z_lo || z > self.z_hi {
            return false;
        }
        let phi = q.y.atan2(q.x);
        let mut diff = phi - self.center_rad;
        diff = (diff + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        if diff.abs() > self.half_span_rad {
            return false;
        }
        let inner = endo.unwrap_or(0.0);
        let frac = (rho - inner) / (epi - inner);
        frac < self.transmurality
    }
}

#[derive(Debug, Clone, Copy)]
struct TissueModel {
    shell: Shell,
    infarct: Option<InfarctRegion>,
}

impl TissueModel {
    fn tissue(&self, p: &Vec3) -> Tissue {
        let Some(epi) = self.shell.epi_radius(p.z) else {
            return Tissue::Background;
        };
        let q = self.shell.normalized(p.x, p.y);
        let rho = q.norm();
        if rho >= epi {
            return Tissue::Background;
        }
        let endo = self.shell.endo_radius(p.z);
        if let Some(r) = endo {
            if rho < r {
                return Tissue::Blood;
            }
        }
        match &self.infarct {
            Some(inf) if inf.contains(&q, p.z, rho, endo, epi) => Tissue::Infarct,
            _ => Tissue::Myocardium,
        }
    }
}

/// Ground-truth contours for one SA slice (world mm, slice centre plane).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTruth {
    pub endo: Vec<Vec3>,
    pub epi: Vec<Vec3>,
    pub infarct: Mask,
}

/// Boundary curves in one LA slice; index 0 lies along `+row_dir` from the
/// axis, index 1 along `-row_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaTruth {
    pub label: SliceLabel,
    pub endo: [Vec<Vec3>; 2],
    pub epi: [Vec<Vec3>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sa: Vec<SliceTruth>,
    pub la: Vec<LaTruth>,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub lge_sa: Vec<SlicePlane>,
    pub lge_la4c: SlicePlane,
    pub lge_la2c: SlicePlane,
    pub cine_sa: Vec<SlicePlane>,
    pub truth_lge: GroundTruth,
    pub truth_cine: GroundTruth,
    /// In-plane SA misalignment applied to the LGE headers (pixels).
    pub applied_shifts: Vec<(i32, i32)>,
}

impl Phantom {
    /// LGE tissue label at a world point.
    pub fn lge_tissue(&self, p: &Vec3) -> Tissue {
        lge_model(&self.spec).tissue(p)
    }

    /// LGE SA slices with their true (unshifted) poses.
    pub fn lge_sa_true(&self) -> Vec<SlicePlane> {
        self.lge_sa
            .iter()
            .zip(&self.applied_shifts)
            .map(|(s, &(du, dv))| s.translated_in_plane(-du, -dv))
            .collect()
    }
}

fn lge_model(spec: &PhantomSpec) -> TissueModel {
    let infarct = spec.infarct.as_ref().map(|inf| {
        let z_mid = 0.5 * (spec.slice_center_z(0) + spec.slice_center_z(spec.n_sa_slices - 1));
        InfarctRegion {
            center_rad: inf.azimuth_center_deg.to_radians(),
            half_span_rad: inf.azimuth_span_deg.to_radians() / 2.0,
            z_lo: z_mid - inf.long_extent_mm / 2.0,
            z_hi: z_mid + inf.long_extent_mm / 2.0,
            transmurality: inf.transmurality,
        }
    });
    TissueModel {
        shell: spec.lge_shell(),
        infarct,
    }
}

fn cine_model(spec: &PhantomSpec) -> TissueModel {
    TissueModel {
        shell: spec.cine_shell(),
        infarct: None,
    }
}

const STREAM_CINE: u64 = 1000;
const STREAM_LA: u64 = 2000;
const STREAM_MISALIGN: u64 = 3000;

fn slice_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn intensity(t: Tissue, i: &TissueIntensities) -> f64 {
    match t {
        Tissue::Background => i.background,
        Tissue::Blood => i.blood,
        Tissue::Myocardium => i.myo,
        Tissue::Infarct => i.infarct,
    }
}

fn render(
    pose: &SlicePlane,
    model: &TissueModel,
    spec: &PhantomSpec,
    rng: &mut ChaCha8Rng,
) -> Image {
    let n_thick = ((pose.thickness / spec.voxel_mm).round() as usize).max(1);
    let normal = pose.normal();
    let s = pose.pixel_spacing;
    let ss = IN_PLANE_SUPERSAMPLE;
    let mut offsets = Vec::with_capacity(ss * ss * n_thick);
    for k in 0..n_thick {
        let dn = ((k as f64 + 0.5) / n_thick as f64 - 0.5) * pose.thickness;
        for a in 0..ss {
            let du = ((a as f64 + 0.5) / ss as f64 - 0.5) * s;
            for b in 0..ss {
                let dv = ((b as f64 + 0.5) / ss as f64 - 0.5) * s;
                offsets.push(normal * dn + pose.row_dir * du + pose.col_dir * dv);
            }
        }
    }
    let sigma = spec.noise_sigma * spec.intensities.blood;
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    Image::from_fn(pose.width(), pose.height(), |u, v| {
        let center = pose.image_to_world(&Vec2::new(u as f64, v as f64));
        let sum: f64 = offsets
            .iter()
            .map(|o| intensity(model.tissue(&(center + o)), &spec.intensities))
            .sum();
        let mut value = sum / offsets.len() as f64;
        if let Some(dist) = &noise {
            let n: f64 = (0..n_thick).map(|_| rng.sample(dist)).sum();
            value += n / n_thick as f64;
        }
        value
    })
}

fn sa_pose(spec: &PhantomSpec, k: usize) -> SlicePlane {
    let n = spec.fov_px();
    let half = (n - 1) as f64 / 2.0 * spec.voxel_mm;
    SlicePlane {
        pixels: Image::filled(n, n, 0.0),
        origin: Vec3::new(-half, -half, spec.slice_center_z(k)),
        row_dir: Vec3::x(),
        col_dir: Vec3::y(),
        pixel_spacing: spec.voxel_mm,
        thickness: spec.slice_thickness_mm,
        label: SliceLabel::Sa,
    }
}

const LA_MARGIN_MM: f64 = 15.0;

fn la_pose(spec: &PhantomSpec, azimuth_deg: f64, label: SliceLabel) -> SlicePlane {
    let a = azimuth_deg.to_radians();
    let row = Vec3::new(a.cos(), a.sin(), 0.0);
    let col = Vec3::new(0.0, 0.0, -1.0);
    let n = spec.fov_px();
    let half = (n - 1) as f64 / 2.0 * spec.voxel_mm;
    let height_mm = spec.lv_long_axis_mm + 2.0 * LA_MARGIN_MM;
    let h = (height_mm / spec.voxel_mm).round() as usize + 1;
    SlicePlane {
        pixels: Image::filled(n, h, 0.0),
        origin: -row * half + Vec3::new(0.0, 0.0, LA_MARGIN_MM),
        row_dir: row,
        col_dir: col,
        pixel_spacing: spec.voxel_mm,
        thickness: spec.slice_thickness_mm,
        label,
    }
}

fn sa_truth(shell: &Shell, model: &TissueModel, pose: &SlicePlane) -> SliceTruth {
    let z = pose.origin.z;
    let re = shell.endo_radius(z).unwrap_or(0.0);
    let rp = shell.epi_radius(z).unwrap_or(0.0);
    let ring = |r: f64| -> Vec<Vec3> {
        (0..TRUTH_POINTS)
            .map(|i| {
                let psi = std::f64::consts::TAU * i as f64 / TRUTH_POINTS as f64;
                shell.boundary_point(r, psi, z)
            })
            .collect()
    };
    let mut infarct = Mask::new(pose.width(), pose.height());
    for v in 0..pose.height() {
        for u in 0..pose.width() {
            let p = pose.image_to_world(&Vec2::new(u as f64, v as f64));
            if model.tissue(&p) == Tissue::Infarct {
                infarct.set(u, v, true);
            }
        }
    }
    SliceTruth {
        endo: ring(re),
        epi: ring(rp),
        infarct,
    }
}

fn la_truth(shell: &Shell, pose: &SlicePlane) -> LaTruth {
    let a = pose.row_dir.y.atan2(pose.row_dir.x);
    let mut endo = [Vec::new(), Vec::new()];
    let mut epi = [Vec::new(), Vec::new()];
    let steps = (shell.taper + shell.radius_apex + shell.wall) * 2.0;
    for i in 0..=(steps as usize) {
        let z = -(i as f64) * 0.5;
        for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let dir_angle = if sign > 0.0 { a } else { a + std::f64::consts::PI };
            let d = Vec3::new(dir_angle.cos(), dir_angle.sin(), 0.0);
            let c = Vec3::new(shell.center.x, shell.center.y, z);
            if let Some(r) = shell.endo_radius(z) {
                endo[side].push(c + d * shell.directional_radius(r, dir_angle));
            }
            if let Some(r) = shell.epi_radius(z) {
                epi[side].push(c + d * shell.directional_radius(r, dir_angle));
            }
        }
    }
    LaTruth {
        label: pose.label,
        endo,
        epi,
    }
}

/// Render the LGE and cine studies described by `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let lge = lge_model(spec);
    let cine = cine_model(spec);

    let mut lge_sa = Vec::with_capacity(spec.n_sa_slices);
    let mut cine_sa = Vec::with_capacity(spec.n_sa_slices);
    let mut truth_lge_sa = Vec::new();
    let mut truth_cine_sa = Vec::new();
    for k in 0..spec.n_sa_slices {
        let pose = sa_pose(spec, k);
        let mut rng = slice_rng(spec.seed, k as u64);
        let mut lge_slice = pose.clone();
        lge_slice.pixels = render(&pose, &lge, spec, &mut rng);
        let mut rng = slice_rng(spec.seed, STREAM_CINE + k as u64);
        let mut cine_slice = pose.clone();
        cine_slice.pixels = render(&pose, &cine, spec, &mut rng);
        truth_lge_sa.push(sa_truth(&lge.shell, &lge, &pose));
        truth_cine_sa.push(sa_truth(&cine.shell, &cine, &pose));
        lge_sa.push(lge_slice);
        cine_sa.push(cine_slice);
    }

    let mut la = Vec::new();
    for (i, (az, label)) in [
        (spec.la4c_azimuth_deg, SliceLabel::La4c),
        (spec.la2c_azimuth_deg, SliceLabel::La2c),
    ]
    .into_iter()
    .enumerate()
    {
        let mut pose = la_pose(spec, az, label);
        let mut rng = slice_rng(spec.seed, STREAM_LA + i as u64);
        pose.pixels = render(&pose, &lge, spec, &mut rng);
        la.push(pose);
    }
    let truth_lge_la = la.iter().map(|p| la_truth(&lge.shell, p)).collect();
    let truth_cine_la = la.iter().map(|p| la_truth(&cine.shell, p)).collect();
    let lge_la2c = la.pop().expect("two LA slices");
    let lge_la4c = la.pop().expect("two LA slices");

    let (lge_sa, applied_shifts) =
        inject_misalignment(&lge_sa, spec.misalignment_px as f64, spec.seed);

    Ok(Phantom {
        spec: spec.clone(),
        lge_sa,
        lge_la4c,
        lge_la2c,
        cine_sa,
        truth_lge: GroundTruth {
            sa: truth_lge_sa,
            la: truth_lge_la,
        },
        truth_cine: GroundTruth {
            sa: truth_cine_sa,
            la: truth_cine_la,
        },
        applied_shifts,
    })
}

/// Translate every SA slice origin in-plane by a uniform random integer shift
/// in `[-max, max]²` pixels. LA slices are never passed here.
pub fn inject_misalignment(
    slices: &[SlicePlane],
    max_shift_px: f64,
    seed: u64,
) -> (Vec<SlicePlane>, Vec<(i32, i32)>) {
    let m = max_shift_px.max(0.0).floor() as i32;
    let mut rng = slice_rng(seed, STREAM_MISALIGN);
    let mut out = Vec::with_capacity(slices.len());
    let mut shifts = Vec::with_capacity(slices.len());
    for s in slices {
        let (du, dv) = if m == 0 {
            (0, 0)
        } else {
            (rng.random_range(-m..=m), rng.random_range(-m..=m))
        };
        out.push(s.translated_in_plane(du, dv));
        shifts.push((du, dv));
    }
    (out, shifts)
}

/// Sample the truth of SA slice `slice_idx` as a polar contour about the
/// truth centroid, in pixel coordinates of `plane`.
pub fn truth_polar(
    truth: &GroundTruth,
    slice_idx: usize,
    plane: &SlicePlane,
    n_theta: usize,
) -> Result<PolarContour> {
    let st = truth
        .sa
        .get(slice_idx)
        .ok_or_else(|| Error::validation(format!("no truth for slice {slice_idx}")))?;
    let endo: Vec<Vec2> = st.endo.iter().map(|p| plane.world_to_image(p)).collect();
    let epi: Vec<Vec2> = st.epi.iter().map(|p| plane.world_to_image(p)).collect();
    let all: Vec<Vec2> = endo.iter().chain(epi.iter()).copied().collect();
    let center = crate::geometry::centroid2(&all)
        .ok_or_else(|| Error::Parameterization("empty truth contour".into()))?;
    let mut w = Vec::with_capacity(n_theta);
    let mut t = Vec::with_capacity(n_theta);
    for k in 0..n_theta {
        let dir = crate::geometry::angle_dir(PolarContour::theta(k, n_theta));
        let single = |poly: &[Vec2]| -> Result<f64> {
            let hits: Vec<f64> = crate::geometry::line_polygon_crossings(&center, &dir, poly)
                .into_iter()
                .filter(|&s| s > 0.0)
                .collect();
            if hits.len() != 1 {
                return Err(Error::Parameterization(format!(
                    "contour is not star-shaped about its centroid (ray {k} crosses {} times)",
                    hits.len()
                )));
            }
            Ok(hits[0])
        };
        let re = single(&endo)?;
        let rp = single(&epi)?;
        w.push(re);
        t.push(rp - re);
    }
    PolarContour::new(center, w, t)
}
