//! End-to-end segmentation of a study bundle.
//!
//! Stages run in order: align, register, detect, deform, slice, evaluate.
//! [`run_into`] fills a [`RunState`] as it goes so callers keep whatever
//! finished before a failure.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{realign, AlignmentResult};
use crate::bundle::{write_contour_stack, write_json, write_overlay, write_text, StudyBundle};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{centroid2, ReferenceFrame, SlicePlane, Vec2, Vec3};
use crate::mesh::{build_meshes, deform, slice_mesh, DeformLog, SimplexMesh};
use crate::metrics::{compare_stacks, ContourStack, MetricsReport};
use crate::profile::{
    collect_edge_points, detect_edges_la, detect_edges_sa, estimate_intensities, EdgePointSet, IntensityModel,
    LaDetection, PolarContour, SaDetection,
};
use crate::register::{define_roi, propagate_contour, register_translation};

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Align,
    Register,
    Detect,
    Deform,
    Slice,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Align => "align",
            Stage::Register => "register",
            Stage::Detect => "detect",
            Stage::Deform => "deform",
            Stage::Slice => "slice",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Machine-readable record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: PipelineConfig,
    pub timings: Vec<StageTiming>,
    pub alignment: Option<AlignmentResult>,
    pub registration_shifts: Vec<(i32, i32)>,
    pub intensity_model: Option<IntensityModel>,
    pub icm_sweeps_sa: Vec<usize>,
    /// Per LA image, sweeps of each side; `None` when the image was unusable.
    pub icm_sweeps_la: Vec<Option<[usize; 2]>>,
    pub edge_points: usize,
    pub deform: Option<DeformLog>,
    pub error: Option<String>,
}

impl RunLog {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            config: config.clone(),
            timings: Vec::new(),
            alignment: None,
            registration_shifts: Vec::new(),
            intensity_model: None,
            icm_sweeps_sa: Vec::new(),
            icm_sweeps_la: Vec::new(),
            edge_points: 0,
            deform: None,
            error: None,
        }
    }
}

pub type ContourPairs = (Vec<Vec<Vec2>>, Vec<Vec<Vec2>>);

/// Everything produced so far by a run.
#[derive(Debug, Clone)]
pub struct RunState {
    /// SA slices with corrected poses.
    pub sa: Vec<SlicePlane>,
    pub la: Vec<SlicePlane>,
    /// A-priori contours propagated to LGE pixel coordinates.
    pub propagated: Option<ContourPairs>,
    pub sa_detections: Vec<SaDetection>,
    pub la_detections: Vec<Option<LaDetection>>,
    /// Edge points in mesh frame coordinates.
    pub edges: Option<EdgePointSet>,
    pub frame: Option<ReferenceFrame>,
    pub meshes: Option<(SimplexMesh, SimplexMesh)>,
    /// Final contours in pixel coordinates of the corrected SA slices.
    pub contours: Option<ContourPairs>,
    pub metrics: Option<MetricsReport>,
    pub log: RunLog,
}

impl RunState {
    pub fn new(bundle: &StudyBundle, config: &PipelineConfig) -> Self {
        Self {
            sa: bundle.sa.clone(),
            la: bundle.la.clone(),
            propagated: None,
            sa_detections: Vec::new(),
            la_detections: Vec::new(),
            edges: None,
            frame: None,
            meshes: None,
            contours: None,
            metrics: None,
            log: RunLog::new(config),
        }
    }

    /// SA contours after edge detection, pixel coordinates.
    pub fn detected_contours(&self) -> Option<ContourPairs> {
        if self.sa_detections.is_empty() {
            return None;
        }
        Some(
            self.sa_detections
                .iter()
                .map(|d| (d.contour.endo_points(), d.contour.epi_points()))
                .unzip(),
        )
    }
}

fn timed<T>(state: &mut RunState, stage: Stage, f: impl FnOnce(&mut RunState) -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f(state).map_err(|e| e.in_stage(stage.name()));
    state.log.timings.push(StageTiming {
        stage,
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

/// Move every point radially from `center` by `delta` pixels.
pub fn radial_offset(points: &[Vec2], center: Vec2, delta: f64) -> Vec<Vec2> {
    points
        .iter()
        .map(|p| {
            let d = p - center;
            let r = d.norm();
            if r > 0.0 {
                center + d * ((r + delta).max(0.0) / r)
            } else {
                *p
            }
        })
        .collect()
}

fn check_inputs(bundle: &StudyBundle, config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    let n = bundle.sa.len();
    if n < 3 {
        return Err(Error::validation(format!("need at least 3 SA slices, got {n}")));
    }
    if bundle.apriori_endo.len() != n || bundle.apriori_epi.len() != n {
        return Err(Error::validation("every SA slice needs a-priori endo and epi contours"));
    }
    if !bundle.cine.is_empty() && bundle.cine.len() != n {
        return Err(Error::validation("cine and SA stacks differ in length"));
    }
    Ok(())
}

/// Cine slice resampled to the LGE grid (if needed) and the a-priori
/// contours mapped onto it.
fn cine_on_lge_grid(cine: &SlicePlane, lge: &SlicePlane, endo: &[Vec2], epi: &[Vec2]) -> Result<(SlicePlane, Vec<Vec2>, Vec<Vec2>)> {
    if (cine.pixel_spacing - lge.pixel_spacing).abs() <= 1e-9 * lge.pixel_spacing {
        return Ok((cine.clone(), endo.to_vec(), epi.to_vec()));
    }
    let r = cine.resampled(lge.pixel_spacing)?;
    let map = |pts: &[Vec2]| -> Vec<Vec2> { pts.iter().map(|p| r.world_to_image(&cine.image_to_world(p))).collect() };
    Ok((r.clone(), map(endo), map(epi)))
}

fn stage_register(bundle: &StudyBundle, state: &mut RunState, config: &PipelineConfig) -> Result<()> {
    let pi = config.pi();
    let results: Vec<Result<((i32, i32), Vec<Vec2>, Vec<Vec2>)>> = (0..state.sa.len())
        .map(|k| {
            let lge = &state.sa[k];
            let (endo, epi) = (&bundle.apriori_endo[k], &bundle.apriori_epi[k]);
            let Some(cine) = bundle.cine.get(k) else {
                return Ok(((0, 0), endo.clone(), epi.clone()));
            };
            let (cine, endo, epi) = cine_on_lge_grid(cine, lge, endo, epi)?;
            let roi = define_roi(&epi, cine.width(), cine.height())?;
            let shift = register_translation(&cine, lge, &roi, config.search_radius, &pi)?;
            Ok((shift, propagate_contour(&endo, shift), propagate_contour(&epi, shift)))
        })
        .collect();
    let mut shifts = Vec::new();
    let (mut endo, mut epi) = (Vec::new(), Vec::new());
    for r in results {
        let (s, en, ep) = r?;
        shifts.push(s);
        endo.push(en);
        epi.push(ep);
    }
    state.log.registration_shifts = shifts;
    state.propagated = Some((endo, epi));
    Ok(())
}

fn stage_detect(state: &mut RunState, config: &PipelineConfig) -> Result<()> {
    let (endo, epi) = state.propagated.clone().expect("registration ran");
    let model = estimate_intensities(&state.sa, &epi)?;
    state.log.intensity_model = Some(model);
    let n_theta = config.n_theta;
    let sa_params = config.detect_sa();
    let sa = &state.sa;
    let detections: Vec<Result<SaDetection>> = (0..sa.len())
        .into_par_iter()
        .map(|k| {
            let coarse = PolarContour::from_contours(&endo[k], &epi[k], n_theta)?;
            detect_edges_sa(&sa[k], &coarse, &model, &sa_params)
        })
        .collect();
    state.sa_detections = detections.into_iter().collect::<Result<Vec<_>>>()?;
    state.log.icm_sweeps_sa = state.sa_detections.iter().map(|d| d.sweeps).collect();

    let to_world = |pts: &[Vec<Vec2>]| -> Vec<Vec<Vec3>> {
        pts.iter()
            .zip(sa)
            .map(|(c, p)| c.iter().map(|q| p.image_to_world(q)).collect())
            .collect()
    };
    let (endo_w, epi_w) = (to_world(&endo), to_world(&epi));
    let la_params = config.detect_la();
    state.la_detections = state
        .la
        .iter()
        .map(|plane| detect_edges_la(plane, &endo_w, &epi_w, &model, &la_params, config.n_interp))
        .collect::<Result<Vec<_>>>()?;
    state.log.icm_sweeps_la = state
        .la_detections
        .iter()
        .map(|d| d.as_ref().map(|d| [d.sides[0].sweeps, d.sides[1].sweeps]))
        .collect();
    Ok(())
}

fn stage_deform(state: &mut RunState, config: &PipelineConfig) -> Result<()> {
    let frame = ReferenceFrame::from_plane(state.sa.last().expect("non-empty stack"));
    let sa_pairs: Vec<_> = state.sa.iter().zip(&state.sa_detections).collect();
    let la_pairs: Vec<_> = state
        .la
        .iter()
        .zip(&state.la_detections)
        .filter_map(|(p, d)| d.as_ref().map(|d| (p, d)))
        .collect();
    let edges = collect_edge_points(&sa_pairs, &la_pairs).map_positions(|p| frame.to_frame(p));
    state.log.edge_points = edges.points.len();
    let lift = |plane: &SlicePlane, pts: Vec<Vec2>| -> Vec<Vec3> {
        pts.iter().map(|q| frame.to_frame(&plane.image_to_world(q))).collect()
    };
    let (endo, epi): (Vec<_>, Vec<_>) = sa_pairs
        .iter()
        .map(|(p, d)| (lift(p, d.contour.endo_points()), lift(p, d.contour.epi_points())))
        .unzip();
    let (m_endo, m_epi, pairing) = build_meshes(&endo, &epi, config.n_ring_vertices, config.n_interp_rings)?;
    let (m_endo, m_epi, log) = deform(&m_endo, &m_epi, &pairing, &edges, &config.deform())?;
    state.log.deform = Some(log);
    state.edges = Some(edges);
    state.frame = Some(frame);
    state.meshes = Some((m_endo, m_epi));
    Ok(())
}

fn stage_slice(state: &mut RunState) -> Result<()> {
    let (endo, epi) = state.meshes.as_ref().expect("deform ran");
    let frame = state.frame.as_ref().expect("deform ran");
    let mut out = (Vec::new(), Vec::new());
    for plane in &state.sa {
        out.0.push(slice_mesh(endo, frame, plane)?);
        out.1.push(slice_mesh(epi, frame, plane)?);
    }
    state.contours = Some(out);
    Ok(())
}

fn stage_evaluate(bundle: &StudyBundle, state: &mut RunState) -> Result<()> {
    let (Some(truth), Some((endo, epi))) = (&bundle.truth, &state.contours) else {
        return Ok(());
    };
    let plane = &state.sa[0];
    state.metrics = Some(compare_stacks(
        &ContourStack { endo, epi },
        &ContourStack {
            endo: &truth.endo,
            epi: &truth.epi,
        },
        plane.width(),
        plane.height(),
        plane.pixel_spacing,
    )?);
    Ok(())
}

/// Run every stage up to and including `until`.
pub fn run_into(bundle: &StudyBundle, config: &PipelineConfig, until: Stage, state: &mut RunState) -> Result<()> {
    timed(state, Stage::Load, |_| check_inputs(bundle, config))?;
    if until < Stage::Align {
        return Ok(());
    }
    if !config.skip_align {
        timed(state, Stage::Align, |s| {
            let result = realign(&bundle.sa, &bundle.la, &config.align())?;
            s.sa = result.apply(&bundle.sa);
            s.la = result.apply_la(&bundle.la);
            s.log.alignment = Some(result);
            Ok(())
        })?;
    }
    let steps: [(Stage, fn(&StudyBundle, &mut RunState, &PipelineConfig) -> Result<()>); 5] = [
        (Stage::Register, stage_register),
        (Stage::Detect, |_, s, c| stage_detect(s, c)),
        (Stage::Deform, |_, s, c| stage_deform(s, c)),
        (Stage::Slice, |_, s, _| stage_slice(s)),
        (Stage::Evaluate, |b, s, _| stage_evaluate(b, s)),
    ];
    for (stage, f) in steps {
        if until < stage {
            break;
        }
        timed(state, stage, |s| f(bundle, s, config))?;
    }
    Ok(())
}

/// Full run; the state is lost on failure.
pub fn run(bundle: &StudyBundle, config: &PipelineConfig) -> Result<RunState> {
    let mut state = RunState::new(bundle, config);
    run_into(bundle, config, Stage::Evaluate, &mut state)?;
    Ok(state)
}

const ENDO_COLOR: [u8; 3] = [255, 64, 64];
const EPI_COLOR: [u8; 3] = [64, 255, 64];

/// Write whatever the state holds: contours, meshes, metrics, overlays and
/// the run log.
pub fn write_outputs(out: &Path, state: &RunState) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let contours = state
        .contours
        .clone()
        .or_else(|| state.detected_contours())
        .or_else(|| state.propagated.clone());
    if let Some((endo, epi)) = &contours {
        write_contour_stack(&out.join("contours"), endo, epi)?;
        let dir = out.join("overlays");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, plane) in state.sa.iter().enumerate() {
            write_overlay(
                &dir.join(format!("{k:04}.png")),
                &plane.pixels,
                &[(&endo[k], ENDO_COLOR), (&epi[k], EPI_COLOR)],
            )?;
        }
    }
    if let Some((endo, epi)) = &state.meshes {
        write_text(&out.join("meshes").join("endo.obj"), &endo.to_obj())?;
        write_text(&out.join("meshes").join("epi.obj"), &epi.to_obj())?;
    }
    if let Some(m) = &state.metrics {
        write_json(&out.join("metrics.json"), m)?;
    }
    write_json(&out.join("run_log.json"), &state.log)
}

/// Slice centres of the contour stack, for offsetting a-priori contours.
pub fn slice_centers(endo: &[Vec<Vec2>], epi: &[Vec<Vec2>]) -> Vec<Vec2> {
    endo.iter()
        .zip(epi)
        .map(|(a, b)| {
            let all: Vec<Vec2> = a.iter().chain(b).copied().collect();
            centroid2(&all).unwrap_or_else(Vec2::zeros)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_offset_of_circle() {
        let c = Vec2::new(10.0, -3.0);
        let pts: Vec<Vec2> = (0..16)
            .map(|i| c + crate::geometry::angle_dir(i as f64 * 0.4) * 5.0)
            .collect();
        for p in radial_offset(&pts, c, 1.5) {
            assert_close!((p - c).norm(), 6.5, 1e-12);
        }
        for p in radial_offset(&pts, c, -7.0) {
            assert_close!((p - c).norm(), 0.0, 1e-12);
        }
    }

    #[test]
    fn stage_order() {
        assert!(Stage::Load < Stage::Align && Stage::Slice < Stage::Evaluate);
        assert_eq!(Stage::Detect.name(), "detect");
    }
}
