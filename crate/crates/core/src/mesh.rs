//! Coupled endo/epicardial simplex meshes.
//!
//! Both meshes are open tubes made of stacked rings with identical layout,
//! so vertex `i` of the endocardium is paired with vertex `i` of the
//! epicardium. Interior vertices have three neighbours (the vertices above
//! and below plus one ring neighbour, alternating left/right in a honeycomb
//! pattern); the two extreme rings are planar 1-simplex rings.
//!
//! Coordinates live in a [`ReferenceFrame`] in pixel units.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_dir, radial_distance, ReferenceFrame, SlicePlane, Vec2, Vec3};
use crate::profile::{EdgeKind, EdgePointSet};

const FLAT_EPS: f64 = 1e-12;
const ON_PLANE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexMesh {
    pub vertices: Vec<Vec3>,
    /// Interior vertices: `[above, below, ring neighbour]`; boundary
    /// vertices: `[previous, next]` within their ring.
    pub neighbors: Vec<Vec<usize>>,
    pub n_rings: usize,
    pub ring_size: usize,
    pub role: EdgeKind,
    /// Barycentric position of each vertex's projection within its
    /// neighbours at construction.
    rest: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexPairing {
    /// Epicardial partner of each endocardial vertex.
    pub partner: Vec<usize>,
    /// Initial `p_epi - p_endo` per endocardial vertex.
    pub offset: Vec<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformParams {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub d_cutoff: f64,
    pub max_iters: usize,
    pub min_move: f64,
}

impl Default for DeformParams {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            alpha: 0.3,
            beta: 0.3,
            mu: 0.1,
            d_cutoff: 3.0,
            max_iters: 30,
            min_move: 0.1,
        }
    }
}

impl DeformParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation("gamma must lie in (0, 1]"));
        }
        if [self.alpha, self.beta, self.mu].iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::validation("force weights must be non-negative"));
        }
        if !(self.d_cutoff > 0.0) || !(self.min_move >= 0.0) {
            return Err(Error::validation("d_cutoff must be positive and min_move non-negative"));
        }
        Ok(())
    }
}

fn circumcircle(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let (u, v) = (a - c, b - c);
    let w = u.cross(&v);
    let den = 2.0 * w.norm_squared();
    if den < FLAT_EPS {
        return None;
    }
    let center = c + (v * u.norm_squared() - u * v.norm_squared()).cross(&w) / den;
    Some((center, (center - a).norm()))
}

/// Barycentric coordinates of `p` (assumed in the triangle's plane).
fn barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    if den.abs() < FLAT_EPS {
        return [1.0 / 3.0; 3];
    }
    let y = (d11 * d20 - d01 * d21) / den;
    let z = (d00 * d21 - d01 * d20) / den;
    [1.0 - y - z, y, z]
}

/// Simplex angle of a vertex at height `h` above the foot point, `d` from
/// the neighbours' circumcentre, circumradius `r`.
pub fn simplex_angle(r: f64, d: f64, h: f64) -> f64 {
    if h.abs() < FLAT_EPS {
        return 0.0;
    }
    let t = (d * d + h * h - r * r) / (2.0 * h);
    let big_r = (r * r + t * t).sqrt();
    let sg = h.signum();
    (sg * r / big_r).atan2(-t * sg / big_r)
}

/// Height above the foot point that realises simplex angle `phi`.
pub fn height_for_angle(r: f64, d: f64, phi: f64) -> f64 {
    let k = (r * r - d * d).max(0.0);
    let (s, c) = phi.sin_cos();
    let root = (r * r * c * c + k * s * s).sqrt();
    if c >= 0.0 {
        let den = r * c + root;
        if den < FLAT_EPS {
            0.0
        } else {
            k * s / den
        }
    } else if s.abs() < FLAT_EPS {
        0.0
    } else {
        (root - r * c) / s
    }
}

/// Local geometry of a vertex relative to its neighbours.
struct Local {
    normal: Vec3,
    foot: Vec3,
    center: Vec3,
    r: f64,
    h: f64,
}

impl SimplexMesh {
    pub fn index(&self, ring: usize, j: usize) -> usize {
        ring * self.ring_size + j
    }

    pub fn ring_of(&self, i: usize) -> usize {
        i / self.ring_size
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        let k = self.ring_of(i);
        k == 0 || k + 1 == self.n_rings
    }

    pub fn ring(&self, k: usize) -> &[Vec3] {
        &self.vertices[k * self.ring_size..(k + 1) * self.ring_size]
    }

    fn ring_centroid(&self, vertices: &[Vec3], k: usize) -> Vec3 {
        let ring = &vertices[k * self.ring_size..(k + 1) * self.ring_size];
        ring.iter().fold(Vec3::zeros(), |a, p| a + p) / ring.len() as f64
    }

    /// Degree and symmetry checks of the connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() != self.n_rings * self.ring_size {
            return Err(Error::validation("vertex count differs from rings × ring size"));
        }
        for i in 0..self.vertices.len() {
            let want = if self.is_boundary(i) { 2 } else { 3 };
            if self.neighbors[i].len() != want {
                return Err(Error::validation(format!("vertex {i} has degree {}", self.neighbors[i].len())));
            }
            for &j in &self.neighbors[i] {
                if j == i || j >= self.vertices.len() {
                    return Err(Error::validation(format!("vertex {i} has invalid neighbour {j}")));
                }
            }
        }
        Ok(())
    }

    fn local(&self, vertices: &[Vec3], i: usize) -> Option<Local> {
        let p = vertices[i];
        let nb = &self.neighbors[i];
        let outward = p - self.ring_centroid(vertices, self.ring_of(i));
        if self.is_boundary(i) {
            let (a, b) = (vertices[nb[0]], vertices[nb[1]]);
            let e = Vec3::new(b.x - a.x, b.y - a.y, 0.0);
            let len = e.norm();
            if len < FLAT_EPS {
                return None;
            }
            let mut normal = Vec3::new(-e.y, e.x, 0.0) / len;
            if normal.dot(&outward) < 0.0 {
                normal = -normal;
            }
            let a2 = Vec3::new(a.x, a.y, 0.0);
            let p2 = Vec3::new(p.x, p.y, 0.0);
            let s = (p2 - a2).dot(&e) / (len * len);
            let foot = a2 + e * s;
            Some(Local {
                normal,
                foot,
                center: a2 + e * 0.5,
                r: len / 2.0,
                h: (p2 - foot).dot(&normal),
            })
        } else {
            let (a, b, c) = (vertices[nb[0]], vertices[nb[1]], vertices[nb[2]]);
            let mut normal = (b - a).cross(&(c - a));
            let len = normal.norm();
            if len < FLAT_EPS {
                return None;
            }
            normal /= len;
            if normal.dot(&outward) < 0.0 {
                normal = -normal;
            }
            let h = (p - a).dot(&normal);
            let foot = p - normal * h;
            let (center, r) = circumcircle(&a, &b, &c)?;
            Some(Local {
                normal,
                foot,
                center,
                r,
                h,
            })
        }
    }

    fn angle(&self, vertices: &[Vec3], i: usize) -> f64 {
        self.local(vertices, i)
            .map(|l| simplex_angle(l.r, (l.foot - l.center).norm(), l.h))
            .unwrap_or(0.0)
    }

    /// Outward unit normal of vertex `i`.
    pub fn normal(&self, i: usize) -> Vec3 {
        self.local(&self.vertices, i).map(|l| l.normal).unwrap_or_else(Vec3::zeros)
    }

    pub fn simplex_angle_at(&self, i: usize) -> f64 {
        self.angle(&self.vertices, i)
    }

    fn foot_target(&self, vertices: &[Vec3], i: usize) -> Vec3 {
        let nb = &self.neighbors[i];
        let e = self.rest[i];
        if self.is_boundary(i) {
            let (a, b) = (vertices[nb[0]], vertices[nb[1]]);
            Vec3::new(a.x * e[0] + b.x * e[1], a.y * e[0] + b.y * e[1], 0.0)
        } else {
            vertices[nb[0]] * e[0] + vertices[nb[1]] * e[1] + vertices[nb[2]] * e[2]
        }
    }

    /// Regularising displacement of vertex `i`: back to its rest position
    /// within its neighbours tangentially, and to the mean simplex angle of
    /// its neighbours along the normal. Boundary vertices move in-plane only.
    pub fn smooth_force(&self, i: usize) -> Vec3 {
        self.smooth_force_in(&self.vertices, i)
    }

    fn smooth_force_in(&self, vertices: &[Vec3], i: usize) -> Vec3 {
        let Some(l) = self.local(vertices, i) else {
            return Vec3::zeros();
        };
        let boundary = self.is_boundary(i);
        let nb: Vec<usize> = self.neighbors[i]
            .iter()
            .copied()
            .filter(|&j| self.is_boundary(j) == boundary)
            .collect();
        let phi = if nb.is_empty() {
            simplex_angle(l.r, (l.foot - l.center).norm(), l.h)
        } else {
            nb.iter().map(|&j| self.angle(vertices, j)).sum::<f64>() / nb.len() as f64
        };
        let foot = self.foot_target(vertices, i);
        let d = (foot - l.center).norm();
        let target = foot + l.normal * height_for_angle(l.r, d, phi);
        let p = vertices[i];
        if boundary {
            Vec3::new(target.x - p.x, target.y - p.y, 0.0)
        } else {
            target - p
        }
    }

    fn capture_rest(&mut self) {
        self.rest = (0..self.vertices.len())
            .map(|i| {
                let nb = &self.neighbors[i];
                let v = &self.vertices;
                if self.is_boundary(i) {
                    let (a, b) = (v[nb[0]].xy(), v[nb[1]].xy());
                    let e = b - a;
                    let s = if e.norm_squared() > FLAT_EPS {
                        (v[i].xy() - a).dot(&e) / e.norm_squared()
                    } else {
                        0.5
                    };
                    [1.0 - s, s, 0.0]
                } else {
                    match self.local(v, i) {
                        Some(l) => barycentric(&l.foot, &v[nb[0]], &v[nb[1]], &v[nb[2]]),
                        None => [1.0 / 3.0; 3],
                    }
                }
            })
            .collect();
    }

    /// Undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().map(move |&j| (i.min(j), i.max(j))))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn has_ring_edge(&self, k: usize, gap: usize) -> bool {
        let n = self.ring_size;
        let (a, b) = (self.index(k, gap), self.index(k, (gap + 1) % n));
        self.neighbors[a].contains(&b)
    }

    /// Wavefront OBJ text with one polygon per mesh cell.
    pub fn to_obj(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        let n = self.ring_size;
        for g in 0..n {
            let rings: Vec<usize> = (0..self.n_rings).filter(|&k| self.has_ring_edge(k, g)).collect();
            for pair in rings.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let mut face = Vec::new();
                for k in lo..=hi {
                    face.push(self.index(k, (g + 1) % n));
                }
                for k in (lo..=hi).rev() {
                    face.push(self.index(k, g));
                }
                let _ = write!(s, "f");
                for i in face {
                    let _ = write!(s, " {}", i + 1);
                }
                let _ = writeln!(s);
            }
        }
        s
    }
}

fn resample_ring(points: &[Vec3], center: Vec2, n: usize) -> Result<Vec<Vec2>> {
    let poly: Vec<Vec2> = points.iter().map(|p| p.xy()).collect();
    (0..n)
        .map(|j| {
            let dir = angle_dir(std::f64::consts::TAU * j as f64 / n as f64);
            radial_distance(&center, &dir, &poly)
                .map(|r| center + dir * r)
                .ok_or_else(|| Error::Parameterization(format!("resampling ray {j} misses the contour")))
        })
        .collect()
}

fn connectivity(n_rings: usize, n: usize) -> Vec<Vec<usize>> {
    let mut nb = Vec::with_capacity(n_rings * n);
    for k in 0..n_rings {
        for j in 0..n {
            let idx = |k: usize, j: usize| k * n + j;
            if k == 0 || k + 1 == n_rings {
                nb.push(vec![idx(k, (j + n - 1) % n), idx(k, (j + 1) % n)]);
            } else {
                let side = if (j + k) % 2 == 0 { (j + 1) % n } else { (j + n - 1) % n };
                nb.push(vec![idx(k - 1, j), idx(k + 1, j), idx(k, side)]);
            }
        }
    }
    nb
}

/// Build paired meshes from per-slice contours in frame coordinates (one
/// planar contour per slice, ordered along the stack).
pub fn build_meshes(
    endo: &[Vec<Vec3>],
    epi: &[Vec<Vec3>],
    n_ring_vertices: usize,
    n_interp_rings: usize,
) -> Result<(SimplexMesh, SimplexMesh, VertexPairing)> {
    if endo.len() != epi.len() || endo.len() < 3 {
        return Err(Error::validation("need matching endo/epi contours on at least 3 slices"));
    }
    if n_ring_vertices % 2 != 0 || n_ring_vertices < 4 {
        return Err(Error::validation(format!(
            "ring vertex count must be even and at least 4, got {n_ring_vertices}"
        )));
    }
    let n = n_ring_vertices;
    let mut slices_endo = Vec::new();
    let mut slices_epi = Vec::new();
    for (en, ep) in endo.iter().zip(epi) {
        let all: Vec<&Vec3> = en.iter().chain(ep).collect();
        if all.is_empty() {
            return Err(Error::validation("empty slice contour"));
        }
        let c3 = all.iter().fold(Vec3::zeros(), |a, p| a + *p) / all.len() as f64;
        let c = c3.xy();
        let lift = |ring: Vec<Vec2>| -> Vec<Vec3> { ring.into_iter().map(|q| Vec3::new(q.x, q.y, c3.z)).collect() };
        slices_endo.push(lift(resample_ring(en, c, n)?));
        slices_epi.push(lift(resample_ring(ep, c, n)?));
    }
    let interp = |slices: &[Vec<Vec3>]| -> Vec<Vec3> {
        let mut out = Vec::new();
        for k in 0..slices.len() {
            out.extend_from_slice(&slices[k]);
            if k + 1 < slices.len() {
                for i in 1..=n_interp_rings {
                    let f = i as f64 / (n_interp_rings + 1) as f64;
                    out.extend(slices[k].iter().zip(&slices[k + 1]).map(|(a, b)| a + (b - a) * f));
                }
            }
        }
        out
    };
    let n_rings = endo.len() + (endo.len() - 1) * n_interp_rings;
    let neighbors = connectivity(n_rings, n);
    let make = |vertices: Vec<Vec3>, role: EdgeKind| {
        let mut m = SimplexMesh {
            vertices,
            neighbors: neighbors.clone(),
            n_rings,
            ring_size: n,
            role,
            rest: Vec::new(),
        };
        m.capture_rest();
        m
    };
    let endo_mesh = make(interp(&slices_endo), EdgeKind::Endo);
    let epi_mesh = make(interp(&slices_epi), EdgeKind::Epi);
    let pairing = VertexPairing {
        partner: (0..endo_mesh.vertices.len()).collect(),
        offset: endo_mesh
            .vertices
            .iter()
            .zip(&epi_mesh.vertices)
            .map(|(a, b)| b - a)
            .collect(),
    };
    Ok((endo_mesh, epi_mesh, pairing))
}

/// Exact nearest-point queries over weighted points on a uniform grid.
struct PointGrid {
    cell: f64,
    points: Vec<(Vec3, f64)>,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl PointGrid {
    fn new(points: Vec<(Vec3, f64)>, cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
        for (i, (p, _)) in points.iter().enumerate() {
            let c = Self::key(p, cell);
            for (a, v) in [c.0, c.1, c.2].into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
            cells.entry(c).or_default().push(i);
        }
        Self {
            cell,
            points,
            cells,
            lo,
            hi,
        }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    fn nearest(&self, p: &Vec3) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let c = Self::key(p, self.cell);
        let cc = [c.0, c.1, c.2];
        let r_max = (0..3)
            .map(|a| (cc[a] - self.lo[a]).abs().max((self.hi[a] - cc[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(f64, usize)> = None;
        for r in 0..=r_max {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let Some(list) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else {
                            continue;
                        };
                        for &i in list {
                            let d = (self.points[i].0 - p).norm_squared();
                            if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                                best = Some((d, i));
                            }
                        }
                    }
                }
            }
            if let Some((bd, _)) = best {
                let reach = r as f64 * self.cell;
                if bd <= reach * reach {
                    break;
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Attraction of a vertex towards the closest edge point along its normal,
/// gated by the cutoff distance.
pub fn edge_force(p: &Vec3, normal: &Vec3, closest: Option<(&Vec3, f64)>, d_cutoff: f64) -> Vec3 {
    let Some((q, weight)) = closest else {
        return Vec3::zeros();
    };
    let x = (q - p).dot(normal) / d_cutoff;
    if x.abs() > 1.0 {
        return Vec3::zeros();
    }
    normal * (weight * x)
}

/// Spring forces keeping each pair at its initial offset, returned as
/// `(endo forces, epi forces)`.
pub fn thickness_force(pairing: &VertexPairing, endo: &[Vec3], epi: &[Vec3]) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut f_endo = Vec::with_capacity(endo.len());
    let mut f_epi = vec![Vec3::zeros(); epi.len()];
    for (i, (&j, off)) in pairing.partner.iter().zip(&pairing.offset).enumerate() {
        f_endo.push(epi[j] - off - endo[i]);
        f_epi[j] = endo[i] + off - epi[j];
    }
    (f_endo, f_epi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformLog {
    pub iterations: usize,
    /// Largest vertex movement of each iteration.
    pub max_moves: Vec<f64>,
    pub converged: bool,
}

struct MeshState<'a> {
    mesh: &'a SimplexMesh,
    pos: Vec<Vec3>,
    prev: Vec<Vec3>,
    grid: PointGrid,
    name: &'static str,
}

impl MeshState<'_> {
    /// One update given the partner mesh positions; returns the
    /// largest movement.
    fn step(&mut self, partner: &[Vec3], pairing: &VertexPairing, is_endo: bool, p: &DeformParams) -> Result<f64> {
        let mesh = self.mesh;
        let pos = &self.pos;
        let prev = &self.prev;
        let grid = &self.grid;
        let new: Vec<Vec3> = (0..pos.len())
            .into_par_iter()
            .map(|i| {
                let x = pos[i];
                let f_smooth = mesh.smooth_force_in(pos, i);
                let normal = mesh.local(pos, i).map(|l| l.normal).unwrap_or_else(Vec3::zeros);
                let closest = grid.nearest(&x).map(|k| (&grid.points[k].0, grid.points[k].1));
                let f_edge = edge_force(&x, &normal, closest, p.d_cutoff);
                let f_thick = if is_endo {
                    let j = pairing.partner[i];
                    partner[j] - pairing.offset[i] - x
                } else {
                    partner[i] + pairing.offset[i] - x
                };
                let mut y = x + (x - prev[i]) * (1.0 - p.gamma) + f_smooth * p.alpha + f_edge * p.beta + f_thick * p.mu;
                if mesh.is_boundary(i) {
                    y.z = x.z;
                }
                y
            })
            .collect();
        let mut max_move: f64 = 0.0;
        for (i, (y, x)) in new.iter().zip(pos).enumerate() {
            if !(y.x.is_finite() && y.y.is_finite() && y.z.is_finite()) {
                return Err(Error::NumericFailure {
                    mesh: self.name,
                    vertex: i,
                });
            }
            max_move = max_move.max((y - x).norm());
        }
        self.prev = std::mem::replace(&mut self.pos, new);
        Ok(max_move)
    }
}

/// Deform both meshes towards the edge points (frame coordinates): each
/// iteration updates the epicardium with the endocardium fixed, then the
/// endocardium against the updated epicardium.
pub fn deform(
    endo: &SimplexMesh,
    epi: &SimplexMesh,
    pairing: &VertexPairing,
    edges: &EdgePointSet,
    params: &DeformParams,
) -> Result<(SimplexMesh, SimplexMesh, DeformLog)> {
    params.validate()?;
    let points_of = |kind: EdgeKind| -> Vec<(Vec3, f64)> {
        edges.of_kind(kind).map(|e| (e.position, e.weight)).collect()
    };
    let mut s_endo = MeshState {
        mesh: endo,
        pos: endo.vertices.clone(),
        prev: endo.vertices.clone(),
        grid: PointGrid::new(points_of(EdgeKind::Endo), params.d_cutoff),
        name: "endo",
    };
    let mut s_epi = MeshState {
        mesh: epi,
        pos: epi.vertices.clone(),
        prev: epi.vertices.clone(),
        grid: PointGrid::new(points_of(EdgeKind::Epi), params.d_cutoff),
        name: "epi",
    };
    let mut log = DeformLog {
        iterations: 0,
        max_moves: Vec::new(),
        converged: false,
    };
    while log.iterations < params.max_iters {
        let m_epi = s_epi.step(&s_endo.pos, pairing, false, params)?;
        let m_endo = s_endo.step(&s_epi.pos, pairing, true, params)?;
        log.iterations += 1;
        let m = m_epi.max(m_endo);
        log.max_moves.push(m);
        if m < params.min_move {
            log.converged = true;
            break;
        }
    }
    let finish = |m: &SimplexMesh, pos: Vec<Vec3>| SimplexMesh {
        vertices: pos,
        ..m.clone()
    };
    Ok((finish(endo, s_endo.pos), finish(epi, s_epi.pos), log))
}

/// Intersection of the mesh with an image plane as a closed polygon in that
/// image's pixel coordinates, ordered by azimuth about its centroid.
pub fn slice_mesh(mesh: &SimplexMesh, frame: &ReferenceFrame, plane: &SlicePlane) -> Result<Vec<Vec2>> {
    let o = frame.to_frame(&plane.origin);
    let n = frame.dir_to_frame(&plane.normal());
    let dist: Vec<f64> = mesh.vertices.iter().map(|v| (v - o).dot(&n)).collect();
    let mut pts: Vec<Vec3> = Vec::new();
    for (i, &d) in dist.iter().enumerate() {
        if d.abs() <= ON_PLANE_TOL {
            pts.push(mesh.vertices[i]);
        }
    }
    for (a, b) in mesh.edges() {
        let (da, db) = (dist[a], dist[b]);
        if da.abs() <= ON_PLANE_TOL || db.abs() <= ON_PLANE_TOL {
            continue;
        }
        if (da < 0.0) != (db < 0.0) {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            pts.push(pa + (pb - pa) * (da / (da - db)));
        }
    }
    if pts.len() < 3 {
        return Err(Error::EmptyContour);
    }
    let uv: Vec<Vec2> = pts.iter().map(|q| plane.world_to_image(&frame.to_world(q))).collect();
    let c = uv.iter().fold(Vec2::zeros(), |a, p| a + p) / uv.len() as f64;
    let mut keyed: Vec<(f64, Vec2)> = uv.into_iter().map(|p| ((p.y - c.y).atan2(p.x - c.x), p)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.x.total_cmp(&b.1.x)).then(a.1.y.total_cmp(&b.1.y)));
    Ok(keyed.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Image, SliceLabel};
    use crate::profile::EdgePoint;
    use proptest::prelude::*;

    fn ring(c: Vec2, r: f64, z: f64, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                Vec3::new(c.x + r * a.cos(), c.y + r * a.sin(), z)
            })
            .collect()
    }

    fn cylinder(n_slices: usize, r_endo: f64, r_epi: f64, n: usize, interp: usize) -> (SimplexMesh, SimplexMesh, VertexPairing) {
        let c = Vec2::new(50.0, 50.0);
        let endo: Vec<_> = (0..n_slices).map(|k| ring(c, r_endo, -(k as f64) * 7.5, 360)).collect();
        let epi: Vec<_> = (0..n_slices).map(|k| ring(c, r_epi, -(k as f64) * 7.5, 360)).collect();
        build_meshes(&endo, &epi, n, interp).unwrap()
    }

    fn axial_plane(z: f64) -> SlicePlane {
        SlicePlane::new(
            Image::filled(100, 100, 0.0),
            Vec3::new(0.0, 0.0, z),
            Vec3::x(),
            Vec3::y(),
            1.0,
            7.0,
            SliceLabel::Sa,
        )
        .unwrap()
    }

    fn identity_frame() -> ReferenceFrame {
        ReferenceFrame::from_plane(&axial_plane(0.0))
    }

    #[test]
    fn construction_counts() {
        let (endo, _, _) = cylinder(3, 20.0, 30.0, 8, 0);
        assert_eq!(endo.vertices.len(), 24);
        endo.validate().unwrap();
        for i in 0..24 {
            let deg = endo.neighbors[i].len();
            assert_eq!(deg, if endo.ring_of(i) == 1 { 3 } else { 2 });
        }
        let (endo, _, _) = cylinder(8, 20.0, 30.0, 80, 3);
        assert_eq!(endo.n_rings, 29);
        endo.validate().unwrap();
    }

    #[test]
    fn honeycomb_neighbours_are_mutual() {
        let (endo, _, _) = cylinder(4, 20.0, 30.0, 12, 1);
        for i in 0..endo.vertices.len() {
            if endo.is_boundary(i) {
                continue;
            }
            let h = endo.neighbors[i][2];
            if !endo.is_boundary(h) {
                assert_eq!(endo.neighbors[h][2], i);
            }
        }
    }

    #[test]
    fn odd_ring_count_rejected() {
        let c = Vec2::new(0.0, 0.0);
        let s: Vec<_> = (0..3).map(|k| ring(c, 5.0, k as f64, 50)).collect();
        let t: Vec<_> = (0..3).map(|k| ring(c, 8.0, k as f64, 50)).collect();
        assert!(matches!(build_meshes(&s, &t, 7, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn circular_pairing_offsets() {
        let (_, _, pairing) = cylinder(3, 20.0, 30.0, 16, 2);
        for o in &pairing.offset {
            assert_close!(o.norm(), 10.0, 0.05);
        }
    }

    #[test]
    fn regular_cylinder_has_zero_smooth_force() {
        let (endo, _, _) = cylinder(5, 20.0, 30.0, 40, 1);
        for i in 0..endo.vertices.len() {
            let f = endo.smooth_force(i);
            assert!(f.norm() < 1e-6, "vertex {i}: {f:?}");
            if endo.is_boundary(i) {
                assert_eq!(f.z, 0.0);
            }
        }
    }

    #[test]
    fn perturbed_vertex_is_pulled_back() {
        let (endo, _, _) = cylinder(5, 20.0, 30.0, 40, 1);
        let i = endo.index(4, 7);
        let mut m = endo.clone();
        let outward = m.normal(i);
        m.vertices[i] += outward * 1.5;
        let f = m.smooth_force(i);
        assert!(f.dot(&(-outward)) > 0.0);
    }

    #[test]
    fn angle_height_round_trip() {
        for &(r, d, h) in &[(5.0, 1.0, 0.7), (5.0, 2.0, -1.3), (3.0, 0.0, 4.0), (3.0, 0.5, -6.0)] {
            let phi = simplex_angle(r, d, h);
            assert_close!(height_for_angle(r, d, phi), h, 1e-9);
        }
        assert_eq!(simplex_angle(4.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn edge_force_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let n = Vec3::z();
        let far = p + n * 3.5;
        assert_eq!(edge_force(&p, &n, Some((&far, 1.0)), 3.0), Vec3::zeros());
        assert_eq!(edge_force(&p, &n, Some((&p, 1.0)), 3.0), Vec3::zeros());
        let half = p + n * 1.5;
        assert_close!((edge_force(&p, &n, Some((&half, 1.0)), 3.0) - n * 0.5).norm(), 0.0, 1e-15);
        let inside = p - n * 1.5;
        assert_close!((edge_force(&p, &n, Some((&inside, 1.0)), 3.0) + n * 0.5).norm(), 0.0, 1e-15);
        assert_eq!(edge_force(&p, &n, None, 3.0), Vec3::zeros());
    }

    #[test]
    fn thickness_force_examples() {
        let (endo, epi, pairing) = cylinder(3, 20.0, 30.0, 8, 0);
        let (fe, fp) = thickness_force(&pairing, &endo.vertices, &epi.vertices);
        assert!(fe.iter().chain(&fp).all(|f| f.norm() < 1e-12));
        let v = Vec3::new(0.5, -1.0, 0.25);
        let moved: Vec<Vec3> = epi.vertices.iter().map(|p| p + v).collect();
        let (fe, fp) = thickness_force(&pairing, &endo.vertices, &moved);
        assert!(fp.iter().all(|f| (f + v).norm() < 1e-12));
        assert!(fe.iter().all(|f| (f - v).norm() < 1e-12));
        let both: Vec<Vec3> = endo.vertices.iter().map(|p| p + v).collect();
        let (fe, fp) = thickness_force(&pairing, &both, &moved);
        assert!(fe.iter().chain(&fp).all(|f| f.norm() < 1e-12));
    }

    #[test]
    fn grid_nearest_is_exact() {
        let pts: Vec<(Vec3, f64)> = (0..200)
            .map(|i| {
                let x = i as f64;
                (Vec3::new((x * 1.37).sin() * 20.0, (x * 0.71).cos() * 20.0, (x * 0.13).sin() * 9.0), 1.0)
            })
            .collect();
        let grid = PointGrid::new(pts.clone(), 3.0);
        for k in 0..50 {
            let q = Vec3::new(k as f64 - 25.0, (k as f64 * 0.3).sin() * 30.0, 40.0 - k as f64);
            let brute = (0..pts.len())
                .min_by(|&a, &b| (pts[a].0 - q).norm_squared().total_cmp(&(pts[b].0 - q).norm_squared()))
                .unwrap();
            assert_eq!(grid.nearest(&q), Some(brute));
        }
    }

    #[test]
    fn deform_without_edges_on_smooth_mesh_stops_at_once() {
        let (endo, epi, pairing) = cylinder(4, 20.0, 30.0, 40, 1);
        let (e2, p2, log) = deform(&endo, &epi, &pairing, &EdgePointSet::default(), &DeformParams::default()).unwrap();
        assert_eq!(log.iterations, 1);
        assert!(log.max_moves[0] < 1e-6);
        assert!(log.converged);
        let _ = (e2, p2);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (endo, epi, pairing) = cylinder(4, 20.0, 30.0, 40, 1);
        let params = DeformParams {
            max_iters: 0,
            ..Default::default()
        };
        let (e2, p2, log) = deform(&endo, &epi, &pairing, &EdgePointSet::default(), &params).unwrap();
        assert_eq!(e2, endo);
        assert_eq!(p2, epi);
        assert_eq!(log.iterations, 0);
    }

    #[test]
    fn deform_moves_towards_edges() {
        let (endo, epi, pairing) = cylinder(4, 20.0, 30.0, 40, 1);
        let c = Vec2::new(50.0, 50.0);
        let mut edges = EdgePointSet::default();
        for k in 0..13 {
            let z = -(k as f64) * 7.5 / 4.0 * 1.0;
            for (r, kind) in [(21.5, EdgeKind::Endo), (31.5, EdgeKind::Epi)] {
                for p in ring(c, r, z, 120) {
                    edges.points.push(EdgePoint {
                        position: p,
                        kind,
                        weight: 1.0,
                        source: SliceLabel::Sa,
                    });
                }
            }
        }
        let (e2, p2, log) = deform(&endo, &epi, &pairing, &edges, &DeformParams::default()).unwrap();
        assert!(log.iterations <= 30);
        let mean_r = |m: &SimplexMesh| {
            m.vertices.iter().map(|v| (v.xy() - c).norm()).sum::<f64>() / m.vertices.len() as f64
        };
        assert!(mean_r(&e2) > 20.5 && mean_r(&p2) > 30.5);
        for (i, v) in e2.vertices.iter().enumerate() {
            if e2.is_boundary(i) {
                assert_eq!(v.z.to_bits(), endo.vertices[i].z.to_bits());
            }
        }
    }

    #[test]
    fn slicing_cylinder() {
        let (endo, _, _) = cylinder(3, 25.0, 30.0, 80, 1);
        let frame = identity_frame();
        let mid = slice_mesh(&endo, &frame, &axial_plane(-3.0)).unwrap();
        for p in &mid {
            assert_close!((p - Vec2::new(50.0, 50.0)).norm(), 25.0, 0.5);
        }
        let at_ring = slice_mesh(&endo, &frame, &axial_plane(-7.5)).unwrap();
        assert_eq!(at_ring.len(), 80);
        let ring_pts: Vec<Vec2> = endo.ring(2).iter().map(|v| v.xy()).collect();
        for p in &at_ring {
            assert!(ring_pts.iter().any(|q| (q - p).norm() < 1e-9));
        }
        assert!(matches!(slice_mesh(&endo, &frame, &axial_plane(5.0)), Err(Error::EmptyContour)));
    }

    #[test]
    fn obj_has_cells() {
        let (endo, _, _) = cylinder(3, 20.0, 30.0, 8, 1);
        let obj = endo.to_obj();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), endo.vertices.len());
        assert!(obj.lines().filter(|l| l.starts_with("f ")).count() >= 8);
    }

    proptest! {
        #[test]
        fn angle_round_trip(r in 0.5..10.0f64, dfrac in 0.0..0.95f64, h in -10.0..10.0f64) {
            prop_assume!(h.abs() > 1e-3);
            let d = r * dfrac;
            let phi = simplex_angle(r, d, h);
            prop_assert!((height_for_angle(r, d, phi) - h).abs() < 1e-7 * h.abs().max(1.0));
        }

        #[test]
        fn deform_is_translation_equivariant(dx in -20.0..20.0f64, dy in -20.0..20.0f64, dz in -20.0..20.0f64) {
            let (endo, epi, pairing) = cylinder(4, 20.0, 30.0, 24, 1);
            let c = Vec2::new(50.0, 50.0);
            let mut edges = EdgePointSet::default();
            for k in 0..7 {
                for (r, kind) in [(21.0, EdgeKind::Endo), (31.0, EdgeKind::Epi)] {
                    for p in ring(c + Vec2::new(0.137, 0.291), r + (k as f64 * 0.3).sin(), -(k as f64) * 3.75 - 0.37, 61) {
                        edges.points.push(EdgePoint { position: p, kind, weight: 0.8, source: SliceLabel::Sa });
                    }
                }
            }
            let v = Vec3::new(dx, dy, dz);
            let shift = |m: &SimplexMesh| {
                let mut m = m.clone();
                m.vertices.iter_mut().for_each(|p| *p += v);
                m
            };
            let (a_endo, a_epi, _) = deform(&endo, &epi, &pairing, &edges, &DeformParams::default()).unwrap();
            let (b_endo, b_epi, _) = deform(&shift(&endo), &shift(&epi), &pairing, &edges.map_positions(|p| p + v), &DeformParams::default()).unwrap();
            for (a, b) in a_endo.vertices.iter().chain(&a_epi.vertices).zip(b_endo.vertices.iter().chain(&b_epi.vertices)) {
                prop_assert!((a + v - b).norm() < 1e-9, "{}", (a + v - b).norm());
            }
        }
    }
}
