//! The parametric myocardium model.
//!
//! Along a ray leaving the LV centre the myocardium is described by the
//! blood-pool extent `w` and wall thickness `t`, plus an optional
//! enhancement of thickness `s` starting `d` pixels into the wall. Sampled
//! intensity profiles are matched against piecewise-constant templates built
//! from an [`IntensityModel`]; a chain energy over neighbouring rays adds
//! smoothness and is minimised by iterated conditional modes (ICM) with `w`
//! and `t` confined to a narrow band around a coarse initial contour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angle_dir, centroid2, radial_distance, sample_along, Ray, SliceLabel, SlicePlane, Vec2, Vec3,
};
use crate::metrics::rasterize;

/// Template positions compared beyond `w + t`: the epicardial transition
/// pixel and one exterior pixel.
pub const EXTERIOR_MATCH: usize = 2;

const HIST_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub i_norm: f64,
    pub i_blood: f64,
    pub i_enhan: f64,
    pub i_thres: f64,
}

impl IntensityModel {
    pub fn new(i_norm: f64, i_blood: f64, i_enhan: f64, i_thres: f64) -> Result<Self> {
        let m = Self {
            i_norm,
            i_blood,
            i_enhan,
            i_thres,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.i_norm, self.i_blood, self.i_enhan, self.i_thres]
            .iter()
            .all(|v| v.is_finite())
            && self.i_norm < self.i_thres
            && self.i_thres <= self.i_blood
            && self.i_blood <= self.i_enhan;
        if !ok {
            return Err(Error::validation(format!(
                "intensity model must satisfy i_norm < i_thres <= i_blood <= i_enhan, got {self:?}"
            )));
        }
        Ok(())
    }

    fn level(&self, l: Level) -> f64 {
        match l {
            Level::Blood => self.i_blood,
            Level::Norm => self.i_norm,
            Level::Enhan => self.i_enhan,
            Level::Thres => self.i_thres,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemplateParams {
    pub w: usize,
    pub t: usize,
    pub s: usize,
    pub d: usize,
}

impl TemplateParams {
    pub fn new(w: usize, t: usize, s: usize, d: usize) -> Result<Self> {
        let p = Self { w, t, s, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w < 1 || self.t < 1 || self.s > self.t || self.d + self.s > self.t {
            return Err(Error::validation(format!(
                "template parameters need w, t >= 1 and d + s <= t, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Blood,
    Norm,
    Enhan,
    Thres,
}

impl Level {
    const ALL: [Level; 4] = [Level::Blood, Level::Norm, Level::Enhan, Level::Thres];

    fn index(self) -> usize {
        self as usize
    }

    fn bright(self) -> bool {
        matches!(self, Level::Blood | Level::Enhan)
    }
}

/// Constant runs of a template, in order, up to and including the
/// epicardial boundary pixel. Everything after is exterior (`Blood`).
#[derive(Debug, Clone, Copy)]
struct Pieces {
    len: usize,
    runs: [(usize, Level); 8],
}

impl Pieces {
    fn new(p: &TemplateParams) -> Self {
        let mut out = Pieces {
            len: 0,
            runs: [(0, Level::Blood); 8],
        };
        let tissue = [
            (p.w, Level::Blood),
            (p.d, Level::Norm),
            (p.s, Level::Enhan),
            (p.t - p.d - p.s, Level::Norm),
        ];
        let mut prev: Option<Level> = None;
        for (len, level) in tissue {
            if len == 0 {
                continue;
            }
            if !level.bright() && prev.is_some_and(Level::bright) {
                out.push(1, Level::Thres);
                out.push(len - 1, level);
            } else {
                out.push(len, level);
            }
            prev = Some(level);
        }
        let boundary = if prev.is_some_and(Level::bright) {
            Level::Blood
        } else {
            Level::Thres
        };
        out.push(1, boundary);
        out
    }

    fn push(&mut self, len: usize, level: Level) {
        if len > 0 {
            self.runs[self.len] = (len, level);
            self.len += 1;
        }
    }

    fn iter(&self) -> impl Iterator<Item = (usize, Level)> + '_ {
        self.runs[..self.len].iter().copied()
    }
}

/// Template intensities for `total_len` positions along a ray.
pub fn build_template(p: &TemplateParams, m: &IntensityModel, total_len: usize) -> Result<Vec<f64>> {
    p.validate()?;
    if total_len < p.w + p.t {
        return Err(Error::validation(format!(
            "template length {total_len} shorter than w + t = {}",
            p.w + p.t
        )));
    }
    let mut out = Vec::with_capacity(total_len);
    for (len, level) in Pieces::new(p).iter() {
        for _ in 0..len {
            out.push(m.level(level));
        }
    }
    out.resize(total_len, m.i_blood);
    out.truncate(total_len);
    Ok(out)
}

/// Number of leading positions compared by [`match_error`].
pub fn match_len(w: usize, t: usize) -> usize {
    w + t + EXTERIOR_MATCH
}

/// Mean squared difference between template and sample over the first
/// [`match_len`] positions; invalid samples are skipped. Infinite when no
/// sample is valid.
pub fn match_error(template: &[f64], sample: &[Option<f64>], w: usize, t: usize) -> Result<f64> {
    let n = match_len(w, t);
    if sample.len() < n || template.len() < n {
        return Err(Error::validation(format!(
            "profile of length {} too short for w + t = {}",
            sample.len().min(template.len()),
            w + t
        )));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in template[..n].iter().zip(&sample[..n]) {
        if let Some(y) = y {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    Ok(if count == 0 { f64::INFINITY } else { sum / count as f64 })
}

/// Prefix sums of squared residuals against each template level.
struct ProfileTable {
    prefix: [Vec<f64>; 4],
    count: Vec<usize>,
}

impl ProfileTable {
    fn new(sample: &[Option<f64>], m: &IntensityModel) -> Self {
        let n = sample.len();
        let mut prefix: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n + 1));
        let mut count = Vec::with_capacity(n + 1);
        for (l, p) in Level::ALL.iter().zip(prefix.iter_mut()) {
            let c = m.level(*l);
            let mut acc = 0.0;
            p.push(0.0);
            for x in sample {
                if let Some(x) = x {
                    acc += (x - c) * (x - c);
                }
                p.push(acc);
            }
        }
        let mut k = 0;
        count.push(0);
        for x in sample {
            k += x.is_some() as usize;
            count.push(k);
        }
        Self { prefix, count }
    }

    fn error(&self, p: &TemplateParams) -> f64 {
        let n = match_len(p.w, p.t);
        let count = self.count[n];
        if count == 0 {
            return f64::INFINITY;
        }
        let mut pos = 0;
        let mut sum = 0.0;
        for (len, level) in Pieces::new(p).iter() {
            let end = (pos + len).min(n);
            let pre = &self.prefix[level.index()];
            sum += pre[end] - pre[pos];
            pos = end;
        }
        let pre = &self.prefix[Level::Blood.index()];
        sum += pre[n] - pre[pos];
        sum / count as f64
    }
}

/// Band-limited cost table of one ray: `cost[iw * nt + it]` is the best
/// match error over `(s, d)` at
/// `(w_lo + iw, t_lo + it)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayCosts {
    pub w_lo: usize,
    pub t_lo: usize,
    pub nw: usize,
    pub nt: usize,
    pub cost: Vec<f64>,
    pub sd: Vec<(usize, usize)>,
}

impl RayCosts {
    /// A ray that can only keep `(w, t)`.
    pub fn fixed(w: usize, t: usize) -> Self {
        Self {
            w_lo: w,
            t_lo: t,
            nw: 1,
            nt: 1,
            cost: vec![0.0],
            sd: vec![(0, 0)],
        }
    }

    pub fn contains(&self, w: usize, t: usize) -> bool {
        w >= self.w_lo && w < self.w_lo + self.nw && t >= self.t_lo && t < self.t_lo + self.nt
    }

    #[inline]
    pub fn at(&self, w: usize, t: usize) -> f64 {
        self.cost[(w - self.w_lo) * self.nt + (t - self.t_lo)]
    }

    pub fn params(&self, w: usize, t: usize) -> TemplateParams {
        let (s, d) = self.sd[(w - self.w_lo) * self.nt + (t - self.t_lo)];
        TemplateParams { w, t, s, d }
    }

    /// Per-ray minimiser, ties to smallest `w` then `t`.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (self.w_lo, self.t_lo);
        let mut best_e = f64::INFINITY;
        for iw in 0..self.nw {
            for it in 0..self.nt {
                let e = self.cost[iw * self.nt + it];
                if e < best_e {
                    best_e = e;
                    best = (self.w_lo + iw, self.t_lo + it);
                }
            }
        }
        best
    }
}

/// Band limits `[max(1, c - h), c + h]`.
fn band_range(center: usize, half: usize) -> (usize, usize) {
    let lo = center.saturating_sub(half).max(1);
    (lo, center + half - lo + 1)
}

/// Sample length needed to evaluate every candidate of a band.
pub fn profile_len(w0: usize, t0: usize, band: usize) -> usize {
    let half = band / 2;
    w0 + t0 + 2 * half + EXTERIOR_MATCH
}

/// Cost table for one sampled profile around `(w0, t0)`.
pub fn ray_costs(
    sample: &[Option<f64>],
    w0: usize,
    t0: usize,
    band: usize,
    m: &IntensityModel,
) -> Result<RayCosts> {
    if band == 0 || band % 2 == 0 {
        return Err(Error::validation(format!("band width must be odd, got {band}")));
    }
    if sample.len() < profile_len(w0, t0, band) {
        return Err(Error::validation("profile shorter than the search band needs"));
    }
    let half = band / 2;
    let (w_lo, nw) = band_range(w0, half);
    let (t_lo, nt) = band_range(t0, half);
    let table = ProfileTable::new(sample, m);
    let mut cost = Vec::with_capacity(nw * nt);
    let mut sd = Vec::with_capacity(nw * nt);
    for w in w_lo..w_lo + nw {
        for t in t_lo..t_lo + nt {
            let mut best = (f64::INFINITY, (0, 0));
            for s in 0..=t {
                let d_max = if s == 0 { 0 } else { t - s };
                for d in 0..=d_max {
                    let e = table.error(&TemplateParams { w, t, s, d });
                    if e < best.0 {
                        best = (e, (s, d));
                    }
                }
            }
            cost.push(best.0);
            sd.push(best.1);
        }
    }
    Ok(RayCosts {
        w_lo,
        t_lo,
        nw,
        nt,
        cost,
        sd,
    })
}

/// Which smoothness terms the chain energy carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    /// Closed chain over angles: first and second differences of `w` and `t`.
    Cyclic,
    /// Open chain along the long axis: second differences of `w`, first and
    /// second differences of `t`.
    Open,
}

impl ChainKind {
    fn first_w(self) -> bool {
        matches!(self, ChainKind::Cyclic)
    }
}

struct Chain<'a> {
    kind: ChainKind,
    n: usize,
    w: &'a [usize],
    t: &'a [usize],
}

impl Chain<'_> {
    fn idx(&self, i: isize) -> Option<usize> {
        let n = self.n as isize;
        match self.kind {
            ChainKind::Cyclic => Some(i.rem_euclid(n) as usize),
            ChainKind::Open => (0..n).contains(&i).then_some(i as usize),
        }
    }

    /// Smoothness terms that involve position `k` when it holds `(wk, tk)`.
    fn local(&self, k: usize, wk: usize, tk: usize) -> f64 {
        let get = |i: usize| -> (f64, f64) {
            if i == k {
                (wk as f64, tk as f64)
            } else {
                (self.w[i] as f64, self.t[i] as f64)
            }
        };
        let k = k as isize;
        let mut e = 0.0;
        for (a, b) in [(k - 1, k), (k, k + 1)] {
            if let (Some(a), Some(b)) = (self.idx(a), self.idx(b)) {
                let (wa, ta) = get(a);
                let (wb, tb) = get(b);
                if self.kind.first_w() {
                    e += (wb - wa) * (wb - wa);
                }
                e += (tb - ta) * (tb - ta);
            }
        }
        for c in [k - 1, k, k + 1] {
            if let (Some(a), Some(c), Some(b)) = (self.idx(c - 1), self.idx(c), self.idx(c + 1)) {
                let (wa, ta) = get(a);
                let (wc, tc) = get(c);
                let (wb, tb) = get(b);
                let dw = wa - 2.0 * wc + wb;
                let dt = ta - 2.0 * tc + tb;
                e += dw * dw + dt * dt;
            }
        }
        e
    }

    fn smoothness(&self) -> f64 {
        let n = self.n as isize;
        let mut e = 0.0;
        let edges = match self.kind {
            ChainKind::Cyclic => 0..n,
            ChainKind::Open => 0..(n - 1).max(0),
        };
        for k in edges {
            let (a, b) = (self.idx(k).unwrap(), self.idx(k + 1).unwrap());
            let dw = self.w[b] as f64 - self.w[a] as f64;
            let dt = self.t[b] as f64 - self.t[a] as f64;
            if self.kind.first_w() {
                e += dw * dw;
            }
            e += dt * dt;
        }
        let centers = match self.kind {
            ChainKind::Cyclic => 0..n,
            ChainKind::Open => 1..(n - 1).max(1),
        };
        for c in centers {
            let (a, m, b) = (
                self.idx(c - 1).unwrap(),
                self.idx(c).unwrap(),
                self.idx(c + 1).unwrap(),
            );
            let dw = self.w[a] as f64 - 2.0 * self.w[m] as f64 + self.w[b] as f64;
            let dt = self.t[a] as f64 - 2.0 * self.t[m] as f64 + self.t[b] as f64;
            e += dw * dw + dt * dt;
        }
        e
    }
}

fn check_chain(costs: &[RayCosts], kind: ChainKind) -> Result<()> {
    if costs.is_empty() {
        return Err(Error::validation("empty ray chain"));
    }
    if kind == ChainKind::Cyclic && costs.len() < 3 {
        return Err(Error::validation("a cyclic chain needs at least three rays"));
    }
    Ok(())
}

/// Total chain energy of a labelling.
pub fn chain_energy(costs: &[RayCosts], w: &[usize], t: &[usize], kind: ChainKind, lambda: f64) -> f64 {
    let data: f64 = costs
        .iter()
        .zip(w.iter().zip(t))
        .map(|(c, (&wi, &ti))| c.at(wi, ti))
        .sum();
    let chain = Chain {
        kind,
        n: costs.len(),
        w,
        t,
    };
    data + lambda * chain.smoothness()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcmOutcome {
    pub w: Vec<usize>,
    pub t: Vec<usize>,
    pub energy: f64,
    pub sweeps: usize,
    /// Energy after initialisation and after every sweep.
    pub energies: Vec<f64>,
}

/// Iterated conditional modes from `init`. A ray moves only on strict
/// improvement of its local energy; among equal candidates the smallest `w`,
/// then `t`, wins.
pub fn icm(
    costs: &[RayCosts],
    init: &[(usize, usize)],
    kind: ChainKind,
    lambda: f64,
    max_sweeps: usize,
) -> Result<IcmOutcome> {
    check_chain(costs, kind)?;
    if init.len() != costs.len() {
        return Err(Error::validation("initial labelling length differs from chain length"));
    }
    for (c, &(w, t)) in costs.iter().zip(init) {
        if !c.contains(w, t) {
            return Err(Error::validation("initial labelling outside the band"));
        }
    }
    let n = costs.len();
    let mut w: Vec<usize> = init.iter().map(|p| p.0).collect();
    let mut t: Vec<usize> = init.iter().map(|p| p.1).collect();
    let mut energies = vec![chain_energy(costs, &w, &t, kind, lambda)];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for k in 0..n {
            let c = &costs[k];
            let (best_w, best_t) = {
                let chain = Chain {
                    kind,
                    n,
                    w: &w,
                    t: &t,
                };
                let local = |wk: usize, tk: usize| c.at(wk, tk) + lambda * chain.local(k, wk, tk);
                let mut best = (w[k], t[k]);
                let mut best_e = local(w[k], t[k]);
                for wk in c.w_lo..c.w_lo + c.nw {
                    for tk in c.t_lo..c.t_lo + c.nt {
                        let e = local(wk, tk);
                        if e < best_e {
                            best_e = e;
                            best = (wk, tk);
                        }
                    }
                }
                best
            };
            if (best_w, best_t) != (w[k], t[k]) {
                w[k] = best_w;
                t[k] = best_t;
                changed = true;
            }
        }
        let e = chain_energy(costs, &w, &t, kind, lambda);
        debug_assert!(e <= energies[energies.len() - 1] + 1e-9 * e.abs().max(1.0));
        energies.push(e);
        if !changed {
            break;
        }
    }
    Ok(IcmOutcome {
        energy: *energies.last().expect("initial energy"),
        w,
        t,
        sweeps,
        energies,
    })
}

/// Coupled endo/epicardial contours in polar form about `center`: ray `k`
/// leaves at angle `2πk/n` with endocardium at `w[k]` and epicardium at
/// `w[k] + t[k]` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarContour {
    pub center: Vec2,
    pub w: Vec<f64>,
    pub t: Vec<f64>,
}

impl PolarContour {
    pub fn new(center: Vec2, w: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        if w.len() != t.len() || w.len() < 3 {
            return Err(Error::validation("polar contour needs matching w/t of length >= 3"));
        }
        if w.iter().chain(&t).any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::validation("polar contour w and t must be positive"));
        }
        Ok(Self { center, w, t })
    }

    pub fn theta(k: usize, n: usize) -> f64 {
        std::f64::consts::TAU * k as f64 / n as f64
    }

    pub fn n_theta(&self) -> usize {
        self.w.len()
    }

    pub fn direction(&self, k: usize) -> Vec2 {
        angle_dir(Self::theta(k, self.n_theta()))
    }

    pub fn endo_point(&self, k: usize) -> Vec2 {
        self.center + self.direction(k) * self.w[k]
    }

    pub fn epi_point(&self, k: usize) -> Vec2 {
        self.center + self.direction(k) * (self.w[k] + self.t[k])
    }

    pub fn endo_points(&self) -> Vec<Vec2> {
        (0..self.n_theta()).map(|k| self.endo_point(k)).collect()
    }

    pub fn epi_points(&self) -> Vec<Vec2> {
        (0..self.n_theta()).map(|k| self.epi_point(k)).collect()
    }

    /// Polar form of two closed contours about the mean of all their points.
    pub fn from_contours(endo: &[Vec2], epi: &[Vec2], n_theta: usize) -> Result<Self> {
        let all: Vec<Vec2> = endo.iter().chain(epi).copied().collect();
        let center = centroid2(&all).ok_or_else(|| Error::Parameterization("empty contours".into()))?;
        Self::about(center, endo, epi, n_theta)
    }

    pub fn about(center: Vec2, endo: &[Vec2], epi: &[Vec2], n_theta: usize) -> Result<Self> {
        let mut w = Vec::with_capacity(n_theta);
        let mut t = Vec::with_capacity(n_theta);
        for k in 0..n_theta {
            let dir = angle_dir(Self::theta(k, n_theta));
            let re = radial_distance(&center, &dir, endo);
            let rp = radial_distance(&center, &dir, epi);
            match (re, rp) {
                (Some(re), Some(rp)) if rp > re => {
                    w.push(re);
                    t.push(rp - re);
                }
                _ => {
                    return Err(Error::Parameterization(format!(
                        "ray {k} does not cross the endocardium before the epicardium"
                    )))
                }
            }
        }
        Self::new(center, w, t)
    }

    pub fn translated(&self, shift: Vec2) -> Self {
        Self {
            center: self.center + shift,
            ..self.clone()
        }
    }
}

/// Otsu threshold over a histogram: the bin index `t` maximising the
/// between-class variance of bins `< t` and `>= t`, lowest on ties.
pub fn otsu_threshold(hist: &[u64]) -> Result<usize> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 1);
    for t in 1..hist.len() {
        w0 += hist[t - 1] as f64;
        s0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = s0 / w0;
        let m1 = (sum_all - s0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best.0 {
            best = (var, t);
        }
    }
    Ok(best.1)
}

/// Globally optimal 1D two-means: the split of the sorted pool with the
/// least within-cluster sum of squares, lowest split on ties. Returns
/// `(lower, upper)`.
fn two_means(pool: &[f64]) -> (f64, f64) {
    let mut v = pool.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 || v[0] == v[n - 1] {
        let c = v.first().copied().unwrap_or(f64::NAN);
        return (c, c);
    }
    // centred values keep the running sums well conditioned
    let mid = 0.5 * (v[0] + v[n - 1]);
    let tot: f64 = v.iter().map(|x| x - mid).sum();
    let tot2: f64 = v.iter().map(|x| (x - mid) * (x - mid)).sum();
    let (mut s, mut s2) = (0.0, 0.0);
    let mut best = (f64::INFINITY, v[0], v[n - 1]);
    for i in 1..n {
        let x = v[i - 1] - mid;
        s += x;
        s2 += x * x;
        if v[i] == v[i - 1] {
            continue;
        }
        let (n0, n1) = (i as f64, (n - i) as f64);
        let sse = (s2 - s * s / n0) + (tot2 - s2 - (tot - s) * (tot - s) / n1);
        if sse < best.0 {
            best = (sse, mid + s / n0, mid + (tot - s) / n1);
        }
    }
    (best.1, best.2)
}

/// Tissue intensities from all pixels inside the epicardial contours
/// (pixel coordinates, one contour per slice).
pub fn estimate_intensities(stack: &[SlicePlane], epi: &[Vec<Vec2>]) -> Result<IntensityModel> {
    if stack.is_empty() || stack.len() != epi.len() {
        return Err(Error::validation("need one epicardial contour per slice"));
    }
    let mut pool = Vec::new();
    for (plane, contour) in stack.iter().zip(epi) {
        let mask = rasterize(contour, plane.width(), plane.height());
        pool.extend(
            plane
                .pixels
                .data
                .iter()
                .zip(&mask.data)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x),
        );
    }
    if pool.len() < 100 {
        return Err(Error::validation(format!(
            "epicardial contours enclose only {} pixels",
            pool.len()
        )));
    }
    let lo = pool.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pool.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateHistogram);
    }
    let bin = |x: f64| (((x - lo) / (hi - lo) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
    let mut hist = vec![0u64; HIST_BINS];
    for &x in &pool {
        hist[bin(x)] += 1;
    }
    let t = otsu_threshold(&hist)?;
    let i_thres = lo + t as f64 * (hi - lo) / HIST_BINS as f64;
    let (dark, bright): (Vec<f64>, Vec<f64>) = pool.iter().partition(|&&x| bin(x) < t);
    let i_norm = dark.iter().sum::<f64>() / dark.len() as f64;
    let (i_blood, i_enhan) = two_means(&bright);
    Ok(IntensityModel {
        i_norm,
        i_blood,
        i_enhan,
        i_thres,
    })
}

/// Edge strength at index `j`: first- plus half the second-order absolute
/// intensity differences. `None` unless `j - 1 ..= j + 1` are valid samples.
pub fn edge_strength(profile: &[Option<f64>], j: usize) -> Option<f64> {
    if j == 0 || j + 1 >= profile.len() {
        return None;
    }
    let (a, b, c) = (profile[j - 1]?, profile[j]?, profile[j + 1]?);
    Some((b - a).abs() + (b - c).abs() + 0.5 * (c - a).abs())
}

/// Min-max normalisation of a set of strengths to `[0, 1]`. Missing
/// strengths get weight 0; a flat set gets weight 1 throughout.
pub fn edge_weights(strengths: &[Option<f64>]) -> Vec<f64> {
    let present = strengths.iter().flatten();
    let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
    strengths
        .iter()
        .map(|s| match s {
            None => 0.0,
            Some(_) if !(hi > lo) => 1.0,
            Some(v) => (v - lo) / (hi - lo),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Endo,
    Epi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePoint {
    pub position: Vec3,
    pub kind: EdgeKind,
    pub weight: f64,
    pub source: SliceLabel,
}

/// Weighted edge points; endo and epi points of one ray are stored next to
/// each other.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgePointSet {
    pub points: Vec<EdgePoint>,
}

impl EdgePointSet {
    pub fn of_kind(&self, kind: EdgeKind) -> impl Iterator<Item = &EdgePoint> + '_ {
        self.points.iter().filter(move |p| p.kind == kind)
    }

    pub fn extend(&mut self, other: EdgePointSet) {
        self.points.extend(other.points);
    }

    /// Same points with positions mapped through `f`.
    pub fn map_positions(&self, f: impl Fn(&Vec3) -> Vec3) -> EdgePointSet {
        EdgePointSet {
            points: self
                .points
                .iter()
                .map(|p| EdgePoint {
                    position: f(&p.position),
                    ..*p
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    /// Odd band width in pixels for both `w` and `t`.
    pub band: usize,
    pub lambda: f64,
    pub max_sweeps: usize,
}

/// One fitted ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayFit {
    /// Start of the ray, pixel coordinates.
    pub origin: Vec2,
    /// Unit direction, pixel coordinates.
    pub dir: Vec2,
    pub params: TemplateParams,
    pub profile: Vec<Option<f64>>,
    /// False when the ray never entered the image.
    pub valid: bool,
}

impl RayFit {
    pub fn endo(&self) -> Vec2 {
        self.origin + self.dir * self.params.w as f64
    }

    pub fn epi(&self) -> Vec2 {
        self.origin + self.dir * (self.params.w + self.params.t) as f64
    }

    pub fn endo_strength(&self) -> Option<f64> {
        self.valid.then(|| edge_strength(&self.profile, self.params.w)).flatten()
    }

    pub fn epi_strength(&self) -> Option<f64> {
        self.valid
            .then(|| edge_strength(&self.profile, self.params.w + self.params.t))
            .flatten()
    }
}

fn round_len(x: f64) -> usize {
    (x.round().max(1.0)) as usize
}

/// Sample, tabulate and ICM-optimise a chain of rays.
fn fit_chain(
    plane: &SlicePlane,
    rays: &[(Vec2, Vec2, f64, f64)],
    kind: ChainKind,
    m: &IntensityModel,
    params: &DetectParams,
) -> Result<(Vec<RayFit>, IcmOutcome)> {
    let mut costs = Vec::with_capacity(rays.len());
    let mut init = Vec::with_capacity(rays.len());
    let mut profiles = Vec::with_capacity(rays.len());
    let mut valid = Vec::with_capacity(rays.len());
    for &(origin, dir, w0, t0) in rays {
        let (w0, t0) = (round_len(w0), round_len(t0));
        let len = profile_len(w0, t0, params.band);
        let start = plane.image_to_world(&origin);
        let dir3 = plane.row_dir * dir.x + plane.col_dir * dir.y;
        let ray = Ray::new(start, dir3, plane.pixel_spacing, len)?;
        let profile = sample_along(plane, &ray)?;
        let ok = profile.iter().any(Option::is_some);
        if ok {
            costs.push(ray_costs(&profile, w0, t0, params.band, m)?);
        } else {
            costs.push(RayCosts::fixed(w0, t0));
        }
        init.push((w0, t0));
        profiles.push(profile);
        valid.push(ok);
    }
    let outcome = icm(&costs, &init, kind, params.lambda, params.max_sweeps)?;
    let fits = rays
        .iter()
        .zip(profiles)
        .zip(valid)
        .enumerate()
        .map(|(k, ((&(origin, dir, _, _), profile), valid))| RayFit {
            origin,
            dir,
            params: costs[k].params(outcome.w[k], outcome.t[k]),
            profile,
            valid,
        })
        .collect();
    Ok((fits, outcome))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaDetection {
    pub contour: PolarContour,
    pub rays: Vec<RayFit>,
    pub sweeps: usize,
    pub energy: f64,
}

/// Refine a coarse polar contour on one SA image.
pub fn detect_edges_sa(
    plane: &SlicePlane,
    coarse: &PolarContour,
    m: &IntensityModel,
    params: &DetectParams,
) -> Result<SaDetection> {
    m.validate()?;
    let n = coarse.n_theta();
    let rays: Vec<_> = (0..n)
        .map(|k| (coarse.center, coarse.direction(k), coarse.w[k], coarse.t[k]))
        .collect();
    let (fits, outcome) = fit_chain(plane, &rays, ChainKind::Cyclic, m, params)?;
    let contour = PolarContour::new(
        coarse.center,
        fits.iter().map(|f| f.params.w as f64).collect(),
        fits.iter().map(|f| f.params.t as f64).collect(),
    )?;
    Ok(SaDetection {
        contour,
        rays: fits,
        sweeps: outcome.sweeps,
        energy: outcome.energy,
    })
}

/// Fitted rays of one side of an LA image, ordered base to apex.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialContour {
    /// Fractional SA slice index of every ray.
    pub l: Vec<f64>,
    pub rays: Vec<RayFit>,
    pub sweeps: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaDetection {
    pub label: SliceLabel,
    /// Side 0 lies towards increasing image column.
    pub sides: [AxialContour; 2],
}

/// Crossings of a closed 3D polygon with a plane, in its pixel coordinates.
fn plane_crossings(plane: &SlicePlane, polygon: &[Vec3]) -> Vec<Vec2> {
    let n = polygon.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let (da, db) = (plane.signed_distance(&a), plane.signed_distance(&b));
        if (da < 0.0) != (db < 0.0) {
            let p = a + (b - a) * (da / (da - db));
            out.push(plane.world_to_image(&p));
        }
    }
    out
}

struct AxisSample {
    slice: usize,
    axis: Vec2,
    endo: [Vec2; 2],
    epi: [Vec2; 2],
}

fn split_sides(pts: &[Vec2]) -> Option<[Vec2; 2]> {
    if pts.len() != 2 {
        return None;
    }
    Some(if pts[0].x >= pts[1].x {
        [pts[0], pts[1]]
    } else {
        [pts[1], pts[0]]
    })
}

/// Detect edges in an LA image from the intersections of rigidly propagated
/// SA contours (world coordinates) with its plane. `None` when fewer than
/// three SA slices cross the plane cleanly.
pub fn detect_edges_la(
    plane: &SlicePlane,
    endo: &[Vec<Vec3>],
    epi: &[Vec<Vec3>],
    m: &IntensityModel,
    params: &DetectParams,
    n_interp: usize,
) -> Result<Option<LaDetection>> {
    m.validate()?;
    if n_interp == 0 {
        return Err(Error::validation("n_interp must be at least 1"));
    }
    if endo.len() != epi.len() {
        return Err(Error::validation("endo and epi stacks differ in length"));
    }
    let mut samples = Vec::new();
    for (k, (en, ep)) in endo.iter().zip(epi).enumerate() {
        let (Some(e), Some(p)) = (
            split_sides(&plane_crossings(plane, en)),
            split_sides(&plane_crossings(plane, ep)),
        ) else {
            continue;
        };
        let axis = (e[0] + e[1] + p[0] + p[1]) / 4.0;
        samples.push(AxisSample {
            slice: k,
            axis,
            endo: e,
            epi: p,
        });
    }
    if samples.len() < 3 {
        return Ok(None);
    }

    // (l, axis point, axis direction, endo, epi) on the densified grid
    let mut grid: Vec<(f64, Vec2, Vec2, [Vec2; 2], [Vec2; 2])> = Vec::new();
    for i in 0..samples.len() - 1 {
        let (a, b) = (&samples[i], &samples[i + 1]);
        let dir = (b.axis - a.axis).normalize();
        for j in 0..n_interp {
            let f = j as f64 / n_interp as f64;
            let lerp = |x: Vec2, y: Vec2| x + (y - x) * f;
            grid.push((
                a.slice as f64 + f * (b.slice as f64 - a.slice as f64),
                lerp(a.axis, b.axis),
                dir,
                [lerp(a.endo[0], b.endo[0]), lerp(a.endo[1], b.endo[1])],
                [lerp(a.epi[0], b.epi[0]), lerp(a.epi[1], b.epi[1])],
            ));
        }
    }
    let last = &samples[samples.len() - 1];
    let prev = &samples[samples.len() - 2];
    grid.push((
        last.slice as f64,
        last.axis,
        (last.axis - prev.axis).normalize(),
        last.endo,
        last.epi,
    ));

    let mut sides = Vec::with_capacity(2);
    for side in 0..2 {
        let rays: Vec<_> = grid
            .iter()
            .map(|(_, axis, dir, en, ep)| {
                let mut n = Vec2::new(-dir.y, dir.x);
                if n.dot(&(en[side] - axis)) < 0.0 {
                    n = -n;
                }
                let w0 = (en[side] - axis).dot(&n);
                let r0 = (ep[side] - axis).dot(&n);
                (*axis, n, w0, (r0 - w0).max(1.0))
            })
            .collect();
        let (fits, outcome) = fit_chain(plane, &rays, ChainKind::Open, m, params)?;
        sides.push(AxialContour {
            l: grid.iter().map(|g| g.0).collect(),
            rays: fits,
            sweeps: outcome.sweeps,
            energy: outcome.energy,
        });
    }
    let right = sides.pop().expect("two sides");
    let left = sides.pop().expect("two sides");
    Ok(Some(LaDetection {
        label: plane.label,
        sides: [left, right],
    }))
}

/// Weighted edge points of a group of rays whose strengths are normalised
/// together (one group for all SA endo points, one for SA epi, and so on).
fn push_points(
    out: &mut EdgePointSet,
    rays: &[(&SlicePlane, &RayFit)],
) {
    let endo_w = edge_weights(&rays.iter().map(|(_, r)| r.endo_strength()).collect::<Vec<_>>());
    let epi_w = edge_weights(&rays.iter().map(|(_, r)| r.epi_strength()).collect::<Vec<_>>());
    for (((plane, ray), we), wp) in rays.iter().zip(endo_w).zip(epi_w) {
        out.points.push(EdgePoint {
            position: plane.image_to_world(&ray.endo()),
            kind: EdgeKind::Endo,
            weight: we,
            source: plane.label,
        });
        out.points.push(EdgePoint {
            position: plane.image_to_world(&ray.epi()),
            kind: EdgeKind::Epi,
            weight: wp,
            source: plane.label,
        });
    }
}

/// Edge points of an SA stack (weights normalised over the whole stack) and
/// of each LA image (weights normalised per image), in world coordinates.
pub fn collect_edge_points(
    sa: &[(&SlicePlane, &SaDetection)],
    la: &[(&SlicePlane, &LaDetection)],
) -> EdgePointSet {
    let mut out = EdgePointSet::default();
    let sa_rays: Vec<_> = sa
        .iter()
        .flat_map(|(p, d)| d.rays.iter().map(move |r| (*p, r)))
        .collect();
    push_points(&mut out, &sa_rays);
    for (p, d) in la {
        let rays: Vec<_> = d.sides.iter().flat_map(|s| s.rays.iter().map(|r| (*p, r))).collect();
        push_points(&mut out, &rays);
    }
    out
}
