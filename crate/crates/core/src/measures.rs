//! Empirical invariant measures, bounded test functionals on `L²` and the
//! distances built from them.
//!
//! A measure pools snapshots `u(burn_in + m·stride)`, `m ≥ 1`, over
//! independent paths. Functionals are either a Gaussian of finitely many
//! projections `⟨u, p_i⟩` or a clamped affine function of `‖u‖`, optionally
//! composed with the smoothing `(I − δ_s Δ)^{-1/2}`.

use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{norms_with, TailProbe};
use crate::dynamics::{ensemble, integrate, FnObserver, Observer, PathState, SimConfig, Stepper};
use crate::error::{LlbError, Result};
use crate::field::{Grid, VectorField};
use crate::noise::{build_basis, NoiseStream};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    GaussOfProjection,
    LipschitzOfNorms,
}

/// A `[0, 1]`-valued uniformly continuous functional with a certified
/// Lipschitz constant on `L²`.
#[derive(Clone, Debug)]
pub struct TestFunctional<T: Scalar> {
    kind: FunctionalKind,
    probes: Vec<VectorField<T>>,
    center: Vec<f64>,
    width: f64,
    lift: Option<f64>,
    lipschitz: f64,
}

impl<T: Scalar> TestFunctional<T> {
    /// `exp(−Σ_i (⟨u, p_i⟩ − a_i)² / w²)`
    pub fn gauss_of_projection(probes: Vec<VectorField<T>>, center: Vec<f64>, width: f64) -> Result<Self> {
        check_width(width)?;
        let first = probes.first().ok_or_else(|| LlbError::Empty("projection needs at least one probe".into()))?;
        if probes.iter().any(|p| p.grid() != first.grid()) {
            return Err(LlbError::GridMismatch);
        }
        if center.len() != probes.len() {
            return Err(LlbError::Dimension {
                expected: probes.len(),
                got: center.len(),
            });
        }
        for p in &probes {
            p.ensure_finite("gauss_of_projection")?;
        }
        let mut g = Self {
            kind: FunctionalKind::GaussOfProjection,
            probes,
            center,
            width,
            lift: None,
            lipschitz: 0.0,
        };
        g.lipschitz = g.certify()?;
        Ok(g)
    }

    /// `clamp((a + w − ‖u‖)/w, 0, 1)`: 1 inside the ball of radius `a`,
    /// falling linearly to 0 at radius `a + w`.
    pub fn lipschitz_of_norms(center: f64, width: f64) -> Result<Self> {
        check_width(width)?;
        if !(center >= 0.0 && center.is_finite()) {
            return Err(LlbError::Parameter(format!("norm center must be >= 0, got {center}")));
        }
        Ok(Self {
            kind: FunctionalKind::LipschitzOfNorms,
            probes: Vec::new(),
            center: vec![center],
            width,
            lift: None,
            lipschitz: 1.0 / width,
        })
    }

    /// `v ↦ g((I − δ_s Δ)^{-1/2} v)`. The lift is an `L²` contraction, so the
    /// certified constant carries over.
    pub fn with_lift(mut self, delta_s: f64) -> Result<Self> {
        if !(delta_s > 0.0 && delta_s.is_finite()) {
            return Err(LlbError::Parameter(format!("smoothing parameter must be > 0, got {delta_s}")));
        }
        self.lift = Some(delta_s);
        if self.kind == FunctionalKind::GaussOfProjection {
            // ⟨Lu, p⟩ = ⟨u, Lp⟩ with L self-adjoint
            self.probes = self
                .probes
                .iter()
                .map(|p| smooth_lift(p, delta_s))
                .collect::<Result<_>>()?;
            self.lipschitz = self.lipschitz.min(self.certify()?);
        }
        Ok(self)
    }

    pub fn kind(&self) -> FunctionalKind {
        self.kind
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn lift(&self) -> Option<f64> {
        self.lift
    }

    /// Probe fields as applied (already lifted when a lift is set).
    pub fn probes(&self) -> &[VectorField<T>] {
        &self.probes
    }

    /// `|g(u) − g(v)| ≤ lipschitz()·‖u − v‖_{L²}`
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `(√2 e^{-1/2} / w)·‖P‖` with `‖P‖² = λ_max(Gram)` bounded by the
    /// largest absolute row sum.
    fn certify(&self) -> Result<f64> {
        let m = self.probes.len();
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = self.probes[i].inner(&self.probes[j])?.to_f64_lossy();
                gram[i * m + j] = v;
                gram[j * m + i] = v;
            }
        }
        let lam = (0..m)
            .map(|i| (0..m).map(|j| gram[i * m + j].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(std::f64::consts::SQRT_2 * (-0.5f64).exp() / self.width * lam.sqrt())
    }

    pub fn eval(&self, u: &VectorField<T>) -> Result<f64> {
        if let Some(p) = self.probes.first() {
            if p.grid() != u.grid() {
                return Err(LlbError::GridMismatch);
            }
        }
        u.ensure_finite("eval_functional")?;
        self.eval_unchecked(u)
    }

    fn eval_unchecked(&self, u: &VectorField<T>) -> Result<f64> {
        match self.kind {
            FunctionalKind::GaussOfProjection => {
                let mut q = 0.0;
                for (p, a) in self.probes.iter().zip(&self.center) {
                    let z = u.inner(p)?.to_f64_lossy() - a;
                    q += z * z;
                }
                Ok((-q / (self.width * self.width)).exp())
            }
            FunctionalKind::LipschitzOfNorms => {
                let norm = match self.lift {
                    Some(d) => smooth_lift(u, d)?.l2_sq(),
                    None => u.l2_sq(),
                }
                .to_f64_lossy()
                .sqrt();
                Ok(((self.center[0] + self.width - norm) / self.width).clamp(0.0, 1.0))
            }
        }
    }

    /// Stable identity used to match cached values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (self.kind as u8).hash(&mut h);
        self.width.to_bits().hash(&mut h);
        self.lift.map(f64::to_bits).hash(&mut h);
        for c in &self.center {
            c.to_bits().hash(&mut h);
        }
        for p in &self.probes {
            for comp in p.comps() {
                for v in comp {
                    v.to_f64_lossy().to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

fn check_width(width: f64) -> Result<()> {
    if width > 0.0 && width.is_finite() {
        Ok(())
    } else {
        Err(LlbError::Parameter(format!("functional width must be > 0, got {width}")))
    }
}

/// Free-function form of [`TestFunctional::eval`].
pub fn eval_functional<T: Scalar>(g: &TestFunctional<T>, u: &VectorField<T>) -> Result<f64> {
    g.eval(u)
}

/// `(I − δ_s Δ)^{-1/2} v`: multiplier `(1 + δ_s|k|²)^{-1/2}` per mode.
pub fn smooth_lift<T: Scalar>(v: &VectorField<T>, delta_s: f64) -> Result<VectorField<T>> {
    if !(delta_s > 0.0 && delta_s.is_finite()) {
        return Err(LlbError::Parameter(format!("smoothing parameter must be > 0, got {delta_s}")));
    }
    v.ensure_finite("smooth_lift")?;
    let d = T::of(delta_s);
    let k2 = v.grid().k_squared();
    let mut s = v.fft();
    s.scale_by(|i| T::one() / (T::one() + d * k2[i]).sqrt());
    Ok(s.ifft())
}

/// Provenance of an [`EmpiricalMeasure`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureMeta {
    pub epsilon: f64,
    pub delta: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub stride: f64,
    pub t_final: f64,
    pub path_count: usize,
    pub seed: u64,
}

/// One sample of a measure.
#[derive(Clone, Debug)]
pub struct Snapshot<T: Scalar> {
    pub path: u64,
    pub t: f64,
    pub step: u64,
    /// dropped in projected mode
    pub field: Option<VectorField<T>>,
    pub l2_sq: f64,
    pub h1_sq: f64,
    pub h2_sq: f64,
    /// tail masses at [`EmpiricalMeasure::tail_radii`]
    pub tails: Vec<f64>,
    /// values of the cached functionals
    pub cached: Vec<f64>,
}

/// Uniformly weighted snapshot set on one grid.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure<T: Scalar> {
    pub meta: MeasureMeta,
    grid: Grid<T>,
    snapshots: Vec<Snapshot<T>>,
    tail_radii: Vec<f64>,
    cache_keys: Vec<u64>,
}

/// Sampling protocol for [`collect_empirical_with`].
#[derive(Clone, Debug)]
pub struct Sampling<'a, T: Scalar> {
    pub burn_in: f64,
    pub stride: f64,
    /// keep full fields (otherwise only summaries and cached values)
    pub keep_fields: bool,
    /// functionals evaluated and cached at collection time
    pub cache: &'a [TestFunctional<T>],
    pub tails: Option<&'a TailProbe<T>>,
}

impl<T: Scalar> EmpiricalMeasure<T> {
    /// Assemble from explicit snapshots (e.g. loaded from disk).
    pub fn from_snapshots(meta: MeasureMeta, grid: &Grid<T>, snapshots: Vec<Snapshot<T>>, tail_radii: Vec<f64>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(LlbError::Empty("empirical measure has no snapshots".into()));
        }
        for s in &snapshots {
            if let Some(f) = &s.field {
                if f.grid() != grid {
                    return Err(LlbError::GridMismatch);
                }
            }
        }
        Ok(Self {
            meta,
            grid: grid.clone(),
            snapshots,
            tail_radii,
            cache_keys: Vec::new(),
        })
    }

    /// Point mass at `u`.
    pub fn point_mass(u: VectorField<T>, meta: MeasureMeta) -> Result<Self> {
        let n = norms_with(&u, &u.fft());
        let grid = u.grid().clone();
        let snap = Snapshot {
            path: 0,
            t: 0.0,
            step: 0,
            l2_sq: n.l2.to_f64_lossy(),
            h1_sq: n.h1.to_f64_lossy(),
            h2_sq: n.h2.to_f64_lossy(),
            field: Some(u),
            tails: Vec::new(),
            cached: Vec::new(),
        };
        Self::from_snapshots(meta, &grid, vec![snap], Vec::new())
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot<T>] {
        &self.snapshots
    }

    pub fn tail_radii(&self) -> &[f64] {
        &self.tail_radii
    }

    /// Uniform weights, summing to 1.
    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }

    pub fn has_fields(&self) -> bool {
        self.snapshots.iter().all(|s| s.field.is_some())
    }

    /// Per-snapshot values of `g`, in snapshot order.
    pub fn values(&self, g: &TestFunctional<T>) -> Result<Vec<f64>> {
        let key = g.fingerprint();
        if let Some(slot) = self.cache_keys.iter().position(|k| *k == key) {
            return Ok(self.snapshots.iter().map(|s| s.cached[slot]).collect());
        }
        if let Some(p) = g.probes.first() {
            if p.grid() != &self.grid {
                return Err(LlbError::GridMismatch);
            }
        }
        self.snapshots
            .par_iter()
            .map(|s| match &s.field {
                Some(f) => g.eval_unchecked(f),
                None => Err(LlbError::Parameter(
                    "functional was not cached and the measure holds no fields".into(),
                )),
            })
            .collect()
    }

    /// `∫ g dμ`, summed in snapshot order.
    pub fn mean(&self, g: &TestFunctional<T>) -> Result<f64> {
        Ok(self.values(g)?.iter().sum::<f64>() / self.len() as f64)
    }

    /// Mean of a per-snapshot summary.
    pub fn summary_mean(&self, f: impl Fn(&Snapshot<T>) -> f64) -> f64 {
        self.snapshots.iter().map(f).sum::<f64>() / self.len() as f64
    }

    /// Distinct path ids, ascending.
    pub fn paths(&self) -> Vec<u64> {
        let mut p: Vec<u64> = self.snapshots.iter().map(|s| s.path).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Sub-measure of the snapshots selected by `keep`.
    pub fn select(&self, keep: impl Fn(usize, &Snapshot<T>) -> bool) -> Result<Self> {
        let snapshots: Vec<_> = self
            .snapshots
            .iter()
            .enumerate()
            .filter(|(i, s)| keep(*i, s))
            .map(|(_, s)| s.clone())
            .collect();
        if snapshots.is_empty() {
            return Err(LlbError::Empty("selection left no snapshots".into()));
        }
        Ok(Self {
            meta: self.meta.clone(),
            grid: self.grid.clone(),
            snapshots,
            tail_radii: self.tail_radii.clone(),
            cache_keys: self.cache_keys.clone(),
        })
    }

    /// Deterministic split number `k` into two halves: by path when there
    /// are at least two paths, otherwise by snapshot index.
    pub fn split(&self, k: u64) -> Result<(Self, Self)> {
        let paths = self.paths();
        if paths.len() >= 2 {
            let mut order = paths.clone();
            order.sort_by_key(|p| (mix(*p ^ mix(k)), *p));
            let half: Vec<u64> = order[..order.len() / 2].to_vec();
            Ok((
                self.select(|_, s| half.contains(&s.path))?,
                self.select(|_, s| !half.contains(&s.path))?,
            ))
        } else {
            let n = self.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|i| (mix(*i as u64 ^ mix(k)), *i));
            let mut first = vec![false; n];
            for &i in &order[..n / 2] {
                first[i] = true;
            }
            Ok((self.select(|i, _| first[i])?, self.select(|i, _| !first[i])?))
        }
    }

    /// Early-time vs late-time halves of every path (stationarity check).
    pub fn split_time(&self) -> Result<(Self, Self)> {
        let ts: Vec<f64> = self.snapshots.iter().map(|s| s.t).collect();
        let (lo, hi) = ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
        let mid = 0.5 * (lo + hi);
        Ok((self.select(|_, s| s.t <= mid)?, self.select(|_, s| s.t > mid)?))
    }

    /// Lag-one (one stride) autocorrelation of `‖u‖²` within paths.
    pub fn stride_autocorrelation(&self) -> f64 {
        let m = self.summary_mean(|s| s.l2_sq);
        let var = self.summary_mean(|s| (s.l2_sq - m).powi(2));
        if var == 0.0 {
            return 0.0;
        }
        let (mut acc, mut cnt) = (0.0, 0usize);
        for w in self.snapshots.windows(2) {
            if w[0].path == w[1].path {
                acc += (w[0].l2_sq - m) * (w[1].l2_sq - m);
                cnt += 1;
            }
        }
        if cnt == 0 {
            0.0
        } else {
            acc / cnt as f64 / var
        }
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Snapshots at `t = burn_in + m·stride`, `m ≥ 1`, up to `cfg.t_final`,
/// pooled over `cfg.path_count` paths; full fields kept.
pub fn collect_empirical<T: Scalar>(
    cfg: &SimConfig,
    burn_in: f64,
    stride: f64,
    u0: &VectorField<T>,
) -> Result<EmpiricalMeasure<T>> {
    let stepper = Stepper::new(cfg, Arc::new(build_basis(u0.grid(), &cfg.noise)?))?;
    let sampling = Sampling {
        burn_in,
        stride,
        keep_fields: true,
        cache: &[],
        tails: None,
    };
    collect_empirical_with(cfg, &stepper, &sampling, u0)
}

pub fn collect_empirical_with<T: Scalar>(
    cfg: &SimConfig,
    stepper: &Stepper<T>,
    sampling: &Sampling<'_, T>,
    u0: &VectorField<T>,
) -> Result<EmpiricalMeasure<T>> {
    let dt = cfg.dt;
    if !(sampling.burn_in >= 0.0) {
        return Err(LlbError::Parameter(format!("burn-in must be >= 0, got {}", sampling.burn_in)));
    }
    if !(sampling.stride >= dt * (1.0 - 1e-9)) {
        return Err(LlbError::Parameter(format!("stride {} is below dt = {dt}", sampling.stride)));
    }
    if cfg.t_final <= sampling.burn_in {
        return Err(LlbError::Empty(format!(
            "t_final = {} leaves nothing after burn-in {}",
            cfg.t_final, sampling.burn_in
        )));
    }
    if u0.grid() != stepper.grid() {
        return Err(LlbError::GridMismatch);
    }
    let burn = (sampling.burn_in / dt).round() as u64;
    let every = ((sampling.stride / dt).round() as u64).max(1);
    let total = cfg.steps();
    if total < burn + every {
        return Err(LlbError::Empty("no sample time fits before t_final".into()));
    }
    let per_path = ensemble(cfg.path_count, |path| {
        let state = PathState::new(u0.clone(), NoiseStream::new(cfg.seed, path))?;
        let mut snaps: Vec<Snapshot<T>> = Vec::new();
        let mut failure: Option<LlbError> = None;
        let run = {
            let mut obs = FnObserver {
                name: "snapshot",
                stride: 1,
                f: |s: &PathState<T>| {
                    if s.step_index <= burn || (s.step_index - burn) % every != 0 {
                        return Ok(());
                    }
                    match snapshot(s, path, sampling) {
                        Ok(v) => {
                            snaps.push(v);
                            Ok(())
                        }
                        Err(e) => {
                            let msg = e.to_string();
                            failure = Some(e);
                            Err(msg)
                        }
                    }
                },
            };
            let mut list: [&mut dyn Observer<T>; 1] = [&mut obs];
            integrate(state, stepper, total as f64 * dt, &mut list)
        };
        match run {
            Ok(_) => Ok(snaps),
            Err(e) => Err(failure.take().unwrap_or(e)),
        }
    })?;
    let snapshots: Vec<_> = per_path.into_iter().flatten().collect();
    let meta = MeasureMeta {
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        dt,
        burn_in: sampling.burn_in,
        stride: every as f64 * dt,
        t_final: cfg.t_final,
        path_count: cfg.path_count,
        seed: cfg.seed,
    };
    let radii = sampling.tails.map(|p| p.radii().to_vec()).unwrap_or_default();
    let mut mu = EmpiricalMeasure::from_snapshots(meta, stepper.grid(), snapshots, radii)?;
    mu.cache_keys = sampling.cache.iter().map(TestFunctional::fingerprint).collect();
    Ok(mu)
}

fn snapshot<T: Scalar>(s: &PathState<T>, path: u64, sampling: &Sampling<'_, T>) -> Result<Snapshot<T>> {
    let n = norms_with(s.u(), s.spectrum());
    let tails = match sampling.tails {
        Some(p) => p.eval(s.u())?.into_iter().map(T::to_f64_lossy).collect(),
        None => Vec::new(),
    };
    let cached = sampling
        .cache
        .iter()
        .map(|g| g.eval_unchecked(s.u()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Snapshot {
        path,
        t: s.t,
        step: s.step_index,
        field: sampling.keep_fields.then(|| s.u().clone()),
        l2_sq: n.l2.to_f64_lossy(),
        h1_sq: n.h1.to_f64_lossy(),
        h2_sq: n.h2.to_f64_lossy(),
        tails,
        cached,
    })
}

/// `max_{g∈G} |∫g dμ₁ − ∫g dμ₂|`
pub fn weak_distance<T: Scalar>(mu1: &EmpiricalMeasure<T>, mu2: &EmpiricalMeasure<T>, family: &[TestFunctional<T>]) -> Result<f64> {
    if family.is_empty() {
        return Err(LlbError::Empty("functional family".into()));
    }
    if mu1.grid() != mu2.grid() {
        return Err(LlbError::GridMismatch);
    }
    let mut d = 0.0f64;
    for g in family {
        d = d.max((mu1.mean(g)? - mu2.mean(g)?).abs());
    }
    Ok(d)
}

/// Mean weak distance between the two halves of `splits` deterministic
/// splits of `mu`: the sampling-noise scale of distances involving `mu`.
pub fn split_half_floor<T: Scalar>(mu: &EmpiricalMeasure<T>, family: &[TestFunctional<T>], splits: u64) -> Result<f64> {
    if splits == 0 {
        return Err(LlbError::Parameter("need at least one split".into()));
    }
    let mut acc = 0.0;
    for k in 0..splits {
        let (a, b) = mu.split(k)?;
        acc += weak_distance(&a, &b, family)?;
    }
    Ok(acc / splits as f64)
}

/// Invariance defect with the per-functional detail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub defect: f64,
    /// `|propagated mean − static mean|` per functional
    pub per_functional: Vec<f64>,
    pub subsample: usize,
}

/// `max_g |E ∫ g(u(t, u0)) μ(du0) − ∫ g dμ|` over an evenly spaced subsample
/// of at most `subsample` snapshots, each propagated by `stepper` for time
/// `t` on the stream `(seed, index)`.
pub fn invariance_defect<T: Scalar>(
    mu: &EmpiricalMeasure<T>,
    stepper: &Stepper<T>,
    t: f64,
    family: &[TestFunctional<T>],
    subsample: usize,
    seed: u64,
) -> Result<Defect> {
    if !(t > 0.0) {
        return Err(LlbError::Parameter(format!("propagation time must be > 0, got {t}")));
    }
    if family.is_empty() {
        return Err(LlbError::Empty("functional family".into()));
    }
    if mu.grid() != stepper.grid() {
        return Err(LlbError::GridMismatch);
    }
    let n = mu.len().min(subsample);
    if n == 0 {
        return Err(LlbError::Empty("invariance-defect subsample".into()));
    }
    let picks: Vec<usize> = (0..n).map(|i| i * mu.len() / n).collect();
    let mut starts = Vec::with_capacity(n);
    for &i in &picks {
        let f = mu.snapshots[i]
            .field
            .as_ref()
            .ok_or_else(|| LlbError::Parameter("invariance defect needs stored fields".into()))?;
        starts.push(f.clone());
    }
    let ends = ensemble(n, |i| {
        let state = PathState::new(starts[i as usize].clone(), NoiseStream::new(seed, i))?;
        Ok(integrate(state, stepper, t, &mut [])?.into_field())
    })?;
    let mut per_functional = Vec::with_capacity(family.len());
    for g in family {
        let before: f64 = starts.iter().map(|u| g.eval_unchecked(u)).sum::<Result<f64>>()?;
        let after: f64 = ends.iter().map(|u| g.eval_unchecked(u)).sum::<Result<f64>>()?;
        per_functional.push(((after - before) / n as f64).abs());
    }
    Ok(Defect {
        defect: per_functional.iter().cloned().fold(0.0, f64::max),
        per_functional,
        subsample: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;

    fn grid() -> Grid<f64> {
        Grid::new(16, 4.0).unwrap()
    }

    fn probe(g: &Grid<f64>, cx: f64) -> VectorField<f64> {
        VectorField::from_fn(g, |x, y| [(-((x - cx).powi(2) + y * y)).exp(), 0.0, 0.0])
    }

    fn meta() -> MeasureMeta {
        MeasureMeta {
            epsilon: 0.0,
            delta: 0.0,
            dt: 0.01,
            burn_in: 0.0,
            stride: 0.01,
            t_final: 0.1,
            path_count: 1,
            seed: 0,
        }
    }

    #[test]
    fn gauss_is_one_at_center() {
        let g = grid();
        let p = probe(&g, 0.0);
        let u = VectorField::from_fn(&g, |x, _| [x.cos(), 0.0, 0.0]);
        let a = u.inner(&p).unwrap();
        let f = TestFunctional::gauss_of_projection(vec![p], vec![a], 0.7).unwrap();
        assert_eq!(f.eval(&u).unwrap(), 1.0);
    }

    #[test]
    fn norm_functional_clamps_along_rays() {
        let g = grid();
        let f = TestFunctional::<f64>::lipschitz_of_norms(1.0, 2.0).unwrap();
        let u = VectorField::from_fn(&g, |x, y| [x.sin(), y.cos(), 0.3]);
        let mut prev = 1.0;
        for s in [0.0, 0.01, 0.1, 0.5, 1.0, 10.0, 1e3] {
            let v = f.eval(&u.scale(s)).unwrap();
            assert!((0.0..=1.0).contains(&v) && v <= prev);
            prev = v;
        }
        assert_eq!(prev, 0.0);
        assert!(TestFunctional::<f64>::lipschitz_of_norms(1.0, 0.0).is_err());
    }

    #[test]
    fn lift_fixes_constants_and_damps_modes() {
        let g = grid();
        let c = VectorField::constant(&g, [0.5, -1.0, 2.0]);
        let lifted = smooth_lift(&c, 0.3).unwrap();
        assert!(lifted.sub(&c).unwrap().max_abs() < 1e-14);
        let k = std::f64::consts::PI / 4.0 * 2.0;
        let m = VectorField::from_fn(&g, |x, _| [(k * x).sin(), 0.0, 0.0]);
        let out = smooth_lift(&m, 0.3).unwrap();
        let expect = m.scale(1.0 / (1.0 + 0.3 * k * k).sqrt());
        assert!(out.sub(&expect).unwrap().max_abs() < 1e-13);
        assert!(smooth_lift(&m, 0.0).is_err());
    }

    #[test]
    fn two_point_masses() {
        let g = grid();
        let p = probe(&g, 0.5);
        let f = TestFunctional::gauss_of_projection(vec![p], vec![0.0], 1.0).unwrap();
        let u = VectorField::from_fn(&g, |x, y| [(-(x * x + y * y)).exp(), 0.0, 0.0]);
        let v = u.scale(-0.4);
        let mu = EmpiricalMeasure::point_mass(u.clone(), meta()).unwrap();
        let nu = EmpiricalMeasure::point_mass(v.clone(), meta()).unwrap();
        let direct = (f.eval(&u).unwrap() - f.eval(&v).unwrap()).abs();
        let fam = [f];
        assert_eq!(weak_distance(&mu, &nu, &fam).unwrap(), direct);
        assert_eq!(weak_distance(&mu, &mu, &fam).unwrap(), 0.0);
        assert_eq!(weak_distance(&nu, &mu, &fam).unwrap(), direct);
        assert!(weak_distance(&mu, &nu, &[]).is_err());
    }

    fn cfg() -> SimConfig {
        SimConfig {
            n: 16,
            half_width: 4.0,
            dt: 0.01,
            t_final: 0.1,
            path_count: 1,
            noise: NoiseSpec {
                modes: 4,
                width: 0.5,
                spacing: 0.5,
                ..NoiseSpec::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn snapshot_counting() {
        let c = cfg();
        let g = c.grid::<f64>().unwrap();
        let u0 = VectorField::from_fn(&g, |x, y| [0.2 * (-(x * x + y * y)).exp(), 0.0, 0.0]);
        let mu = collect_empirical(&c, 0.0, 0.01, &u0).unwrap();
        assert_eq!(mu.len(), 10);
        assert!((mu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let two = SimConfig { path_count: 2, ..c.clone() };
        let mu2 = collect_empirical(&two, 0.05, 0.02, &u0).unwrap();
        // t = 0.07, 0.09 per path
        assert_eq!(mu2.len(), 4);
        assert_eq!(mu2.paths(), vec![0, 1]);
        let late = SimConfig { t_final: 0.1, ..c };
        assert!(matches!(collect_empirical(&late, 0.1, 0.01, &u0), Err(LlbError::Empty(_))));
    }

    #[test]
    fn zero_equilibrium_is_invariant() {
        let c = SimConfig { epsilon: 0.0, ..cfg() };
        let g = c.grid::<f64>().unwrap();
        let mu = collect_empirical(&c, 0.0, 0.02, &VectorField::zeros(&g)).unwrap();
        assert!(mu.snapshots().iter().all(|s| s.field.as_ref().unwrap().max_abs() == 0.0));
        let fam = vec![
            TestFunctional::gauss_of_projection(vec![probe(&g, 0.0)], vec![0.1], 0.5).unwrap(),
            TestFunctional::lipschitz_of_norms(0.0, 1.0).unwrap(),
        ];
        let st = c.stepper::<f64>().unwrap();
        let d = invariance_defect(&mu, &st, 0.05, &fam, 8, 99).unwrap();
        assert_eq!(d.defect, 0.0);
    }

    #[test]
    fn projected_mode_uses_cache() {
        let c = cfg();
        let g = c.grid::<f64>().unwrap();
        let u0 = VectorField::from_fn(&g, |x, y| [0.2 * (-(x * x + y * y)).exp(), 0.0, 0.0]);
        let fam = vec![TestFunctional::gauss_of_projection(vec![probe(&g, 0.0)], vec![0.0], 0.5).unwrap()];
        let st = c.stepper::<f64>().unwrap();
        let full = collect_empirical_with(
            &c,
            &st,
            &Sampling { burn_in: 0.0, stride: 0.02, keep_fields: true, cache: &[], tails: None },
            &u0,
        )
        .unwrap();
        let proj = collect_empirical_with(
            &c,
            &st,
            &Sampling { burn_in: 0.0, stride: 0.02, keep_fields: false, cache: &fam, tails: None },
            &u0,
        )
        .unwrap();
        assert!(!proj.has_fields());
        assert_eq!(full.mean(&fam[0]).unwrap(), proj.mean(&fam[0]).unwrap());
        let other = TestFunctional::lipschitz_of_norms(0.0, 1.0).unwrap();
        assert!(proj.mean(&other).is_err());
    }
}
