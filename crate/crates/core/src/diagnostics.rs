//! Norms, smooth cut-offs, tail masses and energy checks.
//!
//! Sobolev norms use the equivalent periodic-box convention
//! `‖u‖²_{H1} = ‖u‖² + ‖∇u‖²` and `‖u‖²_{H2} = ‖u‖²_{H1} + ‖Δu‖²`, with the
//! derivative parts summed in Fourier space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{drift_terms, PathState, Stepper};
use crate::error::{LlbError, Result};
use crate::field::{gradient, Grid, Spectrum, VectorField};
use crate::noise::{diffusion_apply, WienerIncrements};
use crate::scalar::{vec3, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sobolev {
    L2,
    H1,
    H2,
}

/// All three squared norms of one field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms<T> {
    pub l2: T,
    pub h1: T,
    pub h2: T,
}

/// Squared norm of `u` of the given order.
pub fn norm_sq<T: Scalar>(u: &VectorField<T>, order: Sobolev) -> Result<T> {
    u.ensure_finite("norm_sq")?;
    let n = norms_with(u, &u.fft());
    Ok(match order {
        Sobolev::L2 => n.l2,
        Sobolev::H1 => n.h1,
        Sobolev::H2 => n.h2,
    })
}

/// Norms of `u` given its spectrum `u_hat` (not re-checked).
pub fn norms_with<T: Scalar>(u: &VectorField<T>, u_hat: &Spectrum<T>) -> Norms<T> {
    let g = u.grid();
    let k2 = g.k_squared();
    let l2 = u.l2_sq();
    let grad = u_hat.weighted_energy(|i| g.gradient_symbol_sq(i));
    let lap = u_hat.weighted_energy(|i| k2[i] * k2[i]);
    Norms {
        l2,
        h1: l2 + grad,
        h2: l2 + grad + lap,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// `θ_n(x) = θ(x/n)`
    ThetaN,
    /// `φ_j(x) = 1 − θ(x/j)`
    PhiJ,
}

/// Radial smooth step `θ`: 1 on `|x| ≤ 1/2`, 0 on `|x| ≥ 3/4`, built from
/// the `exp(−1/s)` transition in between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffFamily {
    inner: f64,
    outer: f64,
}

impl Default for CutoffFamily {
    fn default() -> Self {
        Self { inner: 0.5, outer: 0.75 }
    }
}

/// Sup bounds of the profile derivatives: `|∇θ| ≤ grad`, `|Δθ| ≤ laplacian`,
/// hence `|∇θ(·/j)| ≤ grad/j` and `|Δθ(·/j)| ≤ laplacian/j²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffBounds {
    pub grad: f64,
    pub laplacian: f64,
}

fn psi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn dpsi(t: f64) -> f64 {
    if t > 0.0 {
        psi(t) / (t * t)
    } else {
        0.0
    }
}

impl CutoffFamily {
    pub fn inner(&self) -> f64 {
        self.inner
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    /// `θ` as a function of `r = |x|`.
    pub fn profile(&self, r: f64) -> f64 {
        if r <= self.inner {
            return 1.0;
        }
        if r >= self.outer {
            return 0.0;
        }
        let s = (r - self.inner) / (self.outer - self.inner);
        let (a, b) = (psi(1.0 - s), psi(s));
        a / (a + b)
    }

    /// `dθ/dr`
    pub fn profile_slope(&self, r: f64) -> f64 {
        if r <= self.inner || r >= self.outer {
            return 0.0;
        }
        let w = self.outer - self.inner;
        let s = (r - self.inner) / w;
        let (a, b) = (psi(1.0 - s), psi(s));
        let (da, db) = (-dpsi(1.0 - s), dpsi(s));
        (da * b - a * db) / ((a + b) * (a + b)) / w
    }

    pub fn theta(&self, x: (f64, f64)) -> f64 {
        self.profile(x.0.hypot(x.1))
    }

    /// `θ_n` or `φ_j` at `x`; `scale` is `n` or `j` and must be ≥ 1.
    pub fn eval(&self, kind: CutoffKind, scale: f64, x: (f64, f64)) -> Result<f64> {
        if !(scale >= 1.0 && scale.is_finite()) {
            return Err(LlbError::Parameter(format!("cut-off scale must be >= 1, got {scale}")));
        }
        let th = self.theta((x.0 / scale, x.1 / scale));
        Ok(match kind {
            CutoffKind::ThetaN => th,
            CutoffKind::PhiJ => 1.0 - th,
        })
    }

    /// Sampled sup of `|θ'|` and `|θ'' + θ'/r|` over the transition annulus,
    /// with a 1% margin.
    pub fn derivative_bounds(&self) -> CutoffBounds {
        let samples = 20_000;
        let w = self.outer - self.inner;
        let h = 1e-6 * w;
        let (mut g, mut l) = (0.0f64, 0.0f64);
        for i in 1..samples {
            let r = self.inner + w * i as f64 / samples as f64;
            let d1 = self.profile_slope(r);
            let d2 = (self.profile_slope(r + h) - self.profile_slope(r - h)) / (2.0 * h);
            g = g.max(d1.abs());
            l = l.max((d2 + d1 / r).abs());
        }
        CutoffBounds {
            grad: 1.01 * g,
            laplacian: 1.01 * l,
        }
    }
}

/// Free-function form of [`CutoffFamily::eval`].
pub fn cutoff_eval(family: &CutoffFamily, kind: CutoffKind, scale: f64, x: (f64, f64)) -> Result<f64> {
    family.eval(kind, scale, x)
}

/// Precomputed `φ_j²` node weights for a ladder of `j` on one grid.
#[derive(Clone, Debug)]
pub struct TailProbe<T: Scalar> {
    grid: Grid<T>,
    js: Vec<f64>,
    weights: Vec<Vec<T>>,
}

impl<T: Scalar> TailProbe<T> {
    /// Every `j` must be ≥ 1 with the transition annulus inside the box,
    /// `3j/4 ≤ L`.
    pub fn new(grid: &Grid<T>, js: &[f64]) -> Result<Self> {
        let family = CutoffFamily::default();
        let l = grid.half_width().to_f64_lossy();
        let n = grid.n();
        let mut weights = Vec::with_capacity(js.len());
        for &j in js {
            if !(j >= 1.0) {
                return Err(LlbError::Parameter(format!("tail radius must be >= 1, got {j}")));
            }
            if family.outer * j > l {
                return Err(LlbError::Domain(format!(
                    "tail radius j = {j} needs 3j/4 <= L = {l}"
                )));
            }
            let mut w = Vec::with_capacity(grid.points());
            for iy in 0..n {
                for ix in 0..n {
                    let (x, y) = grid.coord(ix, iy);
                    let phi = family.eval(CutoffKind::PhiJ, j, (x.to_f64_lossy(), y.to_f64_lossy()))?;
                    w.push(T::of(phi * phi));
                }
            }
            weights.push(w);
        }
        Ok(Self {
            grid: grid.clone(),
            js: js.to_vec(),
            weights,
        })
    }

    pub fn radii(&self) -> &[f64] {
        &self.js
    }

    /// `‖φ_j u‖² + ‖φ_j ∇u‖²` for every `j`.
    pub fn eval(&self, u: &VectorField<T>) -> Result<Vec<T>> {
        if u.grid() != &self.grid {
            return Err(LlbError::GridMismatch);
        }
        let (dx, dy) = gradient(u)?;
        let area = self.grid.cell_area();
        let mut out = Vec::with_capacity(self.js.len());
        for w in &self.weights {
            let mut acc = T::zero();
            for (i, &wi) in w.iter().enumerate() {
                if wi == T::zero() {
                    continue;
                }
                let dens = vec3::norm_sq(u.at(i)) + vec3::norm_sq(dx.at(i)) + vec3::norm_sq(dy.at(i));
                acc = acc + wi * dens;
            }
            out.push(acc * area);
        }
        Ok(out)
    }
}

/// Smooth tail mass `∫ φ_j² (|u|² + |∇u|²) dx`.
pub fn tail_mass<T: Scalar>(u: &VectorField<T>, j: f64) -> Result<T> {
    u.ensure_finite("tail_mass")?;
    Ok(TailProbe::new(u.grid(), &[j])?.eval(u)?[0])
}

/// One row of a diagnostics series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub l2_sq: f64,
    pub h1_sq: f64,
    pub h2_sq: f64,
    /// keyed by the tail radius `j`
    pub tail_mass: BTreeMap<u32, f64>,
    /// `|one-step L² Itô balance residual|` of the step ending at `t`; 0 when
    /// not tracked.
    pub energy_residual: f64,
}

impl DiagnosticsRecord {
    /// Norms and tails of `state` (residual left at 0).
    pub fn of_state<T: Scalar>(state: &PathState<T>, probe: Option<&TailProbe<T>>) -> Result<Self> {
        let n = norms_with(state.u(), state.spectrum());
        let mut tail_mass = BTreeMap::new();
        if let Some(p) = probe {
            for (j, v) in p.radii().iter().zip(p.eval(state.u())?) {
                tail_mass.insert(j.round() as u32, v.to_f64_lossy());
            }
        }
        Ok(Self {
            t: state.t,
            l2_sq: n.l2.to_f64_lossy(),
            h1_sq: n.h1.to_f64_lossy(),
            h2_sq: n.h2.to_f64_lossy(),
            tail_mass,
            energy_residual: 0.0,
        })
    }
}

/// Pointwise-in-time mean of equally sampled per-path series, summed in path
/// order.
pub fn ensemble_mean(paths: &[Vec<DiagnosticsRecord>]) -> Result<Vec<DiagnosticsRecord>> {
    let first = paths.first().ok_or_else(|| LlbError::Empty("no paths to average".into()))?;
    let m = paths.len() as f64;
    let mut out = first.clone();
    for p in &paths[1..] {
        if p.len() != out.len() {
            return Err(LlbError::Dimension {
                expected: out.len(),
                got: p.len(),
            });
        }
        for (acc, r) in out.iter_mut().zip(p) {
            if acc.t != r.t {
                return Err(LlbError::Parameter(format!("series sampled at different times {} and {}", acc.t, r.t)));
            }
            acc.l2_sq += r.l2_sq;
            acc.h1_sq += r.h1_sq;
            acc.h2_sq += r.h2_sq;
            acc.energy_residual += r.energy_residual;
            for (j, v) in &r.tail_mass {
                *acc.tail_mass.entry(*j).or_insert(0.0) += v;
            }
        }
    }
    for r in &mut out {
        r.l2_sq /= m;
        r.h1_sq /= m;
        r.h2_sq /= m;
        r.energy_residual /= m;
        for v in r.tail_mass.values_mut() {
            *v /= m;
        }
    }
    Ok(out)
}

/// Outcome of testing `E‖u(t)‖²_{H1} ≤ M̂3 + M̂3 e^{−t} ‖u0‖²_{H1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// sample times where the envelope fails
    pub violations: Vec<f64>,
    /// smallest `M̂3` for which the envelope holds at every sample
    pub minimal_m3: f64,
}

pub fn dissipativity_envelope_check(
    series: &[DiagnosticsRecord],
    u0_h1_sq: f64,
    m3_hat: f64,
) -> Result<EnvelopeReport> {
    if series.is_empty() {
        return Err(LlbError::Empty("diagnostics series".into()));
    }
    if !(m3_hat > 0.0 && m3_hat.is_finite()) {
        return Err(LlbError::Parameter(format!("M3 must be positive, got {m3_hat}")));
    }
    let mut violations = Vec::new();
    let mut minimal_m3 = 0.0f64;
    for r in series {
        let shape = 1.0 + (-r.t).exp() * u0_h1_sq;
        if r.h1_sq > m3_hat * shape {
            violations.push(r.t);
        }
        minimal_m3 = minimal_m3.max(r.h1_sq / shape);
    }
    Ok(EnvelopeReport { violations, minimal_m3 })
}

/// One recorded step of a path: states around it and the increments used.
#[derive(Clone, Debug)]
pub struct BalanceSample<T: Scalar> {
    pub u_prev: VectorField<T>,
    pub u_next: VectorField<T>,
    pub incr: Vec<T>,
}

/// Step `state` `steps` times, keeping every [`BalanceSample`].
pub fn record_history<T: Scalar>(
    state: &mut PathState<T>,
    stepper: &Stepper<T>,
    steps: usize,
) -> Result<Vec<BalanceSample<T>>> {
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let u_prev = state.u().clone();
        let incr = stepper.advance(state)?;
        out.push(BalanceSample {
            u_prev,
            u_next: state.u().clone(),
            incr: incr.values,
        });
    }
    Ok(out)
}

/// Signed discrete Itô balance defect of one step:
/// `Δ‖u‖² − 2⟨b(u),u⟩dt − 2⟨σ(u)ΔW,u⟩ − ε² Σ_k ‖u×f_k+f_k‖² dt`.
pub fn step_balance<T: Scalar>(sample: &BalanceSample<T>, stepper: &Stepper<T>) -> Result<f64> {
    let basis = stepper.basis();
    if sample.incr.len() != basis.len() {
        return Err(LlbError::Parameter(format!(
            "missing increment records: expected {} values, got {}",
            basis.len(),
            sample.incr.len()
        )));
    }
    let u = &sample.u_prev;
    let dt = T::of(stepper.dt());
    let eps = stepper.epsilon();
    let b = drift_terms(u, stepper.delta(), eps, basis, stepper.terms())?;
    let incr = WienerIncrements {
        dt,
        values: sample.incr.clone(),
    };
    let noise = diffusion_apply(u, basis, &incr, eps)?;
    let mut quad = T::zero();
    if eps != T::zero() {
        for f in basis.modes() {
            let s = u.zip_map(f, |a, f| {
                let c = vec3::cross(a, f);
                [c[0] + f[0], c[1] + f[1], c[2] + f[2]]
            })?;
            quad = quad + s.l2_sq();
        }
    }
    let two = T::of(2.0);
    let lhs = sample.u_next.l2_sq() - u.l2_sq();
    let rhs = two * b.inner(u)? * dt + two * noise.inner(u)? + eps * eps * quad * dt;
    Ok((lhs - rhs).to_f64_lossy())
}

/// `|mean over paths of the summed per-step balance defects|`.
pub fn l2_balance_residual<T: Scalar>(histories: &[Vec<BalanceSample<T>>], stepper: &Stepper<T>) -> Result<f64> {
    if histories.is_empty() || histories.iter().any(Vec::is_empty) {
        return Err(LlbError::Empty("balance history".into()));
    }
    let mut total = 0.0;
    for h in histories {
        let mut acc = 0.0;
        for s in h {
            acc += step_balance(s, stepper)?;
        }
        total += acc;
    }
    Ok((total / histories.len() as f64).abs())
}
