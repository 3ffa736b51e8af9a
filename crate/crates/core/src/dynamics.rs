//! Drift assembly and time integration of the (viscous) stochastic LLB
//! equation
//!
//! ```text
//! du = [Δu − δΔ²u + u×Δu − (1+|u|²)u + (ε²/2)Σ(u×f_k)×f_k] dt
//!      + ε Σ (u×f_k + f_k) dW_k
//! ```
//!
//! One step of either scheme is a Lie splitting:
//!
//! 1. local pointwise flows with `Δu` frozen at the start of the step: the
//!    precession `a' = a×Δu` is advanced by a Cayley rotation about `Δu`, and
//!    the reaction `a' = −(1+|a|²)a` by its closed-form Bernoulli flow
//!    (the two commute because rotation preserves `|a|`);
//! 2. the stochastic increment, dealiased by the 2/3 rule;
//! 3. an implicit solve of `Δ − δΔ²`, diagonal in Fourier space.
//!
//! `em_ito` discretizes the Itô form (Euler–Maruyama noise plus the Itô
//! drift); `heun_strat` discretizes the Stratonovich form with a midpoint
//! predictor-corrector for the noise and no correction drift.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LlbError, Result};
use crate::field::{self, biharmonic, cross, cubic_damping, dealias, laplacian, Grid, Spectrum, VectorField};
use crate::noise::{build_basis, ito_correction, NoiseBasis, NoiseSpec, NoiseStream, WienerIncrements};
use crate::scalar::{vec3, Scalar};

/// Upper bound on `dt·k_max²·max(1, δ·k_max²)`.
pub const STIFFNESS_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EmIto,
    HeunStrat,
}

/// Which deterministic drift terms are active. All on reproduces the model;
/// switching terms off gives the structural probes (e.g. pure precession).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftTerms {
    /// `Δu − δΔ²u`
    pub diffusion: bool,
    /// `u×Δu`
    pub precession: bool,
    /// `−(1+|u|²)u`
    pub reaction: bool,
}

impl Default for DriftTerms {
    fn default() -> Self {
        Self {
            diffusion: true,
            precession: true,
            reaction: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub epsilon: f64,
    /// 0 is the unregularized equation.
    pub delta: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n: usize,
    pub half_width: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub path_count: usize,
    /// Base Wiener increments summed per step (dyadic coupling).
    pub noise_substeps: u32,
    pub terms: DriftTerms,
    pub noise: NoiseSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            delta: 0.0,
            dt: 0.01,
            t_final: 5.0,
            n: 128,
            half_width: 16.0,
            scheme: Scheme::EmIto,
            seed: 0,
            path_count: 16,
            noise_substeps: 1,
            terms: DriftTerms::default(),
            noise: NoiseSpec::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LlbError::Config(msg));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon = {} violates ε∈[0,1]", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta = {} violates δ∈[0,1]", self.delta));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt = {} violates dt > 0", self.dt));
        }
        if !(self.t_final >= self.dt) {
            return bad(format!("t_final = {} violates t_final ≥ dt = {}", self.t_final, self.dt));
        }
        if self.n < 8 || self.n % 2 != 0 {
            return bad(format!("n = {} violates: N even and N ≥ 8", self.n));
        }
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return bad(format!("half_width = {} violates L > 0", self.half_width));
        }
        if self.path_count == 0 {
            return bad("path_count must be ≥ 1".into());
        }
        if self.noise_substeps == 0 {
            return bad("noise_substeps must be ≥ 1".into());
        }
        let k2 = (std::f64::consts::PI * self.n as f64 / (2.0 * self.half_width)).powi(2);
        let stiff = self.dt * k2 * (self.delta * k2).max(1.0);
        if stiff > STIFFNESS_CAP {
            return bad(format!(
                "dt·k_max²·max(1, δ·k_max²) = {stiff:.3} exceeds the bound {STIFFNESS_CAP}"
            ));
        }
        Ok(())
    }

    pub fn grid<T: Scalar>(&self) -> Result<Grid<T>> {
        Grid::new(self.n, T::of(self.half_width))
    }

    /// Validate, then build grid, basis and stepper.
    pub fn stepper<T: Scalar>(&self) -> Result<Stepper<T>> {
        self.validate()?;
        let grid = self.grid::<T>()?;
        let basis = Arc::new(build_basis(&grid, &self.noise)?);
        Stepper::new(self, basis)
    }

    pub fn steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }
}

/// One Monte-Carlo realization.
#[derive(Clone, Debug)]
pub struct PathState<T: Scalar> {
    u: VectorField<T>,
    u_hat: Spectrum<T>,
    pub t: f64,
    pub step_index: u64,
    pub stream: NoiseStream,
}

impl<T: Scalar> PathState<T> {
    pub fn new(u0: VectorField<T>, stream: NoiseStream) -> Result<Self> {
        Self::resume(u0, 0.0, 0, stream)
    }

    /// State at an arbitrary step (e.g. loaded from a checkpoint).
    pub fn resume(u: VectorField<T>, t: f64, step_index: u64, stream: NoiseStream) -> Result<Self> {
        u.ensure_finite("path_state")?;
        let u_hat = u.fft();
        Ok(Self {
            u,
            u_hat,
            t,
            step_index,
            stream,
        })
    }

    pub fn u(&self) -> &VectorField<T> {
        &self.u
    }

    pub fn spectrum(&self) -> &Spectrum<T> {
        &self.u_hat
    }

    pub fn into_field(self) -> VectorField<T> {
        self.u
    }
}

/// Everything one step needs, precomputed from a [`SimConfig`].
#[derive(Clone, Debug)]
pub struct Stepper<T: Scalar> {
    grid: Grid<T>,
    basis: Arc<NoiseBasis<T>>,
    eps: T,
    delta: T,
    dt: T,
    dt_f64: f64,
    scheme: Scheme,
    substeps: u32,
    terms: DriftTerms,
    implicit: Vec<T>,
}

impl<T: Scalar> Stepper<T> {
    pub fn new(cfg: &SimConfig, basis: Arc<NoiseBasis<T>>) -> Result<Self> {
        cfg.validate()?;
        let grid = basis.grid().clone();
        if grid.n() != cfg.n || grid.half_width() != T::of(cfg.half_width) {
            return Err(LlbError::GridMismatch);
        }
        let dt = T::of(cfg.dt);
        let delta = T::of(cfg.delta);
        let implicit = grid
            .k_squared()
            .iter()
            .map(|&k2| {
                if cfg.terms.diffusion {
                    T::one() / (T::one() + dt * (k2 + delta * k2 * k2))
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self {
            grid,
            basis,
            eps: T::of(cfg.epsilon),
            delta,
            dt,
            dt_f64: cfg.dt,
            scheme: cfg.scheme,
            substeps: cfg.noise_substeps,
            terms: cfg.terms,
            implicit,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn basis(&self) -> &Arc<NoiseBasis<T>> {
        &self.basis
    }

    pub fn dt(&self) -> f64 {
        self.dt_f64
    }

    pub fn epsilon(&self) -> T {
        self.eps
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn terms(&self) -> DriftTerms {
        self.terms
    }

    /// Same stepper with a different scheme (shares the basis).
    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        Self { scheme, ..self.clone() }
    }

    /// Increments the next step of `state` will consume.
    pub fn increments(&self, state: &PathState<T>) -> WienerIncrements<T> {
        let values = state
            .stream
            .increments(state.step_index, self.substeps, self.basis.len(), self.dt_f64)
            .into_iter()
            .map(T::of)
            .collect();
        WienerIncrements { dt: self.dt, values }
    }

    /// Advance `state` by one step in place, returning the increments used.
    pub fn advance(&self, state: &mut PathState<T>) -> Result<WienerIncrements<T>> {
        if state.u.grid() != &self.grid {
            return Err(LlbError::GridMismatch);
        }
        let incr = self.increments(state);
        let t_next = (state.step_index + 1) as f64 * self.dt_f64;
        let blow = |term| LlbError::BlowUp { term, t: t_next };

        let local = self.local_flow(state)?;
        if !local.is_finite() {
            return Err(blow("local flow (precession/reaction)"));
        }
        let mut rhs = if self.terms.precession || self.terms.reaction {
            local.fft()
        } else {
            state.u_hat.clone()
        };
        if self.eps != T::zero() {
            let e = self.stochastic_increment(&state.u, &incr.values);
            if !e.is_finite() {
                return Err(blow("noise"));
            }
            let mut e_hat = e.fft();
            field::dealias_spectrum(&mut e_hat);
            for (r, e) in rhs.comps_mut().iter_mut().zip(e_hat.comps()) {
                for (a, b) in r.iter_mut().zip(e) {
                    *a = *a + *b;
                }
            }
        }
        let m = &self.implicit;
        rhs.scale_by(|i| m[i]);
        let u_next = rhs.ifft();
        if !u_next.is_finite() {
            return Err(blow("implicit solve"));
        }
        // recomputed rather than reused so that a state rebuilt from its
        // physical field (checkpoint resume) continues bit-for-bit
        state.u_hat = u_next.fft();
        state.u = u_next;
        state.step_index += 1;
        state.t = t_next;
        Ok(incr)
    }

    /// Functional form of [`Stepper::advance`].
    pub fn step(&self, state: &PathState<T>) -> Result<PathState<T>> {
        let mut next = state.clone();
        self.advance(&mut next)?;
        Ok(next)
    }

    pub fn step_em_ito(&self, state: &PathState<T>) -> Result<PathState<T>> {
        self.with_scheme(Scheme::EmIto).step(state)
    }

    pub fn step_heun_strat(&self, state: &PathState<T>) -> Result<PathState<T>> {
        self.with_scheme(Scheme::HeunStrat).step(state)
    }

    fn local_flow(&self, state: &PathState<T>) -> Result<VectorField<T>> {
        let u = &state.u;
        if !(self.terms.precession || self.terms.reaction) {
            return Ok(u.clone());
        }
        let lap = if self.terms.precession {
            let mut s = state.u_hat.clone();
            let k2 = self.grid.k_squared();
            s.scale_by(|i| -k2[i]);
            Some(s.ifft())
        } else {
            None
        };
        let dt = self.dt;
        let e1 = (-dt).exp();
        let one_minus_e2 = -(-(dt + dt)).exp_m1();
        let mut out = u.clone();
        let len = self.grid.points();
        let [ox, oy, oz] = out.comps_mut();
        let (ox, oy, oz) = (&mut ox[..len], &mut oy[..len], &mut oz[..len]);
        if let Some(lap) = &lap {
            let [lx, ly, lz] = lap.comps();
            let (lx, ly, lz) = (&lx[..len], &ly[..len], &lz[..len]);
            for i in 0..len {
                let r = rotate([ox[i], oy[i], oz[i]], [lx[i], ly[i], lz[i]], dt);
                ox[i] = r[0];
                oy[i] = r[1];
                oz[i] = r[2];
            }
        }
        if self.terms.reaction {
            for i in 0..len {
                let y = ox[i] * ox[i] + oy[i] * oy[i] + oz[i] * oz[i];
                let s = e1 / (T::one() + y * one_minus_e2).sqrt();
                ox[i] = ox[i] * s;
                oy[i] = oy[i] * s;
                oz[i] = oz[i] * s;
            }
        }
        Ok(out)
    }

    fn stochastic_increment(&self, u: &VectorField<T>, incr: &[T]) -> VectorField<T> {
        let mut out = self.basis.combine(incr);
        let eps = self.eps;
        let half = T::of(0.5);
        let ito = half * eps * eps * self.dt;
        let len = self.grid.points();
        let [ux, uy, uz] = u.comps();
        let (ux, uy, uz) = (&ux[..len], &uy[..len], &uz[..len]);
        let scheme = self.scheme;
        let [fx, fy, fz] = out.comps_mut();
        let (fx, fy, fz) = (&mut fx[..len], &mut fy[..len], &mut fz[..len]);
        for i in 0..len {
            let a = [ux[i], uy[i], uz[i]];
            let f = [fx[i], fy[i], fz[i]];
            let c = vec3::cross(a, f);
            let kick = [eps * (c[0] + f[0]), eps * (c[1] + f[1]), eps * (c[2] + f[2])];
            let v = match scheme {
                Scheme::EmIto => {
                    let d = self.basis.ito_at(i, a);
                    [kick[0] + ito * d[0], kick[1] + ito * d[1], kick[2] + ito * d[2]]
                }
                Scheme::HeunStrat => {
                    // midpoint of u and the predictor u + σ(u)ΔW
                    let mid = [a[0] + half * kick[0], a[1] + half * kick[1], a[2] + half * kick[2]];
                    let c = vec3::cross(mid, f);
                    [eps * (c[0] + f[0]), eps * (c[1] + f[1]), eps * (c[2] + f[2])]
                }
            };
            fx[i] = v[0];
            fy[i] = v[1];
            fz[i] = v[2];
        }
        out
    }
}

/// Cayley (implicit midpoint) step of `a' = a × b` with `b` frozen: a
/// rotation about `−b`, so `|a|` is preserved exactly.
#[inline]
fn rotate<T: Scalar>(a: [T; 3], b: [T; 3], dt: T) -> [T; 3] {
    let h = -dt * T::of(0.5);
    let w = [b[0] * h, b[1] * h, b[2] * h];
    let wa = vec3::cross(w, a);
    let wwa = vec3::cross(w, wa);
    let s = T::of(2.0) / (T::one() + vec3::norm_sq(w));
    [
        a[0] + s * (wa[0] + wwa[0]),
        a[1] + s * (wa[1] + wwa[1]),
        a[2] + s * (wa[2] + wwa[2]),
    ]
}

/// `Δu − δΔ²u + u×Δu − (1+|u|²)u + (ε²/2)Σ(u×f_k)×f_k`, nonlinear products
/// dealiased.
pub fn drift<T: Scalar>(u: &VectorField<T>, delta: T, eps: T, basis: &NoiseBasis<T>) -> Result<VectorField<T>> {
    drift_terms(u, delta, eps, basis, DriftTerms::default())
}

/// [`drift`] restricted to the active `terms`; the Itô term follows `eps`.
pub fn drift_terms<T: Scalar>(
    u: &VectorField<T>,
    delta: T,
    eps: T,
    basis: &NoiseBasis<T>,
    terms: DriftTerms,
) -> Result<VectorField<T>> {
    let finite = |v: VectorField<T>, term: &'static str| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(LlbError::Diverged { term })
        }
    };
    let lap = finite(laplacian(u)?, "laplacian")?;
    let mut out = VectorField::zeros(u.grid());
    if terms.diffusion {
        out.axpy(T::one(), &lap)?;
        if delta != T::zero() {
            let b = finite(biharmonic(u)?, "biharmonic")?;
            out.axpy(-delta, &b)?;
        }
    }
    if terms.precession {
        let p = finite(dealias(&cross(u, &lap)?), "precession")?;
        out.axpy(T::one(), &p)?;
    }
    if terms.reaction {
        let r = finite(dealias(&cubic_damping(u)?), "reaction")?;
        out.axpy(-T::one(), &r)?;
    }
    if eps != T::zero() {
        let c = finite(dealias(&ito_correction(u, basis, eps)?), "ito_correction")?;
        out.axpy(T::one(), &c)?;
    }
    Ok(out)
}

/// Callback invoked every `stride` global steps during [`integrate`].
pub trait Observer<T: Scalar> {
    fn name(&self) -> &str {
        "observer"
    }

    fn stride(&self) -> u64;

    fn observe(&mut self, state: &PathState<T>) -> std::result::Result<(), String>;
}

/// Closure-backed [`Observer`].
pub struct FnObserver<F> {
    pub name: &'static str,
    pub stride: u64,
    pub f: F,
}

impl<T: Scalar, F> Observer<T> for FnObserver<F>
where
    F: FnMut(&PathState<T>) -> std::result::Result<(), String>,
{
    fn name(&self) -> &str {
        self.name
    }

    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(&mut self, state: &PathState<T>) -> std::result::Result<(), String> {
        (self.f)(state)
    }
}

/// Step `state` to `t_final`, calling each observer whenever the global step
/// index is a multiple of its stride (stride 0 never fires).
pub fn integrate<T: Scalar>(
    mut state: PathState<T>,
    stepper: &Stepper<T>,
    t_final: f64,
    observers: &mut [&mut dyn Observer<T>],
) -> Result<PathState<T>> {
    let dt = stepper.dt();
    let remaining = (t_final - state.t) / dt;
    if remaining < -1e-9 {
        return Err(LlbError::Parameter(format!(
            "t_final = {t_final} is before the current time {}",
            state.t
        )));
    }
    let steps = remaining.round().max(0.0) as u64;
    for _ in 0..steps {
        stepper.advance(&mut state)?;
        for obs in observers.iter_mut() {
            let stride = obs.stride();
            if stride > 0 && state.step_index % stride == 0 {
                obs.observe(&state).map_err(|reason| LlbError::Observer {
                    name: obs.name().to_string(),
                    step: state.step_index,
                    reason,
                })?;
            }
        }
    }
    Ok(state)
}

/// Run `job` for every path id in `0..count` (in parallel when a pool is
/// available) and return results in path order.
pub fn ensemble<R, F>(count: usize, job: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync + Send,
{
    (0..count as u64).into_par_iter().map(job).collect()
}

/// `‖a − b‖²_{L²}`
pub fn l2_distance_sq<T: Scalar>(a: &VectorField<T>, b: &VectorField<T>) -> Result<T> {
    Ok(a.sub(b)?.l2_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseFamily;

    fn cfg(eps: f64, delta: f64, dt: f64) -> SimConfig {
        SimConfig {
            epsilon: eps,
            delta,
            dt,
            t_final: 1.0,
            n: 16,
            half_width: 4.0,
            noise: NoiseSpec {
                modes: 4,
                width: 0.5,
                spacing: 0.5,
                ..NoiseSpec::default()
            },
            ..SimConfig::default()
        }
    }

    fn constant_state(s: &Stepper<f64>, v: [f64; 3]) -> PathState<f64> {
        PathState::new(VectorField::constant(s.grid(), v), NoiseStream::new(1, 0)).unwrap()
    }

    #[test]
    fn validation_cites_violated_bounds() {
        let mut c = cfg(1.5, 0.0, 0.01);
        assert!(c.validate().unwrap_err().to_string().contains("ε∈[0,1]"));
        c.epsilon = 0.5;
        c.delta = -0.1;
        assert!(c.validate().unwrap_err().to_string().contains("δ∈[0,1]"));
        c.delta = 1.0;
        c.n = 256;
        c.half_width = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("exceeds"));
    }

    #[test]
    fn drift_of_constant_and_zero() {
        let s = cfg(0.0, 0.3, 0.01).stepper::<f64>().unwrap();
        let g = s.grid().clone();
        let d = drift(&VectorField::constant(&g, [1.0, 0.0, 0.0]), 0.3, 0.0, s.basis()).unwrap();
        for i in 0..g.points() {
            let v = d.at(i);
            assert!((v[0] + 2.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        }
        let z = drift(&VectorField::zeros(&g), 0.3, 1.0, s.basis()).unwrap();
        assert!(z.max_abs() < 1e-14);
    }

    #[test]
    fn drift_of_single_mode_matches_pointwise_oracle() {
        let c = SimConfig { n: 64, half_width: 8.0, ..cfg(0.0, 1.0, 0.001) };
        let s = c.stepper::<f64>().unwrap();
        let g = s.grid().clone();
        let k = std::f64::consts::PI * 2.0 / 8.0;
        let (a, b) = (0.7, 0.4);
        let u = VectorField::from_fn(&g, |x, y| [a * (k * x).sin(), b * (k * y).cos(), 0.2]);
        let d = drift(&u, 1.0, 0.0, s.basis()).unwrap();
        let lin = -(k * k) - k.powi(4);
        let oracle = VectorField::from_fn(&g, |x, y| {
            let uu = [a * (k * x).sin(), b * (k * y).cos(), 0.2];
            let lap = [-k * k * uu[0], -k * k * uu[1], 0.0];
            let p = vec3::cross(uu, lap);
            let r = 1.0 + vec3::norm_sq(uu);
            [
                lin * uu[0] + p[0] - r * uu[0],
                lin * uu[1] + p[1] - r * uu[1],
                p[2] - r * uu[2],
            ]
        });
        assert!(d.sub(&oracle).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn one_step_of_the_reaction_flow() {
        // closed-form Bernoulli flow over dt = 0.01 from |u|² = 1
        let s = SimConfig { terms: DriftTerms::default(), ..cfg(0.0, 0.0, 0.01) }
            .stepper::<f64>()
            .unwrap();
        let next = s.step_em_ito(&constant_state(&s, [1.0, 0.0, 0.0])).unwrap();
        let e = (-0.02f64).exp();
        let expect = (e / (1.0 + (1.0 - e))).sqrt();
        assert!((next.u().at(0)[0] - expect).abs() < 1e-14);
        // first-order agreement with the explicit Euler value 1 − 0.01·2
        assert!((next.u().at(0)[0] - 0.98).abs() < 1e-3);
        assert_eq!(next.step_index, 1);
        assert!((next.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn schemes_coincide_without_noise() {
        let s = cfg(0.0, 0.1, 0.01).stepper::<f64>().unwrap();
        let g = s.grid().clone();
        let u = VectorField::from_fn(&g, |x, y| [(0.5 * x).sin(), (0.3 * y).cos(), 0.1 * x]);
        let st = PathState::new(u, NoiseStream::new(3, 0)).unwrap();
        let a = s.step_em_ito(&st).unwrap();
        let b = s.step_heun_strat(&st).unwrap();
        assert_eq!(a.u(), b.u());
    }

    #[test]
    fn additive_noise_needs_no_correction() {
        let s = cfg(1.0, 0.0, 0.01).stepper::<f64>().unwrap();
        let st = PathState::new(VectorField::zeros(s.grid()), NoiseStream::new(9, 2)).unwrap();
        let incr = s.increments(&st);
        let f = s.basis().combine(&incr.values);
        // u = 0 in the noise: both schemes add f, the EM Itô term vanishes at 0
        let em = s.with_scheme(Scheme::EmIto).stochastic_increment(&VectorField::zeros(s.grid()), &incr.values);
        let hn = s.with_scheme(Scheme::HeunStrat).stochastic_increment(&VectorField::zeros(s.grid()), &incr.values);
        let heun_extra = hn.sub(&em).unwrap();
        // Heun keeps ½ε²(F×F) = 0 plus nothing else
        assert!(heun_extra.max_abs() < 1e-15);
        assert!(em.sub(&f).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn determinism_of_trajectories() {
        let s = cfg(0.7, 0.01, 0.01).stepper::<f64>().unwrap();
        let g = s.grid().clone();
        let u0 = VectorField::from_fn(&g, |x, y| [(-(x * x + y * y) / 4.0).exp(), 0.0, 0.0]);
        let run = || integrate(PathState::new(u0.clone(), NoiseStream::new(5, 1)).unwrap(), &s, 0.5, &mut []).unwrap();
        assert_eq!(run().u(), run().u());
    }

    #[test]
    fn observer_counting_and_empty_horizon() {
        let s = cfg(0.5, 0.0, 0.01).stepper::<f64>().unwrap();
        let st = constant_state(&s, [0.1, 0.0, 0.0]);
        let (mut a, mut b) = (0, 0);
        {
            let mut o1 = FnObserver { name: "a", stride: 1, f: |_: &PathState<f64>| { a += 1; Ok(()) } };
            let mut o10 = FnObserver { name: "b", stride: 10, f: |_: &PathState<f64>| { b += 1; Ok(()) } };
            let end = integrate(st.clone(), &s, 1.0, &mut [&mut o1, &mut o10]).unwrap();
            assert_eq!(end.step_index, 100);
        }
        assert_eq!((a, b), (100, 10));
        let mut calls = 0;
        {
            let mut o = FnObserver { name: "c", stride: 1, f: |_: &PathState<f64>| { calls += 1; Ok(()) } };
            let same = integrate(st.clone(), &s, 0.0, &mut [&mut o]).unwrap();
            assert_eq!(same.u(), st.u());
        }
        assert_eq!(calls, 0);
    }

    #[test]
    fn observer_errors_abort_with_context() {
        let s = cfg(0.5, 0.0, 0.01).stepper::<f64>().unwrap();
        let st = constant_state(&s, [0.1, 0.0, 0.0]);
        let mut o = FnObserver { name: "boom", stride: 3, f: |_: &PathState<f64>| Err("full".to_string()) };
        let err = integrate(st, &s, 1.0, &mut [&mut o]).unwrap_err();
        assert!(matches!(err, LlbError::Observer { step: 3, .. }));
    }

    #[test]
    fn blow_up_is_reported() {
        let s = cfg(0.0, 0.0, 0.01).stepper::<f64>().unwrap();
        let mut st = constant_state(&s, [1.0, 0.0, 0.0]);
        st.u.set(0, [f64::INFINITY, 0.0, 0.0]);
        assert!(matches!(s.advance(&mut st), Err(LlbError::BlowUp { .. })));
    }

    #[test]
    fn fourier_family_runs() {
        let c = SimConfig {
            noise: NoiseSpec { family: NoiseFamily::FourierBump, modes: 5, ..NoiseSpec::default() },
            ..cfg(1.0, 0.0, 0.01)
        };
        let s = c.stepper::<f64>().unwrap();
        let end = integrate(constant_state(&s, [0.0; 3]), &s, 0.2, &mut []).unwrap();
        assert!(end.u().max_abs() > 0.0);
    }

    #[test]
    fn rotation_preserves_length_and_solves_precession() {
        let a: [f64; 3] = [0.3, -0.2, 0.9];
        let b: [f64; 3] = [1.0, 2.0, -0.5];
        let dt = 1e-4;
        let r = rotate(a, b, dt);
        assert!((vec3::norm_sq(r) - vec3::norm_sq(a)).abs() < 1e-15);
        let c = vec3::cross(a, b);
        for k in 0..3 {
            assert!((r[k] - a[k] - dt * c[k]).abs() < 1e-7);
        }
    }
}
