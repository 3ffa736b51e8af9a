//! Parameter studies over `(ε, δ, dt, j, u0)` grids.
//!
//! Every study runs a deterministic set of Monte-Carlo paths, condenses them
//! into [`StudyPoint`]s and decides a list of [`Verdict`]s. Paths that are
//! compared with each other (different `δ`, different `ε`, different `dt`)
//! share their noise stream, so differences are pathwise.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diagnostics::{
    dissipativity_envelope_check, ensemble_mean, norm_sq, DiagnosticsRecord, Sobolev, TailProbe,
};
use crate::dynamics::{ensemble, PathState, Scheme, SimConfig, Stepper};
use crate::error::{LlbError, Result};
use crate::field::{Grid, VectorField};
use crate::initial::InitialCondition;
use crate::measures::{
    collect_empirical_with, invariance_defect, split_half_floor, weak_distance, EmpiricalMeasure, Sampling,
    TestFunctional,
};
use crate::noise::{build_basis, NoiseBasis, NoiseStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Viscosity,
    NoiseContinuity,
    TailUniformity,
    Dissipativity,
    InvariantLimit,
    TightnessProbe,
    SelfConvergence,
}

impl StudyKind {
    pub const ALL: [StudyKind; 7] = [
        StudyKind::Viscosity,
        StudyKind::NoiseContinuity,
        StudyKind::TailUniformity,
        StudyKind::Dissipativity,
        StudyKind::InvariantLimit,
        StudyKind::TightnessProbe,
        StudyKind::SelfConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Viscosity => "viscosity",
            StudyKind::NoiseContinuity => "noise_continuity",
            StudyKind::TailUniformity => "tail_uniformity",
            StudyKind::Dissipativity => "dissipativity",
            StudyKind::InvariantLimit => "invariant_limit",
            StudyKind::TightnessProbe => "tightness_probe",
            StudyKind::SelfConvergence => "self_convergence",
        }
    }
}

/// Pass thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// admissible EM self-convergence order under noise
    pub em_order: [f64; 2],
    /// admissible order without noise
    pub deterministic_order: [f64; 2],
    /// finest/coarsest ratio of the EM–Heun gap
    pub gap_ratio: f64,
    /// relative change of `M̂3` when the horizon doubles
    pub m3_stability: f64,
    /// minimal `R²` of the late-window linear fit of `∫‖u‖²_{H2}`
    pub linear_r2: f64,
    /// minimal deterministic decay rate of `‖u‖²_{H1}`
    pub decay_rate: f64,
    /// tail threshold as a fraction of `‖u0‖²_{H1}`
    pub tail_fraction: f64,
    /// allowed spread of the tail index `J(ε)` across `ε`
    pub j_spread: usize,
    /// admissible order of `E sup‖u^ε − u^{ε0}‖²` in `|ε − ε0|²`
    pub continuity_order: [f64; 2],
    /// `H1` radius of the initial-data ball in the continuity study
    pub ball_radius: f64,
    /// invariance defect must stay below this multiple of its floor
    pub defect_factor: f64,
    /// deterministic-integration floor of the invariance defect
    pub integrator_floor: f64,
    /// time-split distance above this multiple of the floor is inconclusive
    pub stationarity_factor: f64,
    /// moment at any rung over moment at the top rung
    pub tightness_factor: f64,
    /// confidence level of reported intervals
    pub confidence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            em_order: [0.35, 0.65],
            deterministic_order: [0.8, 1.2],
            gap_ratio: 0.25,
            m3_stability: 0.10,
            linear_r2: 0.95,
            decay_rate: 0.5,
            tail_fraction: 1e-3,
            j_spread: 1,
            continuity_order: [0.8, 1.2],
            ball_radius: 5.0,
            defect_factor: 2.0,
            integrator_floor: 1e-6,
            stationarity_factor: 3.0,
            tightness_factor: 1.1,
            confidence: 0.95,
        }
    }
}

/// Study grid. Empty lists and zero scalars are replaced by per-study
/// defaults in [`StudySpec::new`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyParams {
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
    pub dt: Vec<f64>,
    /// tail radii
    pub j: Vec<f64>,
    /// exceedance thresholds, as fractions of the baseline `E sup‖u‖_{L²}`
    pub eta: Vec<f64>,
    /// reference noise strength of the continuity and invariant-limit studies
    pub epsilon0: f64,
    pub initial: Vec<InitialCondition>,
    /// horizon of path studies (default: `t_final` of the base config)
    pub horizon: f64,
    /// time between diagnostic samples
    pub sample_every: f64,
    pub burn_in: f64,
    pub stride: f64,
    /// run length of the measure studies
    pub measure_t_final: f64,
    /// propagation time of the invariance defect
    pub defect_time: f64,
    pub defect_subsample: usize,
    pub splits: u64,
    /// number of projection probes in the functional family
    pub probes: usize,
    /// width of the projection functionals
    pub functional_width: f64,
    /// width of the norm functional
    pub norm_width: f64,
    /// lift scale of the lifted functional copies (0: none)
    pub lift: f64,
    pub tolerances: Tolerances,
}

/// A fully resolved study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub base: SimConfig,
    pub params: StudyParams,
}

impl StudySpec {
    pub fn new(kind: StudyKind, base: SimConfig, mut params: StudyParams) -> Result<Self> {
        base.validate()?;
        let fill = |v: &mut Vec<f64>, d: &[f64]| {
            if v.is_empty() {
                *v = d.to_vec();
            }
        };
        let fill_scalar = |v: &mut f64, d: f64| {
            if *v == 0.0 {
                *v = d;
            }
        };
        let p = &mut params;
        fill_scalar(&mut p.horizon, base.t_final);
        if p.initial.is_empty() {
            p.initial = match kind {
                StudyKind::Dissipativity => vec![InitialCondition::bump(1.0, 4.0), InitialCondition::bump(1.0, 100.0)],
                StudyKind::NoiseContinuity => [1.0, 4.0, 9.0, 25.0]
                    .iter()
                    .map(|&h| InitialCondition::bump(1.0, h))
                    .collect(),
                _ => vec![InitialCondition::default()],
            };
        }
        match kind {
            StudyKind::SelfConvergence => {
                fill(&mut p.epsilon, &[0.0, 1.0]);
                fill(&mut p.dt, &[2f64.powi(-6), 2f64.powi(-7), 2f64.powi(-8), 2f64.powi(-9), 2f64.powi(-10)]);
            }
            StudyKind::Dissipativity => {
                fill(&mut p.epsilon, &[0.0, 0.5, 1.0]);
                fill(&mut p.delta, &[0.0, 1e-3, 1e-1]);
                fill_scalar(&mut p.sample_every, 0.25);
            }
            StudyKind::TailUniformity => {
                fill(&mut p.epsilon, &[0.0, 0.5, 1.0]);
                fill(&mut p.delta, &[0.0, 1e-3, 1e-1]);
                fill(&mut p.j, &[4.0, 6.0, 8.0, 10.0, 12.0]);
                fill_scalar(&mut p.sample_every, 0.1);
            }
            StudyKind::Viscosity => {
                fill(&mut p.epsilon, &[0.5]);
                fill(&mut p.delta, &[1e-1, 1e-2, 1e-3, 1e-4]);
                fill(&mut p.eta, &[0.1]);
                fill_scalar(&mut p.sample_every, base.dt);
            }
            StudyKind::NoiseContinuity => {
                fill_scalar(&mut p.epsilon0, 0.5);
                let e0 = p.epsilon0;
                fill(&mut p.epsilon, &[e0 + 0.2, e0 + 0.1, e0 + 0.05, e0 + 0.025]);
                fill(&mut p.eta, &[0.05]);
                fill_scalar(&mut p.sample_every, base.dt);
            }
            StudyKind::InvariantLimit | StudyKind::TightnessProbe => {
                fill(&mut p.epsilon, &[0.5, 0.25, 0.1, 0.05]);
                fill(&mut p.j, &[12.0]);
                fill_scalar(&mut p.burn_in, 20.0);
                fill_scalar(&mut p.stride, 0.5);
                fill_scalar(&mut p.measure_t_final, 120.0);
                fill_scalar(&mut p.defect_time, 1.0);
                if p.defect_subsample == 0 {
                    p.defect_subsample = 64;
                }
                if p.splits == 0 {
                    p.splits = 4;
                }
                if p.probes == 0 {
                    p.probes = 4;
                }
                fill_scalar(&mut p.functional_width, 1.0);
                fill_scalar(&mut p.norm_width, 2.0);
            }
        }
        let spec = Self { kind, base, params };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: String| Err(LlbError::Config(m));
        for &e in p.epsilon.iter().chain([&p.epsilon0]) {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("study epsilon = {e} violates ε∈[0,1]"));
            }
        }
        for &d in &p.delta {
            if !(0.0..=1.0).contains(&d) {
                return bad(format!("study delta = {d} violates δ∈[0,1]"));
            }
        }
        for &d in &p.dt {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("study dt = {d} violates dt > 0"));
            }
        }
        for &j in &p.j {
            if !(j >= 1.0) {
                return bad(format!("tail radius j = {j} violates j ≥ 1"));
            }
        }
        for &e in &p.eta {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eta = {e} violates η > 0"));
            }
        }
        if !(p.horizon > 0.0) {
            return bad(format!("horizon = {} violates T > 0", p.horizon));
        }
        if !(p.tolerances.confidence > 0.0 && p.tolerances.confidence < 1.0) {
            return bad(format!("confidence = {} violates 0 < c < 1", p.tolerances.confidence));
        }
        Ok(())
    }

    fn variant(&self, f: impl FnOnce(&mut SimConfig)) -> SimConfig {
        let mut c = self.base.clone();
        f(&mut c);
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub outcome: Status,
    pub detail: String,
}

impl Verdict {
    fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            outcome: if pass { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome == Status::Pass
    }
}

/// One grid point of a study.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub index: usize,
    pub coords: BTreeMap<String, f64>,
    pub stats: BTreeMap<String, f64>,
    pub ci: BTreeMap<String, [f64; 2]>,
    /// set when the point was aborted
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl StudyPoint {
    fn new(coords: &[(&str, f64)]) -> Self {
        Self {
            coords: coords.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ..Self::default()
        }
    }

    fn stat(&mut self, k: &str, v: f64) {
        if v.is_finite() {
            self.stats.insert(k.to_string(), v);
        }
    }

    fn interval(&mut self, k: &str, v: [f64; 2]) {
        if v[0].is_finite() && v[1].is_finite() {
            self.ci.insert(k.to_string(), v);
        }
    }

    pub fn get(&self, k: &str) -> Option<f64> {
        self.stats.get(k).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub status: Status,
    pub verdicts: Vec<Verdict>,
    pub points: Vec<StudyPoint>,
    pub provenance: Provenance,
    /// named time series (written next to the report, not inside it)
    #[serde(skip)]
    pub series: Vec<(String, Vec<DiagnosticsRecord>)>,
}

impl StudyReport {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// Pretty, key-sorted JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    let mut out = match spec.kind {
        StudyKind::SelfConvergence => run_self_convergence(spec)?,
        StudyKind::Dissipativity => run_dissipativity(spec)?,
        StudyKind::TailUniformity => run_tail_uniformity(spec)?,
        StudyKind::Viscosity => run_viscosity(spec)?,
        StudyKind::NoiseContinuity => run_noise_continuity(spec)?,
        StudyKind::InvariantLimit | StudyKind::TightnessProbe => run_measures(spec)?,
    };
    for (i, p) in out.points.iter_mut().enumerate() {
        p.index = i;
    }
    let flagged = out.points.iter().filter(|p| p.flag.is_some()).count();
    if flagged > 0 {
        out.verdicts.push(Verdict::check(
            "no_blow_up",
            false,
            format!("{flagged} point(s) aborted on blow-up"),
        ));
    }
    let status = if out.verdicts.iter().any(|v| v.outcome == Status::Fail) {
        Status::Fail
    } else if out.verdicts.iter().any(|v| v.outcome == Status::Inconclusive) {
        Status::Inconclusive
    } else {
        Status::Pass
    };
    Ok(StudyReport {
        kind: spec.kind,
        status,
        verdicts: out.verdicts,
        points: out.points,
        provenance: Provenance {
            config_hash: crate::io::digest(serde_json::to_string(spec)?.as_bytes()),
            seed: spec.base.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        series: out.series,
    })
}

pub fn run_viscosity_study(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::Viscosity)?;
    run_study(spec)
}

pub fn run_noise_continuity_study(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::NoiseContinuity)?;
    run_study(spec)
}

pub fn run_tail_uniformity_study(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::TailUniformity)?;
    run_study(spec)
}

pub fn run_dissipativity_study(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::Dissipativity)?;
    run_study(spec)
}

pub fn run_invariant_limit_study(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::InvariantLimit)?;
    run_study(spec)
}

pub fn run_tightness_probe(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::TightnessProbe)?;
    run_study(spec)
}

pub fn run_self_convergence_study(spec: &StudySpec) -> Result<StudyReport> {
    expect_kind(spec, StudyKind::SelfConvergence)?;
    run_study(spec)
}

fn expect_kind(spec: &StudySpec, kind: StudyKind) -> Result<()> {
    if spec.kind != kind {
        return Err(LlbError::Config(format!(
            "expected a {} study, got {}",
            kind.name(),
            spec.kind.name()
        )));
    }
    Ok(())
}

#[derive(Default)]
struct Partial {
    points: Vec<StudyPoint>,
    verdicts: Vec<Verdict>,
    series: Vec<(String, Vec<DiagnosticsRecord>)>,
}

// ---------------------------------------------------------------- helpers

fn is_blow_up(e: &LlbError) -> bool {
    matches!(e, LlbError::BlowUp { .. } | LlbError::Diverged { .. })
}

/// Run `f`; a blow-up becomes `Ok(Err(message))`.
fn guarded<R>(f: impl FnOnce() -> Result<R>) -> Result<std::result::Result<R, String>> {
    match f() {
        Ok(r) => Ok(Ok(r)),
        Err(e) if is_blow_up(&e) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn steps_for(t: f64, dt: f64) -> Result<u64> {
    let s = t / dt;
    if (s - s.round()).abs() > 1e-6 * s.max(1.0) {
        return Err(LlbError::Config(format!("horizon {t} is not a multiple of dt = {dt}")));
    }
    Ok(s.round() as u64)
}

fn every_steps(sample_every: f64, dt: f64) -> u64 {
    ((sample_every / dt).round() as u64).max(1)
}

/// Advance coupled states in lockstep; `sample` sees step 0, every `every`-th
/// step and the last one.
fn lockstep(
    states: &mut [PathState<f64>],
    steppers: &[&Stepper<f64>],
    steps: u64,
    every: u64,
    mut sample: impl FnMut(&[PathState<f64>]) -> Result<()>,
) -> Result<()> {
    sample(states)?;
    for s in 1..=steps {
        for (st, sp) in states.iter_mut().zip(steppers) {
            sp.advance(st)?;
        }
        if s % every == 0 || s == steps {
            sample(states)?;
        }
    }
    Ok(())
}

fn z_value(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .map(|n| n.inverse_cdf(0.5 + confidence / 2.0))
        .unwrap_or(1.959_963_984_540_054)
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    [(centre - half).max(0.0), (centre + half).min(1.0)]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and the normal-approximation interval of the mean.
fn mean_ci(xs: &[f64], z: f64) -> (f64, [f64; 2]) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, [m, m]);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let h = z * (var / xs.len() as f64).sqrt();
    (m, [m - h, m + h])
}

/// Least-squares line `y ≈ a + b x`: `(b, a, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (b, a, r2)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

struct Setup {
    grid: Grid<f64>,
    basis: Arc<NoiseBasis<f64>>,
}

impl Setup {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let grid = cfg.grid::<f64>()?;
        let basis = Arc::new(build_basis(&grid, &cfg.noise)?);
        Ok(Self { grid, basis })
    }

    fn stepper(&self, cfg: &SimConfig) -> Result<Stepper<f64>> {
        Stepper::new(cfg, self.basis.clone())
    }
}

fn series_name(parts: &[(&str, f64)]) -> String {
    parts
        .iter()
        .map(|(k, v)| format!("{k}{v}"))
        .collect::<Vec<_>>()
        .join("_")
}

// ---------------------------------------------------------- self-convergence

fn run_self_convergence(spec: &StudySpec) -> Result<Partial> {
    let p = &spec.params;
    let dts = sorted_desc(&p.dt);
    if dts.len() < 3 {
        return Err(LlbError::Config("self-convergence needs at least three step sizes".into()));
    }
    let fine = *dts.last().unwrap();
    let mut ratios = Vec::with_capacity(dts.len());
    for d in &dts {
        let r = d / fine;
        let ri = r.round();
        if (r - ri).abs() > 1e-9 * r || !(ri as u64).is_power_of_two() {
            return Err(LlbError::Config(format!("step sizes must form a dyadic ladder, {d} is not")));
        }
        ratios.push(ri as u32);
        steps_for(p.horizon, *d)?;
    }
    let setup = Setup::new(&spec.base)?;
    let u0 = p.initial[0].build(&setup.grid)?;
    let mut out = Partial::default();
    for &eps in &p.epsilon {
        let mut em = Vec::new();
        let mut heun = Vec::new();
        for (d, r) in dts.iter().zip(&ratios) {
            let cfg = spec.variant(|c| {
                c.epsilon = eps;
                c.dt = *d;
                c.noise_substeps = *r;
                c.scheme = Scheme::EmIto;
                c.t_final = p.horizon;
            });
            let s = setup.stepper(&cfg)?;
            heun.push(s.with_scheme(Scheme::HeunStrat));
            em.push(s);
        }
        let paths = if eps == 0.0 { 1 } else { spec.base.path_count };
        let run = guarded(|| {
            ensemble(paths, |path| {
                let mut ends = Vec::with_capacity(dts.len());
                for (e, h) in em.iter().zip(&heun) {
                    let steps = steps_for(p.horizon, e.dt())?;
                    let mut a = PathState::new(u0.clone(), NoiseStream::new(spec.base.seed, path))?;
                    let mut b = a.clone();
                    for _ in 0..steps {
                        e.advance(&mut a)?;
                        h.advance(&mut b)?;
                    }
                    ends.push((a.into_field(), b.into_field()));
                }
                Ok(ends)
            })
        })?;
        let ends = match run {
            Ok(v) => v,
            Err(msg) => {
                for d in &dts {
                    let mut pt = StudyPoint::new(&[("epsilon", eps), ("dt", *d)]);
                    pt.flag = Some(msg.clone());
                    out.points.push(pt);
                }
                continue;
            }
        };
        let rms = |f: &dyn Fn(&Vec<(VectorField<f64>, VectorField<f64>)>) -> Result<f64>| -> Result<f64> {
            let mut acc = 0.0;
            for e in &ends {
                acc += f(e)?;
            }
            Ok((acc / ends.len() as f64).sqrt())
        };
        let levels = dts.len();
        let mut gap = Vec::with_capacity(levels);
        let mut em_diff = Vec::new();
        let mut heun_diff = Vec::new();
        for l in 0..levels {
            gap.push(rms(&|e| Ok(e[l].0.sub(&e[l].1)?.l2_sq()))?);
            if l + 1 < levels {
                em_diff.push(rms(&|e| Ok(e[l].0.sub(&e[l + 1].0)?.l2_sq()))?);
                heun_diff.push(rms(&|e| Ok(e[l].1.sub(&e[l + 1].1)?.l2_sq()))?);
            }
        }
        for l in 0..levels {
            let mut pt = StudyPoint::new(&[("epsilon", eps), ("dt", dts[l])]);
            pt.stat("gap_rms", gap[l]);
            pt.stat("paths", paths as f64);
            if l + 1 < levels {
                pt.stat("em_diff_rms", em_diff[l]);
                pt.stat("heun_diff_rms", heun_diff[l]);
            }
            out.points.push(pt);
        }
        let order = |diffs: &[f64]| {
            let xs: Vec<f64> = dts[..diffs.len()].iter().map(|d| d.log2()).collect();
            let ys: Vec<f64> = diffs.iter().map(|d| d.log2()).collect();
            linear_fit(&xs, &ys).0
        };
        let tol = &p.tolerances;
        let tag = format!("eps={eps}");
        if eps == 0.0 {
            let q = order(&em_diff);
            out.verdicts.push(Verdict::check(
                format!("deterministic_order[{tag}]"),
                q >= tol.deterministic_order[0] && q <= tol.deterministic_order[1],
                format!("order {q:.3} from dyadic differences {}", fmt_list(&em_diff)),
            ));
            out.verdicts.push(Verdict::check(
                format!("schemes_coincide[{tag}]"),
                gap.iter().all(|&g| g == 0.0),
                format!("EM-Heun gaps {}", fmt_list(&gap)),
            ));
        } else {
            let q = order(&em_diff);
            let ratio = gap[levels - 1] / gap[0];
            out.verdicts.push(Verdict::check(
                format!("gap_shrinks[{tag}]"),
                strictly_decreasing(&gap),
                format!("EM-Heun gaps {}", fmt_list(&gap)),
            ));
            out.verdicts.push(Verdict::check(
                format!("gap_ratio[{tag}]"),
                ratio < tol.gap_ratio,
                format!("finest/coarsest gap ratio {ratio:.4} (limit {})", tol.gap_ratio),
            ));
            out.verdicts.push(Verdict::check(
                format!("em_order[{tag}]"),
                q >= tol.em_order[0] && q <= tol.em_order[1],
                format!("order {q:.3} from dyadic differences {}", fmt_list(&em_diff)),
            ));
            out.verdicts.push(Verdict::check(
                format!("em_cauchy[{tag}]"),
                strictly_decreasing(&em_diff),
                format!("EM dyadic differences {}", fmt_list(&em_diff)),
            ));
        }
    }
    Ok(out)
}

// ------------------------------------------------------------- dissipativity

fn cumulative_trapezoid(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(ts.len());
    out.push(0.0);
    for i in 1..ts.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (ts[i] - ts[i - 1]);
        out.push(acc);
    }
    out
}

/// `R²` of the linear fit of `∫₀ᵗ‖u‖²_{H2}` on `[t_from, ∞)`; an integral that
/// does not grow over the window counts as linear.
fn h2_integral_r2(series: &[DiagnosticsRecord], t_from: f64) -> f64 {
    let ts: Vec<f64> = series.iter().map(|r| r.t).collect();
    let ys: Vec<f64> = series.iter().map(|r| r.h2_sq).collect();
    let int = cumulative_trapezoid(&ts, &ys);
    let start = ts.iter().position(|&t| t >= t_from - 1e-9).unwrap_or(0);
    let (xs, ys) = (&ts[start..], &int[start..]);
    let growth = ys.last().unwrap() - ys[0];
    if xs.len() < 3 || growth <= 1e-12 * (1.0 + ys.last().unwrap().abs()) {
        return 1.0;
    }
    linear_fit(xs, ys).2
}

fn run_dissipativity(spec: &StudySpec) -> Result<Partial> {
    let p = &spec.params;
    let tol = &p.tolerances;
    let setup = Setup::new(&spec.base)?;
    let t = p.horizon;
    let steps = steps_for(2.0 * t, spec.base.dt)?;
    let every = every_steps(p.sample_every, spec.base.dt);
    let u0s: Vec<VectorField<f64>> = p.initial.iter().map(|ic| ic.build(&setup.grid)).collect::<Result<_>>()?;
    let h1_0: Vec<f64> = u0s.iter().map(|u| norm_sq(u, Sobolev::H1)).collect::<Result<_>>()?;
    let largest = h1_0.iter().cloned().fold(0.0, f64::max);
    let mut out = Partial::default();
    for &eps in &p.epsilon {
        for &delta in &p.delta {
            let cfg = spec.variant(|c| {
                c.epsilon = eps;
                c.delta = delta;
                c.t_final = 2.0 * t;
            });
            let stepper = setup.stepper(&cfg)?;
            for (ui, u0) in u0s.iter().enumerate() {
                let coords = [("epsilon", eps), ("delta", delta), ("u0", ui as f64)];
                let mut pt = StudyPoint::new(&coords);
                let paths = if eps == 0.0 { 1 } else { cfg.path_count };
                let run = guarded(|| {
                    ensemble(paths, |path| {
                        let mut st = [PathState::new(u0.clone(), NoiseStream::new(cfg.seed, path))?];
                        let mut rec = Vec::new();
                        lockstep(&mut st, &[&stepper], steps, every, |s| {
                            rec.push(DiagnosticsRecord::of_state(&s[0], None)?);
                            Ok(())
                        })?;
                        Ok(rec)
                    })
                })?;
                let per_path = match run {
                    Ok(v) => v,
                    Err(msg) => {
                        pt.flag = Some(msg);
                        out.points.push(pt);
                        continue;
                    }
                };
                let series = ensemble_mean(&per_path)?;
                let cut = series.iter().position(|r| r.t > t + 1e-9).unwrap_or(series.len());
                let m3_t = dissipativity_envelope_check(&series[..cut], h1_0[ui], 1.0)?.minimal_m3;
                let m3_2t = dissipativity_envelope_check(&series, h1_0[ui], 1.0)?.minimal_m3;
                let rel = if m3_t > 0.0 { (m3_2t - m3_t) / m3_t } else { 0.0 };
                let late_violations = if m3_t > 0.0 {
                    dissipativity_envelope_check(&series, h1_0[ui], m3_t)?.violations.len()
                } else {
                    0
                };
                let r2 = h2_integral_r2(&series, t);
                pt.stat("u0_h1_sq", h1_0[ui]);
                pt.stat("m3_hat", m3_t);
                pt.stat("m3_hat_2t", m3_2t);
                pt.stat("m3_rel_change", rel);
                pt.stat("late_violations", late_violations as f64);
                pt.stat("h2_integral_r2", r2);
                pt.stat("paths", paths as f64);
                let tag = format!("eps={eps},delta={delta},u0={ui}");
                out.verdicts.push(Verdict::check(
                    format!("m3_stable[{tag}]"),
                    rel <= tol.m3_stability,
                    format!("M3(T) = {m3_t:.5e}, M3(2T) = {m3_2t:.5e}, change {:.2}%", 100.0 * rel),
                ));
                out.verdicts.push(Verdict::check(
                    format!("h2_integral_linear[{tag}]"),
                    r2 >= tol.linear_r2,
                    format!("late-window R² {r2:.5}"),
                ));
                if eps == 0.0 && h1_0[ui] == largest && largest > 0.0 {
                    let pts: Vec<(f64, f64)> = series
                        .iter()
                        .filter(|r| r.t <= t && r.h1_sq > 1e-12 * h1_0[ui])
                        .map(|r| (r.t, r.h1_sq.ln()))
                        .collect();
                    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                    let rate = if xs.len() >= 3 { -linear_fit(&xs, &ys).0 } else { f64::INFINITY };
                    pt.stat("decay_rate", rate);
                    out.verdicts.push(Verdict::check(
                        format!("deterministic_decay[{tag}]"),
                        rate >= tol.decay_rate,
                        format!("fitted rate {rate:.4} of ‖u‖²_H1"),
                    ));
                }
                out.series.push((format!("dissipativity_{}", series_name(&coords)), series));
                out.points.push(pt);
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------ tail uniformity

fn run_tail_uniformity(spec: &StudySpec) -> Result<Partial> {
    let p = &spec.params;
    let tol = &p.tolerances;
    let z = z_value(tol.confidence);
    let setup = Setup::new(&spec.base)?;
    let mut js = p.j.clone();
    js.sort_by(f64::total_cmp);
    js.dedup();
    let probe = TailProbe::new(&setup.grid, &js)?;
    let steps = steps_for(p.horizon, spec.base.dt)?;
    let every = every_steps(p.sample_every, spec.base.dt);
    let mut out = Partial::default();
    let mut spread_detail = Vec::new();
    let mut spread_ok = true;
    let mut worst_top = 0.0f64;
    let mut top_threshold = f64::INFINITY;
    for (ui, ic) in p.initial.iter().enumerate() {
        let u0 = ic.build(&setup.grid)?;
        let h1 = norm_sq(&u0, Sobolev::H1)?;
        let threshold = tol.tail_fraction * h1;
        top_threshold = top_threshold.min(threshold);
        let mut j_index: Vec<Option<usize>> = Vec::new();
        for &eps in &p.epsilon {
            // worst case over δ for each j
            let mut worst = vec![0.0f64; js.len()];
            for &delta in &p.delta {
                let cfg = spec.variant(|c| {
                    c.epsilon = eps;
                    c.delta = delta;
                    c.t_final = p.horizon;
                });
                let stepper = setup.stepper(&cfg)?;
                let paths = if eps == 0.0 { 1 } else { cfg.path_count };
                let run = guarded(|| {
                    ensemble(paths, |path| {
                        let mut st = [PathState::new(u0.clone(), NoiseStream::new(cfg.seed, path))?];
                        let mut rec = Vec::new();
                        lockstep(&mut st, &[&stepper], steps, every, |s| {
                            rec.push(DiagnosticsRecord::of_state(&s[0], Some(&probe))?);
                            Ok(())
                        })?;
                        Ok(rec)
                    })
                })?;
                let per_path = match run {
                    Ok(v) => v,
                    Err(msg) => {
                        for &j in &js {
                            let mut pt = StudyPoint::new(&[("epsilon", eps), ("delta", delta), ("j", j), ("u0", ui as f64)]);
                            pt.flag = Some(msg.clone());
                            out.points.push(pt);
                        }
                        worst.iter_mut().for_each(|w| *w = f64::INFINITY);
                        continue;
                    }
                };
                let mut sups = Vec::with_capacity(js.len());
                for (k, &j) in js.iter().enumerate() {
                    let key = j.round() as u32;
                    let per: Vec<f64> = per_path
                        .iter()
                        .map(|s| s.iter().map(|r| r.tail_mass[&key]).fold(0.0, f64::max))
                        .collect();
                    let (m, ci) = mean_ci(&per, z);
                    let mut pt = StudyPoint::new(&[("epsilon", eps), ("delta", delta), ("j", j), ("u0", ui as f64)]);
                    pt.stat("tail_sup_mean", m);
                    pt.stat("threshold", threshold);
                    pt.interval("tail_sup_mean", ci);
                    out.points.push(pt);
                    worst[k] = worst[k].max(m);
                    sups.push(m);
                }
                let tag = format!("eps={eps},delta={delta},u0={ui}");
                out.verdicts.push(Verdict::check(
                    format!("tail_decreasing_in_j[{tag}]"),
                    strictly_decreasing(&sups),
                    format!("E sup tail at j = {:?}: {}", js, fmt_list(&sups)),
                ));
                let coords = [("epsilon", eps), ("delta", delta), ("u0", ui as f64)];
                out.series.push((format!("tails_{}", series_name(&coords)), ensemble_mean(&per_path)?));
            }
            worst_top = worst_top.max(*worst.last().unwrap());
            j_index.push(worst.iter().position(|&w| w <= threshold));
        }
        let defined: Vec<usize> = j_index.iter().filter_map(|x| *x).collect();
        let spread = if defined.len() == j_index.len() {
            defined.iter().max().unwrap() - defined.iter().min().unwrap()
        } else {
            usize::MAX
        };
        spread_ok &= spread <= tol.j_spread;
        let shown: Vec<String> = j_index
            .iter()
            .zip(&p.epsilon)
            .map(|(i, e)| match i {
                Some(i) => format!("ε={e}: j={}", js[*i]),
                None => format!("ε={e}: none"),
            })
            .collect();
        spread_detail.push(format!("u0 {ui}: {}", shown.join(", ")));
    }
    out.verdicts.push(Verdict::check(
        "largest_j_below_threshold",
        worst_top < top_threshold,
        format!(
            "max over the grid at j = {}: {worst_top:.4e} (threshold {top_threshold:.4e})",
            js.last().unwrap()
        ),
    ));
    out.verdicts.push(Verdict::check(
        "tail_index_uniform_in_epsilon",
        spread_ok,
        format!("J(ε) per u0 ({}), allowed spread {}", spread_detail.join("; "), tol.j_spread),
    ));
    Ok(out)
}

// ----------------------------------------------------------------- viscosity

fn run_viscosity(spec: &StudySpec) -> Result<Partial> {
    let p = &spec.params;
    let tol = &p.tolerances;
    let z = z_value(tol.confidence);
    let setup = Setup::new(&spec.base)?;
    let u0 = p.initial[0].build(&setup.grid)?;
    let deltas: Vec<f64> = sorted_desc(&p.delta).into_iter().filter(|&d| d > 0.0).collect();
    if deltas.len() < 2 {
        return Err(LlbError::Config("viscosity study needs at least two positive δ".into()));
    }
    let steps = steps_for(p.horizon, spec.base.dt)?;
    let every = every_steps(p.sample_every, spec.base.dt);
    let mut out = Partial::default();
    for &eps in &p.epsilon {
        let mut cfgs = vec![spec.variant(|c| {
            c.epsilon = eps;
            c.delta = 0.0;
            c.t_final = p.horizon;
        })];
        for &d in &deltas {
            cfgs.push(spec.variant(|c| {
                c.epsilon = eps;
                c.delta = d;
                c.t_final = p.horizon;
            }));
        }
        let steppers: Vec<Stepper<f64>> = cfgs.iter().map(|c| setup.stepper(c)).collect::<Result<_>>()?;
        let refs: Vec<&Stepper<f64>> = steppers.iter().collect();
        let paths = spec.base.path_count;
        // per path: (sup‖u^{ε,0}‖, sup‖u^δ − u^0‖ per δ, ∫‖u^δ − u^0‖²_{H1} per δ)
        let run = guarded(|| {
            ensemble(paths, |path| {
                let stream = NoiseStream::new(spec.base.seed, path);
                let mut st: Vec<PathState<f64>> =
                    (0..refs.len()).map(|_| PathState::new(u0.clone(), stream)).collect::<Result<_>>()?;
                let mut base_sup = 0.0f64;
                let mut sup = vec![0.0f64; deltas.len() + 1];
                let mut prev: Option<(f64, Vec<f64>)> = None;
                let mut int = vec![0.0f64; deltas.len() + 1];
                lockstep(&mut st, &refs, steps, every, |s| {
                    base_sup = base_sup.max(s[0].u().l2_sq().sqrt());
                    let mut h1 = Vec::with_capacity(s.len());
                    for (k, x) in s.iter().enumerate() {
                        let d = x.u().sub(s[0].u())?;
                        sup[k] = sup[k].max(d.l2_sq().sqrt());
                        h1.push(if k == 0 { 0.0 } else { norm_sq(&d, Sobolev::H1)? });
                    }
                    if let Some((t0, h0)) = &prev {
                        for k in 0..h1.len() {
                            int[k] += 0.5 * (h1[k] + h0[k]) * (s[0].t - t0);
                        }
                    }
                    prev = Some((s[0].t, h1));
                    Ok(())
                })?;
                Ok((base_sup, sup, int))
            })
        })?;
        let results = match run {
            Ok(v) => v,
            Err(msg) => {
                for d in std::iter::once(0.0).chain(deltas.iter().cloned()) {
                    let mut pt = StudyPoint::new(&[("epsilon", eps), ("delta", d)]);
                    pt.flag = Some(msg.clone());
                    out.points.push(pt);
                }
                continue;
            }
        };
        let scale = mean(&results.iter().map(|r| r.0).collect::<Vec<_>>());
        let etas: Vec<f64> = p.eta.iter().map(|e| e * scale).collect();
        let mut sup_means = Vec::new();
        let mut int_means = Vec::new();
        let mut exceed: Vec<Vec<f64>> = vec![Vec::new(); etas.len()];
        for (k, d) in std::iter::once(0.0).chain(deltas.iter().cloned()).enumerate() {
            let sups: Vec<f64> = results.iter().map(|r| r.1[k]).collect();
            let ints: Vec<f64> = results.iter().map(|r| r.2[k]).collect();
            let mut pt = StudyPoint::new(&[("epsilon", eps), ("delta", d)]);
            let (ms, cs) = mean_ci(&sups, z);
            let (mi, ci) = mean_ci(&ints, z);
            pt.stat("sup_l2_mean", ms);
            pt.interval("sup_l2_mean", cs);
            pt.stat("h1_integral_mean", mi);
            pt.interval("h1_integral_mean", ci);
            pt.stat("baseline_sup_l2_mean", scale);
            for (e, (&eta, frac)) in etas.iter().zip(&p.eta).enumerate() {
                let hits = sups.iter().filter(|&&s| s > eta).count();
                let key = format!("exceed_eta{frac}");
                pt.stat(&key, hits as f64 / sups.len() as f64);
                pt.interval(&key, wilson_interval(hits, sups.len(), z));
                pt.stat(&format!("eta{frac}"), eta);
                if k > 0 {
                    exceed[e].push(hits as f64 / sups.len() as f64);
                }
            }
            if k == 0 {
                out.verdicts.push(Verdict::check(
                    format!("zero_viscosity_reproduces_baseline[eps={eps}]"),
                    ms == 0.0 && mi == 0.0,
                    format!("mean sup {ms:e}, mean integral {mi:e}"),
                ));
            } else {
                sup_means.push(ms);
                int_means.push(mi);
            }
            out.points.push(pt);
        }
        out.verdicts.push(Verdict::check(
            format!("sup_difference_decreasing[eps={eps}]"),
            strictly_decreasing(&sup_means),
            format!("E sup‖u^δ − u^0‖ along δ = {:?}: {}", deltas, fmt_list(&sup_means)),
        ));
        out.verdicts.push(Verdict::check(
            format!("h1_integral_decreasing[eps={eps}]"),
            strictly_decreasing(&int_means),
            format!("E∫‖u^δ − u^0‖²_H1 along δ: {}", fmt_list(&int_means)),
        ));
        for (e, frac) in p.eta.iter().enumerate() {
            out.verdicts.push(Verdict::check(
                format!("exceedance_non_increasing[eps={eps},eta={frac}]"),
                non_increasing(&exceed[e]),
                format!("P(sup > {:.4e}) along δ: {}", etas[e], fmt_list(&exceed[e])),
            ));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------- noise continuity

fn run_noise_continuity(spec: &StudySpec) -> Result<Partial> {
    let p = &spec.params;
    let tol = &p.tolerances;
    let z = z_value(tol.confidence);
    let setup = Setup::new(&spec.base)?;
    let e0 = p.epsilon0;
    let mut ladder: Vec<f64> = p.epsilon.iter().cloned().filter(|&e| e != e0).collect();
    ladder.sort_by(|a, b| (b - e0).abs().total_cmp(&(a - e0).abs()));
    ladder.dedup();
    if ladder.len() < 2 {
        return Err(LlbError::Config("noise-continuity study needs at least two ε ≠ ε0".into()));
    }
    let steps = steps_for(p.horizon, spec.base.dt)?;
    let every = every_steps(p.sample_every, spec.base.dt);
    let mut cfgs = vec![spec.variant(|c| {
        c.epsilon = e0;
        c.t_final = p.horizon;
    })];
    for &e in &ladder {
        cfgs.push(spec.variant(|c| {
            c.epsilon = e;
            c.t_final = p.horizon;
        }));
    }
    let steppers: Vec<Stepper<f64>> = cfgs.iter().map(|c| setup.stepper(c)).collect::<Result<_>>()?;
    let refs: Vec<&Stepper<f64>> = steppers.iter().collect();
    let mut out = Partial::default();
    // max over u0, per rung
    let mut worst_ms = vec![0.0f64; ladder.len()];
    let mut worst_exceed = vec![vec![0.0f64; ladder.len()]; p.eta.len()];
    let mut ball_ok = true;
    let mut aborted = false;
    for (ui, ic) in p.initial.iter().enumerate() {
        let u0 = ic.build(&setup.grid)?;
        let h1 = norm_sq(&u0, Sobolev::H1)?.sqrt();
        ball_ok &= h1 <= tol.ball_radius * (1.0 + 1e-12);
        let run = guarded(|| {
            ensemble(spec.base.path_count, |path| {
                let stream = NoiseStream::new(spec.base.seed, path);
                let mut st: Vec<PathState<f64>> =
                    (0..refs.len()).map(|_| PathState::new(u0.clone(), stream)).collect::<Result<_>>()?;
                let mut base_sup = 0.0f64;
                let mut sup = vec![0.0f64; ladder.len()];
                lockstep(&mut st, &refs, steps, every, |s| {
                    base_sup = base_sup.max(s[0].u().l2_sq().sqrt());
                    for k in 1..s.len() {
                        sup[k - 1] = sup[k - 1].max(s[k].u().sub(s[0].u())?.l2_sq().sqrt());
                    }
                    Ok(())
                })?;
                Ok((base_sup, sup))
            })
        })?;
        let results = match run {
            Ok(v) => v,
            Err(msg) => {
                for &e in &ladder {
                    let mut pt = StudyPoint::new(&[("epsilon", e), ("epsilon0", e0), ("u0", ui as f64)]);
                    pt.flag = Some(msg.clone());
                    out.points.push(pt);
                }
                aborted = true;
                continue;
            }
        };
        let scale = mean(&results.iter().map(|r| r.0).collect::<Vec<_>>());
        let mut ms_list = Vec::new();
        for (k, &e) in ladder.iter().enumerate() {
            let sups: Vec<f64> = results.iter().map(|r| r.1[k]).collect();
            let sq: Vec<f64> = sups.iter().map(|s| s * s).collect();
            let (ms, ci) = mean_ci(&sq, z);
            let mut pt = StudyPoint::new(&[("epsilon", e), ("epsilon0", e0), ("u0", ui as f64)]);
            pt.stat("u0_h1", h1);
            pt.stat("mean_sup_sq", ms);
            pt.interval("mean_sup_sq", ci);
            pt.stat("baseline_sup_l2_mean", scale);
            for (a, frac) in p.eta.iter().enumerate() {
                let eta = frac * scale;
                let hits = sups.iter().filter(|&&s| s > eta).count();
                let f = hits as f64 / sups.len() as f64;
                let key = format!("exceed_eta{frac}");
                pt.stat(&key, f);
                pt.interval(&key, wilson_interval(hits, sups.len(), z));
                pt.stat(&format!("eta{frac}"), eta);
                worst_exceed[a][k] = worst_exceed[a][k].max(f);
            }
            worst_ms[k] = worst_ms[k].max(ms);
            ms_list.push(ms);
            out.points.push(pt);
        }
        let xs: Vec<f64> = ladder.iter().map(|e| ((e - e0) * (e - e0)).ln()).collect();
        let ys: Vec<f64> = ms_list.iter().map(|m| m.ln()).collect();
        let q = linear_fit(&xs, &ys).0;
        out.verdicts.push(Verdict::check(
            format!("continuity_order[u0={ui}]"),
            q >= tol.continuity_order[0] && q <= tol.continuity_order[1],
            format!("order {q:.3} of E sup‖u^ε − u^ε0‖² in |ε − ε0|², values {}", fmt_list(&ms_list)),
        ));
    }
    if !aborted {
        out.verdicts.push(Verdict::check(
            "worst_case_decreasing",
            strictly_decreasing(&worst_ms),
            format!("max over u0 of E sup‖u^ε − u^ε0‖² along {:?}: {}", ladder, fmt_list(&worst_ms)),
        ));
        for (a, frac) in p.eta.iter().enumerate() {
            out.verdicts.push(Verdict::check(
                format!("worst_exceedance_non_increasing[eta={frac}]"),
                non_increasing(&worst_exceed[a]),
                format!("max over u0 of P(sup > η): {}", fmt_list(&worst_exceed[a])),
            ));
        }
    }
    out.verdicts.push(Verdict::check(
        "initial_data_in_ball",
        ball_ok,
        format!("all ‖u0‖_H1 ≤ {}", tol.ball_radius),
    ));
    Ok(out)
}

// ------------------------------------------------------------------ measures

/// Projection probes (normalized noise modes), a norm functional and,
/// optionally, lifted copies of the projections.
pub fn functional_family(basis: &NoiseBasis<f64>, params: &StudyParams) -> Result<Vec<TestFunctional<f64>>> {
    let mut out = Vec::new();
    let take = params.probes.min(basis.len());
    let mut probes = Vec::with_capacity(take);
    for f in basis.modes().iter().take(take) {
        let n = f.l2_sq().sqrt();
        if n == 0.0 {
            return Err(LlbError::Parameter("noise mode with zero norm cannot be a probe".into()));
        }
        probes.push(f.scale(1.0 / n));
    }
    for p in &probes {
        out.push(TestFunctional::gauss_of_projection(vec![p.clone()], vec![0.0], params.functional_width)?);
    }
    out.push(TestFunctional::lipschitz_of_norms(0.0, params.norm_width)?);
    if params.lift > 0.0 {
        for p in &probes {
            out.push(
                TestFunctional::gauss_of_projection(vec![p.clone()], vec![0.0], params.functional_width)?
                    .with_lift(params.lift)?,
            );
        }
    }
    Ok(out)
}

fn run_measures(spec: &StudySpec) -> Result<Partial> {
    let p = &spec.params;
    let tol = &p.tolerances;
    let full = spec.kind == StudyKind::InvariantLimit;
    let setup = Setup::new(&spec.base)?;
    let u0 = p.initial[0].build(&setup.grid)?;
    let family = functional_family(&setup.basis, p)?;
    let mut js = p.j.clone();
    js.sort_by(f64::total_cmp);
    let probe = TailProbe::new(&setup.grid, &js)?;
    let ladder = sorted_desc(&p.epsilon);
    if ladder.is_empty() {
        return Err(LlbError::Config("measure study needs an ε ladder".into()));
    }
    let e0 = p.epsilon0;
    let mut rungs = ladder.clone();
    if full {
        rungs.push(e0);
    }
    let mut out = Partial::default();
    let mut measures: Vec<(f64, EmpiricalMeasure<f64>, Stepper<f64>)> = Vec::new();
    for &eps in &rungs {
        let cfg = spec.variant(|c| {
            c.epsilon = eps;
            c.t_final = p.measure_t_final;
            if eps == 0.0 {
                c.path_count = 1;
            }
        });
        let stepper = setup.stepper(&cfg)?;
        let sampling = Sampling {
            burn_in: p.burn_in,
            stride: p.stride,
            // fields are only needed where the invariance defect propagates
            keep_fields: full && (eps == e0 || eps == *ladder.last().unwrap()),
            cache: &family,
            tails: Some(&probe),
        };
        match guarded(|| collect_empirical_with(&cfg, &stepper, &sampling, &u0))? {
            Ok(mu) => measures.push((eps, mu, stepper)),
            Err(msg) => {
                let mut pt = StudyPoint::new(&[("epsilon", eps)]);
                pt.flag = Some(msg);
                out.points.push(pt);
                return Ok(out);
            }
        }
    }
    let mut floors = Vec::new();
    for (eps, mu, _) in &measures {
        let floor = split_half_floor(mu, &family, p.splits)?;
        let (a, b) = mu.split_time()?;
        let drift = weak_distance(&a, &b, &family)?;
        let mut pt = StudyPoint::new(&[("epsilon", *eps)]);
        pt.stat("snapshots", mu.len() as f64);
        pt.stat("split_half_floor", floor);
        pt.stat("time_split_distance", drift);
        pt.stat("stride_autocorrelation", mu.stride_autocorrelation());
        pt.stat("l2_mean", mu.summary_mean(|s| s.l2_sq));
        pt.stat("h1_mean", mu.summary_mean(|s| s.h1_sq));
        pt.stat("h2_mean", mu.summary_mean(|s| s.h2_sq));
        for (k, j) in mu.tail_radii().iter().enumerate() {
            pt.stat(&format!("tail_j{j}_mean"), mu.summary_mean(|s| s.tails[k]));
        }
        let reference = floor.max(tol.integrator_floor);
        let stationary = drift <= tol.stationarity_factor * reference;
        out.verdicts.push(Verdict {
            name: format!("stationarity[eps={eps}]"),
            outcome: if stationary { Status::Pass } else { Status::Inconclusive },
            detail: format!("time-split distance {drift:.4e} vs floor {reference:.4e}"),
        });
        floors.push(floor);
        out.points.push(pt);
    }

    if full {
        let last = measures.len() - 1;
        let reference = &measures[last].1;
        let mut dists = Vec::with_capacity(ladder.len());
        for (k, (_, mu, _)) in measures[..last].iter().enumerate() {
            let d = weak_distance(mu, reference, &family)?;
            out.points[k].stat("distance_to_limit", d);
            dists.push(d);
        }
        let mut ok = strictly_decreasing(&dists);
        let mut margins = Vec::new();
        for k in 0..dists.len().saturating_sub(1) {
            let dec = dists[k] - dists[k + 1];
            let floor = floors[k].max(floors[k + 1]);
            ok &= dec > floor;
            margins.push(format!("{dec:.3e} vs {floor:.3e}"));
        }
        out.verdicts.push(Verdict::check(
            "distance_to_limit_decreasing",
            ok,
            format!(
                "d(μ^ε, μ^{e0}) along ε = {:?}: {}; decrements vs floors: {}",
                ladder,
                fmt_list(&dists),
                margins.join(", ")
            ),
        ));
        for idx in [last - 1, last] {
            let (eps, mu, stepper) = &measures[idx];
            let defect = invariance_defect(mu, stepper, p.defect_time, &family, p.defect_subsample, spec.base.seed ^ 0xDEFEC7)?;
            let floor = floors[idx].max(tol.integrator_floor);
            out.points[idx].stat("invariance_defect", defect.defect);
            out.points[idx].stat("defect_floor", floor);
            out.verdicts.push(Verdict::check(
                format!("invariance_defect[eps={eps}]"),
                defect.defect <= tol.defect_factor * floor,
                format!(
                    "defect {:.4e} over {} propagated snapshots, limit {:.4e}",
                    defect.defect,
                    defect.subsample,
                    tol.defect_factor * floor
                ),
            ));
        }
    }

    // tightness across the ladder, relative to the top rung
    let top = &measures[0].1;
    let h2_top = top.summary_mean(|s| s.h2_sq);
    let h2: Vec<f64> = measures[..ladder.len()].iter().map(|m| m.1.summary_mean(|s| s.h2_sq)).collect();
    let h2_ok = h2.iter().all(|&v| v <= tol.tightness_factor * h2_top);
    out.verdicts.push(Verdict::check(
        "h2_moment_uniform",
        h2_ok,
        format!("mean ‖u‖²_H2 along ε = {:?}: {}", ladder, fmt_list(&h2)),
    ));
    let kt = js.len() - 1;
    let tails: Vec<f64> = measures[..ladder.len()].iter().map(|m| m.1.summary_mean(|s| s.tails[kt])).collect();
    let h1: Vec<f64> = measures[..ladder.len()].iter().map(|m| m.1.summary_mean(|s| s.h1_sq)).collect();
    let tail_top = tails[0];
    let tail_ok = tails.iter().all(|&v| v <= tol.tightness_factor * tail_top)
        && tails.iter().zip(&h1).all(|(t, h)| *t <= tol.tail_fraction * h);
    out.verdicts.push(Verdict::check(
        "tail_uniform",
        tail_ok,
        format!(
            "mean tail at j = {} along ε: {} (mean ‖u‖²_H1 {})",
            js[kt],
            fmt_list(&tails),
            fmt_list(&h1)
        ),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseFamily, NoiseSpec};

    fn tiny_base() -> SimConfig {
        SimConfig {
            epsilon: 0.5,
            dt: 0.02,
            t_final: 0.4,
            n: 16,
            half_width: 6.0,
            path_count: 4,
            noise: NoiseSpec {
                family: NoiseFamily::GaussianBump,
                modes: 4,
                width: 0.75,
                spacing: 0.75,
                ..NoiseSpec::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn wilson_matches_reference_values() {
        // 8 of 20 at 95%: (0.2188, 0.6134)
        let [lo, hi] = wilson_interval(8, 20, z_value(0.95));
        assert!((lo - 0.21876).abs() < 1e-4 && (hi - 0.61336).abs() < 1e-4, "{lo} {hi}");
        let [lo, hi] = wilson_interval(0, 10, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.35);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (b, a, r2) = linear_fit(&xs, &ys);
        assert!((b + 0.5).abs() < 1e-12 && (a - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn defaults_fill_per_kind() {
        let s = StudySpec::new(StudyKind::Viscosity, tiny_base(), StudyParams::default()).unwrap();
        assert_eq!(s.params.delta, vec![1e-1, 1e-2, 1e-3, 1e-4]);
        assert_eq!(s.params.horizon, 0.4);
        let s = StudySpec::new(StudyKind::NoiseContinuity, tiny_base(), StudyParams::default()).unwrap();
        assert_eq!(s.params.initial.len(), 4);
        assert_eq!(s.params.epsilon0, 0.5);
    }

    #[test]
    fn out_of_range_epsilon_rejected() {
        let params = StudyParams {
            epsilon: vec![0.5, 1.5],
            ..StudyParams::default()
        };
        let e = StudySpec::new(StudyKind::TailUniformity, tiny_base(), params).unwrap_err();
        assert!(e.to_string().contains("ε∈[0,1]"), "{e}");
    }

    #[test]
    fn viscosity_zero_delta_point_is_exactly_zero() {
        let params = StudyParams {
            delta: vec![1e-2, 1e-3],
            initial: vec![InitialCondition::bump(0.75, 1.0)],
            ..StudyParams::default()
        };
        let spec = StudySpec::new(StudyKind::Viscosity, tiny_base(), params).unwrap();
        let r = run_study(&spec).unwrap();
        let base = &r.points[0];
        assert_eq!(base.coords["delta"], 0.0);
        assert_eq!(base.get("sup_l2_mean"), Some(0.0));
        assert!(r.verdict("zero_viscosity_reproduces_baseline[eps=0.5]").unwrap().passed());
    }

    #[test]
    fn report_json_is_deterministic() {
        let params = StudyParams {
            epsilon: vec![0.0, 0.5],
            delta: vec![0.0],
            horizon: 0.2,
            sample_every: 0.1,
            initial: vec![InitialCondition::bump(0.75, 1.0)],
            ..StudyParams::default()
        };
        let spec = StudySpec::new(StudyKind::Dissipativity, tiny_base(), params).unwrap();
        let a = run_study(&spec).unwrap().to_json().unwrap();
        let b = run_study(&spec).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"kind\": \"dissipativity\""));
    }

    #[test]
    fn blow_up_flags_point() {
        let out = guarded::<()>(|| Err(LlbError::BlowUp { term: "noise", t: 1.0 })).unwrap();
        assert!(out.unwrap_err().contains("blow-up"));
        assert!(guarded::<()>(|| Err(LlbError::Config("x".into()))).is_err());
    }
}
