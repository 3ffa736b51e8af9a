//! Noise coefficients `{f_k}`, Wiener increments and the stochastic terms
//! `ε Σ (u×f_k + f_k) dW_k` and `(ε²/2) Σ (u×f_k)×f_k`.
//!
//! Two coefficient families are provided. Both multiply a fixed profile by the
//! amplitude schedule `a·k^{-s}` (`k = 1, 2, …`), so `Σ_k ‖f_k‖_{W^{1,∞}∩H¹}`
//! is dominated by `a·C·ζ(s)` and stays finite under truncation whenever
//! `s > 1`. Mode `k` points along the canonical axis `e_{(k-1) mod 3}`, which
//! makes the noise genuinely non-commutative.
//!
//! Increments come from counter-based streams: the value for
//! `(seed, path, step, mode)` is a pure function of that key.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LlbError, Result};
use crate::field::{gradient, VectorField};
use crate::field::Grid;
use crate::scalar::{vec3, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Low-wavenumber Fourier modes of the box, normalized by `1 + |κ|`.
    FourierBump,
    /// Gaussians `exp(-|x-c|²/(2w²))` on a square lattice of centers.
    GaussianBump,
}

/// Reconstructible description of a basis (stored in run manifests).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub modes: usize,
    pub decay: f64,
    pub amplitude: f64,
    /// Gaussian standard deviation (ignored by the Fourier family).
    pub width: f64,
    /// Lattice spacing of the Gaussian centers.
    pub spacing: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            family: NoiseFamily::GaussianBump,
            modes: 16,
            decay: 2.0,
            amplitude: 1.0,
            width: 1.0,
            spacing: 1.0,
        }
    }
}

/// `‖f_k‖_{W^{1,∞}} = sup|f| + sup|∇f|` and `‖f_k‖_{H¹}` evaluated on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModeNorms {
    pub w1_inf: f64,
    pub h1: f64,
}

impl ModeNorms {
    pub fn combined(&self) -> f64 {
        self.w1_inf + self.h1
    }
}

#[derive(Clone, Debug)]
pub struct NoiseBasis<T: Scalar> {
    grid: Grid<T>,
    spec: Option<NoiseSpec>,
    modes: Vec<VectorField<T>>,
    norms: Vec<ModeNorms>,
    summability: f64,
    /// `Σ_k f_k f_kᵀ − |f_k|² I` stored as (xx, yy, zz, xy, xz, yz).
    ito_tensor: [Vec<T>; 6],
}

impl<T: Scalar> NoiseBasis<T> {
    /// Wrap an explicit list of coefficient fields.
    pub fn from_modes(grid: &Grid<T>, modes: Vec<VectorField<T>>) -> Result<Self> {
        Self::assemble(grid, None, modes)
    }

    fn assemble(grid: &Grid<T>, spec: Option<NoiseSpec>, modes: Vec<VectorField<T>>) -> Result<Self> {
        if modes.is_empty() {
            return Err(LlbError::Parameter("noise basis needs at least one mode".into()));
        }
        let mut norms = Vec::with_capacity(modes.len());
        for f in &modes {
            if f.grid() != grid {
                return Err(LlbError::GridMismatch);
            }
            f.ensure_finite("build_basis")?;
            norms.push(mode_norms(f)?);
        }
        let summability = norms.iter().map(ModeNorms::combined).sum();
        let len = grid.points();
        let mut t: [Vec<T>; 6] = std::array::from_fn(|_| vec![T::zero(); len]);
        for f in &modes {
            for i in 0..len {
                let v = f.at(i);
                let sq = vec3::norm_sq(v);
                t[0][i] = t[0][i] + v[0] * v[0] - sq;
                t[1][i] = t[1][i] + v[1] * v[1] - sq;
                t[2][i] = t[2][i] + v[2] * v[2] - sq;
                t[3][i] = t[3][i] + v[0] * v[1];
                t[4][i] = t[4][i] + v[0] * v[2];
                t[5][i] = t[5][i] + v[1] * v[2];
            }
        }
        Ok(Self {
            grid: grid.clone(),
            spec,
            modes,
            norms,
            summability,
            ito_tensor: t,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn spec(&self) -> Option<&NoiseSpec> {
        self.spec.as_ref()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[VectorField<T>] {
        &self.modes
    }

    pub fn norms(&self) -> &[ModeNorms] {
        &self.norms
    }

    /// `Σ_k (‖f_k‖_{W^{1,∞}} + ‖f_k‖_{H¹})`
    pub fn summability_value(&self) -> f64 {
        self.summability
    }

    /// Analytic upper bound of the untruncated series for the generating
    /// schedule: `a · C_profile · ζ(s)` with `ζ(s) ≤ s/(s−1)`.
    pub fn majorant(&self) -> Option<f64> {
        let spec = self.spec.as_ref()?;
        let zeta = spec.decay / (spec.decay - 1.0);
        let profile = match spec.family {
            NoiseFamily::GaussianBump => {
                let w = spec.width;
                1.0 + (-0.5f64).exp() / w + (std::f64::consts::PI * (w * w + 1.0)).sqrt()
            }
            NoiseFamily::FourierBump => 2.0 + self.grid.area().to_f64_lossy().sqrt(),
        };
        Some(spec.amplitude * profile * zeta)
    }

    /// `F = Σ_k f_k ΔW_k`
    pub(crate) fn combine(&self, incr: &[T]) -> VectorField<T> {
        let mut out = VectorField::zeros(&self.grid);
        for (f, w) in self.modes.iter().zip(incr) {
            let w = *w;
            for c in 0..3 {
                for (o, v) in out.comps_mut()[c].iter_mut().zip(&f.comps()[c]) {
                    *o = *o + w * *v;
                }
            }
        }
        out
    }

    /// `Σ_k (u×f_k)×f_k` at node `i`, via the precomputed tensor.
    #[inline]
    pub(crate) fn ito_at(&self, i: usize, u: [T; 3]) -> [T; 3] {
        let t = &self.ito_tensor;
        [
            t[0][i] * u[0] + t[3][i] * u[1] + t[4][i] * u[2],
            t[3][i] * u[0] + t[1][i] * u[1] + t[5][i] * u[2],
            t[4][i] * u[0] + t[5][i] * u[1] + t[2][i] * u[2],
        ]
    }

    fn check(&self, u: &VectorField<T>, incr_len: Option<usize>) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(LlbError::GridMismatch);
        }
        if let Some(k) = incr_len {
            if k != self.len() {
                return Err(LlbError::Dimension {
                    expected: self.len(),
                    got: k,
                });
            }
        }
        Ok(())
    }
}

fn mode_norms<T: Scalar>(f: &VectorField<T>) -> Result<ModeNorms> {
    let (dx, dy) = gradient(f)?;
    let sup = f.max_abs().to_f64_lossy();
    let mut sup_grad = 0.0f64;
    for i in 0..f.grid().points() {
        let g = vec3::norm_sq(dx.at(i)) + vec3::norm_sq(dy.at(i));
        sup_grad = sup_grad.max(g.to_f64_lossy().sqrt());
    }
    let h1_sq = (f.l2_sq() + dx.l2_sq() + dy.l2_sq()).to_f64_lossy();
    Ok(ModeNorms {
        w1_inf: sup + sup_grad,
        h1: h1_sq.sqrt(),
    })
}

/// Build `K` coefficient fields of the requested family.
pub fn build_basis<T: Scalar>(grid: &Grid<T>, spec: &NoiseSpec) -> Result<NoiseBasis<T>> {
    if spec.modes == 0 {
        return Err(LlbError::Parameter("noise basis needs K >= 1".into()));
    }
    if !(spec.decay > 1.0) {
        return Err(LlbError::Summability(spec.decay));
    }
    if !(spec.amplitude.is_finite() && spec.amplitude >= 0.0) {
        return Err(LlbError::Parameter(format!("noise amplitude must be >= 0, got {}", spec.amplitude)));
    }
    let amp = |k: usize| spec.amplitude * (k as f64 + 1.0).powf(-spec.decay);
    let axis = |k: usize| {
        let mut d = [T::zero(); 3];
        d[k % 3] = T::one();
        d
    };
    let modes = match spec.family {
        NoiseFamily::FourierBump => {
            let waves = fourier_modes(grid.n());
            if spec.modes > waves.len() {
                return Err(LlbError::Resolution(format!(
                    "{} Fourier modes requested but only {} are resolved",
                    spec.modes,
                    waves.len()
                )));
            }
            let base = std::f64::consts::PI / grid.half_width().to_f64_lossy();
            waves
                .iter()
                .take(spec.modes)
                .enumerate()
                .map(|(k, &(mx, my, sine))| {
                    let (kx, ky) = (base * mx as f64, base * my as f64);
                    let scale = amp(k) / (1.0 + (kx * kx + ky * ky).sqrt());
                    let d = axis(k);
                    VectorField::from_fn(grid, |x, y| {
                        let phase = kx * x.to_f64_lossy() + ky * y.to_f64_lossy();
                        let s = T::of(scale * if sine { phase.sin() } else { phase.cos() });
                        [d[0] * s, d[1] * s, d[2] * s]
                    })
                })
                .collect()
        }
        NoiseFamily::GaussianBump => {
            let h = grid.spacing().to_f64_lossy();
            if !(spec.width >= h) {
                return Err(LlbError::Resolution(format!(
                    "bump width {} is below the grid spacing {h}",
                    spec.width
                )));
            }
            if !(spec.spacing > 0.0) {
                return Err(LlbError::Parameter(format!("center spacing must be > 0, got {}", spec.spacing)));
            }
            let centers = lattice_centers(spec.modes, spec.spacing);
            let reach = grid.half_width().to_f64_lossy() - 6.0 * spec.width;
            if let Some(c) = centers.iter().find(|c| c.0.abs().max(c.1.abs()) > reach) {
                return Err(LlbError::Resolution(format!(
                    "bump centered at ({}, {}) does not fit inside the box",
                    c.0, c.1
                )));
            }
            let inv = 1.0 / (2.0 * spec.width * spec.width);
            centers
                .iter()
                .enumerate()
                .map(|(k, &(cx, cy))| {
                    let a = amp(k);
                    let d = axis(k);
                    VectorField::from_fn(grid, |x, y| {
                        let (rx, ry) = (x.to_f64_lossy() - cx, y.to_f64_lossy() - cy);
                        let s = T::of(a * (-(rx * rx + ry * ry) * inv).exp());
                        [d[0] * s, d[1] * s, d[2] * s]
                    })
                })
                .collect()
        }
    };
    NoiseBasis::assemble(grid, Some(spec.clone()), modes)
}

/// Resolved wave vectors `(mx, my, sine?)` ordered by `|m|²`; the zero mode
/// comes first (cosine only).
fn fourier_modes(n: usize) -> Vec<(i64, i64, bool)> {
    let cut = (n / 3) as i64;
    let mut waves = Vec::new();
    for mx in 0..=cut {
        for my in -cut..=cut {
            if mx == 0 && my < 0 {
                continue;
            }
            waves.push((mx, my));
        }
    }
    waves.sort_by_key(|&(mx, my)| (mx * mx + my * my, mx, my));
    let mut out = Vec::new();
    for (mx, my) in waves {
        out.push((mx, my, false));
        if mx != 0 || my != 0 {
            out.push((mx, my, true));
        }
    }
    out
}

/// The `k` lattice points `spacing·(i, j)` closest to the origin.
fn lattice_centers(k: usize, spacing: f64) -> Vec<(f64, f64)> {
    let mut r = 0i64;
    loop {
        // the disc of radius r is complete inside the square [-r, r]²
        let mut pts: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|i| (-r..=r).map(move |j| (i, j)))
            .filter(|&(i, j)| i * i + j * j <= r * r)
            .collect();
        if pts.len() >= k {
            pts.sort_by_key(|&(i, j)| (i * i + j * j, i, j));
            return pts
                .into_iter()
                .take(k)
                .map(|(i, j)| (spacing * i as f64, spacing * j as f64))
                .collect();
        }
        r += 1;
    }
}

/// Counter-based normal stream keyed by `(seed, path)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub path: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path }
    }

    /// Standard normals for counter `counter`, modes `0..k`.
    pub fn normals(&self, counter: u64, k: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path);
        // four 32-bit words per (counter, mode)
        rng.set_word_pos(counter as u128 * k as u128 * 4);
        (0..k)
            .map(|_| {
                let a = rng.next_u64();
                let b = rng.next_u64();
                let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
                let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect()
    }

    /// Increments over one step of length `dt` built from `substeps` base
    /// increments of length `dt/substeps`, summed in order. With
    /// `substeps = 1` this is the plain draw for counter `step`.
    pub fn increments(&self, step: u64, substeps: u32, k: usize, dt: f64) -> Vec<f64> {
        let sub = substeps.max(1) as u64;
        let scale = (dt / sub as f64).sqrt();
        let mut acc = vec![0.0; k];
        for s in 0..sub {
            for (a, z) in acc.iter_mut().zip(self.normals(step * sub + s, k)) {
                *a += scale * z;
            }
        }
        acc
    }
}

/// `K` Wiener increments over one step.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrements<T: Scalar> {
    pub dt: T,
    pub values: Vec<T>,
}

impl<T: Scalar> WienerIncrements<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Independent `N(0, dt)` draws for step `step` of `stream`.
///
/// `dt = 0` yields zeros; negative or non-finite `dt` is rejected.
pub fn sample_increments<T: Scalar>(
    basis: &NoiseBasis<T>,
    dt: f64,
    stream: &NoiseStream,
    step: u64,
) -> Result<WienerIncrements<T>> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(LlbError::Parameter(format!("time step must be >= 0, got {dt}")));
    }
    let values = stream
        .increments(step, 1, basis.len(), dt)
        .into_iter()
        .map(T::of)
        .collect();
    Ok(WienerIncrements { dt: T::of(dt), values })
}

/// `ε Σ_k (u×f_k + f_k) ΔW_k`, evaluated mode by mode.
pub fn diffusion_apply<T: Scalar>(
    u: &VectorField<T>,
    basis: &NoiseBasis<T>,
    incr: &WienerIncrements<T>,
    eps: T,
) -> Result<VectorField<T>> {
    basis.check(u, Some(incr.len()))?;
    let mut out = VectorField::zeros(u.grid());
    for (f, &w) in basis.modes.iter().zip(&incr.values) {
        for i in 0..u.grid().points() {
            let fk = f.at(i);
            let c = vec3::cross(u.at(i), fk);
            let o = out.at(i);
            out.set(
                i,
                [
                    o[0] + eps * w * (c[0] + fk[0]),
                    o[1] + eps * w * (c[1] + fk[1]),
                    o[2] + eps * w * (c[2] + fk[2]),
                ],
            );
        }
    }
    Ok(out)
}

/// `(ε²/2) Σ_k (u×f_k)×f_k`, evaluated mode by mode.
pub fn ito_correction<T: Scalar>(u: &VectorField<T>, basis: &NoiseBasis<T>, eps: T) -> Result<VectorField<T>> {
    basis.check(u, None)?;
    let half = eps * eps / T::of(2.0);
    let mut out = VectorField::zeros(u.grid());
    for f in &basis.modes {
        for i in 0..u.grid().points() {
            let fk = f.at(i);
            let d = vec3::cross(vec3::cross(u.at(i), fk), fk);
            let o = out.at(i);
            out.set(i, [o[0] + half * d[0], o[1] + half * d[1], o[2] + half * d[2]]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid<f64> {
        Grid::new(32, 8.0).unwrap()
    }

    fn single(g: &Grid<f64>, f: [f64; 3]) -> NoiseBasis<f64> {
        NoiseBasis::from_modes(g, vec![VectorField::constant(g, f)]).unwrap()
    }

    #[test]
    fn rejects_non_summable_decay() {
        let spec = NoiseSpec { decay: 1.0, ..NoiseSpec::default() };
        assert!(matches!(build_basis(&grid(), &spec), Err(LlbError::Summability(_))));
    }

    #[test]
    fn rejects_unresolvable_mode_counts() {
        let spec = NoiseSpec {
            family: NoiseFamily::FourierBump,
            modes: 10_000,
            ..NoiseSpec::default()
        };
        assert!(matches!(build_basis(&grid(), &spec), Err(LlbError::Resolution(_))));
    }

    #[test]
    fn single_fourier_mode_summability() {
        let spec = NoiseSpec {
            family: NoiseFamily::FourierBump,
            modes: 1,
            ..NoiseSpec::default()
        };
        let b = build_basis(&grid(), &spec).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.summability_value(), b.norms()[0].combined());
    }

    #[test]
    fn summability_monotone_and_below_majorant() {
        for family in [NoiseFamily::FourierBump, NoiseFamily::GaussianBump] {
            let mut last = 0.0;
            for k in 1..=12 {
                let spec = NoiseSpec {
                    family,
                    modes: k,
                    decay: 2.0,
                    width: 1.0,
                    spacing: 0.5,
                    ..NoiseSpec::default()
                };
                let b = build_basis(&grid(), &spec).unwrap();
                assert!(b.summability_value() >= last);
                assert!(b.summability_value() <= b.majorant().unwrap());
                last = b.summability_value();
            }
        }
    }

    #[test]
    fn gaussian_h1_norm_matches_closed_form() {
        // ∫g² = πw², ∫|∇g|² = π for g = exp(-|x|²/(2w²))
        let g = Grid::new(128, 16.0).unwrap();
        let spec = NoiseSpec { modes: 1, width: 2.0, ..NoiseSpec::default() };
        let b = build_basis(&g, &spec).unwrap();
        let expect = (std::f64::consts::PI * (4.0 + 1.0)).sqrt();
        assert!((b.norms()[0].h1 - expect).abs() < 1e-6);
    }

    #[test]
    fn increments_are_deterministic_and_keyed() {
        let s = NoiseStream::new(7, 3);
        assert_eq!(s.normals(11, 5), s.normals(11, 5));
        assert_ne!(s.normals(11, 5), s.normals(12, 5));
        assert_ne!(s.normals(11, 5), NoiseStream::new(7, 4).normals(11, 5));
        assert_eq!(s.increments(4, 1, 3, 0.0), vec![0.0; 3]);
    }

    #[test]
    fn coarse_increments_sum_fine_ones_exactly() {
        let s = NoiseStream::new(1, 2);
        let dt = 1.0 / 64.0;
        for step in 0..5u64 {
            let coarse = s.increments(step, 4, 6, 4.0 * dt);
            let mut fine = vec![0.0; 6];
            for sub in 0..4 {
                for (a, b) in fine.iter_mut().zip(s.increments(step * 4 + sub, 1, 6, dt)) {
                    *a += b;
                }
            }
            assert_eq!(coarse, fine);
        }
    }

    #[test]
    fn empirical_variance_matches_dt() {
        // chi-square: relative sd of a variance estimate from n draws is sqrt(2/n)
        let s = NoiseStream::new(2024, 0);
        let n = 100_000u64;
        let dt = 0.01;
        let mut sum_sq = 0.0;
        for step in 0..n {
            let w = s.increments(step, 1, 1, dt)[0];
            sum_sq += w * w;
        }
        let var = sum_sq / n as f64;
        assert!((var / dt - 1.0).abs() < 0.03);
    }

    #[test]
    fn negative_dt_is_rejected() {
        let g = grid();
        let b = single(&g, [0.0, 0.0, 1.0]);
        assert!(sample_increments(&b, -1.0, &NoiseStream::new(0, 0), 0).is_err());
    }

    #[test]
    fn diffusion_hand_values() {
        let g = grid();
        let b = single(&g, [0.0, 0.0, 1.0]);
        let u = VectorField::constant(&g, [1.0, 0.0, 0.0]);
        let incr = WienerIncrements { dt: 0.01, values: vec![0.3] };
        let eps = 0.5;
        let d = diffusion_apply(&u, &b, &incr, eps).unwrap();
        let expect = [0.0, -eps * 0.3, eps * 0.3];
        for c in 0..3 {
            assert!((d.at(7)[c] - expect[c]).abs() < 1e-15);
        }
        assert_eq!(diffusion_apply(&u, &b, &incr, 0.0).unwrap().max_abs(), 0.0);
        let zero = diffusion_apply(&VectorField::zeros(&g), &b, &incr, eps).unwrap();
        assert!((zero.at(0)[2] - eps * 0.3).abs() < 1e-15);
    }

    #[test]
    fn diffusion_checks_dimensions() {
        let g = grid();
        let b = single(&g, [0.0, 0.0, 1.0]);
        let incr = WienerIncrements { dt: 0.01, values: vec![0.3, 0.1] };
        let err = diffusion_apply(&VectorField::zeros(&g), &b, &incr, 1.0).unwrap_err();
        assert!(matches!(err, LlbError::Dimension { expected: 1, got: 2 }));
    }

    #[test]
    fn ito_hand_values() {
        let g = grid();
        let b = single(&g, [0.0, 0.0, 1.0]);
        let u = VectorField::constant(&g, [1.0, 0.0, 0.0]);
        let eps = 0.8;
        let c = ito_correction(&u, &b, eps).unwrap();
        assert!((c.at(0)[0] + eps * eps / 2.0).abs() < 1e-15);
        assert_eq!(c.at(0)[1], 0.0);
        assert_eq!(ito_correction(&VectorField::zeros(&g), &b, eps).unwrap().max_abs(), 0.0);
        assert_eq!(ito_correction(&u, &b, 0.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn tensor_route_matches_double_cross() {
        let g = grid();
        let spec = NoiseSpec { modes: 9, spacing: 1.0, ..NoiseSpec::default() };
        let b = build_basis(&g, &spec).unwrap();
        let u = VectorField::from_fn(&g, |x, y| [(0.3 * x).sin(), (0.2 * y).cos(), 0.5 * (x * y * 0.01).sin()]);
        let direct = ito_correction(&u, &b, 1.0).unwrap();
        for i in 0..g.points() {
            let t = b.ito_at(i, u.at(i));
            for c in 0..3 {
                assert!((0.5 * t[c] - direct.at(i)[c]).abs() < 1e-13 * (1.0 + u.max_abs()));
            }
        }
    }

    #[test]
    fn combined_route_matches_per_mode_sum() {
        let g = grid();
        let spec = NoiseSpec { family: NoiseFamily::FourierBump, modes: 7, ..NoiseSpec::default() };
        let b = build_basis(&g, &spec).unwrap();
        let u = VectorField::from_fn(&g, |x, y| [(0.3 * x).sin(), (0.2 * y).cos(), 0.1]);
        let incr = sample_increments(&b, 0.01, &NoiseStream::new(5, 0), 3).unwrap();
        let eps = 0.7;
        let direct = diffusion_apply(&u, &b, &incr, eps).unwrap();
        let f = b.combine(&incr.values);
        let fast = u.zip_map(&f, |a, f| {
            let c = vec3::cross(a, f);
            [eps * (c[0] + f[0]), eps * (c[1] + f[1]), eps * (c[2] + f[2])]
        })
        .unwrap();
        assert!(direct.sub(&fast).unwrap().max_abs() < 1e-14);
    }
}
