//! Periodic grid fields and their spectral operators.
//!
//! The plane is truncated to the box `[-L, L)²` sampled at `N×N` points with
//! spacing `h = 2L/N`. Vector fields carry three planar component arrays in
//! row-major order (`iy * N + ix`). Spectra use the half-complex layout of a
//! real transform along `x` followed by a full transform along `y`, stored
//! `kx`-major: index `kx * N + jy` with `kx ∈ 0..=N/2`.
//!
//! Odd-order derivatives vanish on the Nyquist lines (`|m| = N/2`); even-order
//! symbols use the full wavenumber. All identities below therefore hold
//! exactly for fields without Nyquist content ("resolved" fields).

use std::fmt;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{LlbError, Result};
use crate::scalar::{vec3, Scalar};

struct Plans<T: Scalar> {
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

struct GridData<T: Scalar> {
    n: usize,
    half_width: T,
    plans: Plans<T>,
    /// per spectral index: (kx, ky, |k|²)
    kx: Vec<T>,
    ky: Vec<T>,
    k2: Vec<T>,
    /// first-derivative symbols with the Nyquist line removed
    dx: Vec<T>,
    dy: Vec<T>,
    keep: Vec<bool>,
}

/// Uniform periodic grid on `[-L, L)²`.
#[derive(Clone)]
pub struct Grid<T: Scalar> {
    data: Arc<GridData<T>>,
}

impl<T: Scalar> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.data.n)
            .field("half_width", &self.data.half_width)
            .finish()
    }
}

impl<T: Scalar> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
            || (self.data.n == other.data.n && self.data.half_width == other.data.half_width)
    }
}

impl<T: Scalar> Grid<T> {
    pub fn new(n: usize, half_width: T) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(LlbError::InvalidGrid(format!(
                "points per axis must be even and >= 8, got {n}"
            )));
        }
        if !(half_width.is_finite() && half_width > T::zero()) {
            return Err(LlbError::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        let mut real = RealFftPlanner::<T>::new();
        let mut cplx = FftPlanner::<T>::new();
        let plans = Plans {
            r2c: real.plan_fft_forward(n),
            c2r: real.plan_fft_inverse(n),
            fwd: cplx.plan_fft_forward(n),
            inv: cplx.plan_fft_inverse(n),
        };
        let nh = n / 2 + 1;
        let base = T::PI() / half_width;
        let len = nh * n;
        let (mut kx, mut ky, mut k2) = (vec![T::zero(); len], vec![T::zero(); len], vec![T::zero(); len]);
        let (mut dx, mut dy) = (vec![T::zero(); len], vec![T::zero(); len]);
        let mut keep = vec![false; len];
        for ix in 0..nh {
            for jy in 0..n {
                let idx = ix * n + jy;
                let mx = ix as i64;
                let my = if jy < n / 2 { jy as i64 } else { jy as i64 - n as i64 };
                let kxv = base * T::of(mx as f64);
                let kyv = base * T::of(my as f64);
                kx[idx] = kxv;
                ky[idx] = kyv;
                k2[idx] = kxv * kxv + kyv * kyv;
                let nyq = (n / 2) as i64;
                dx[idx] = if mx == nyq { T::zero() } else { kxv };
                dy[idx] = if my == -nyq { T::zero() } else { kyv };
                let cut = 3 * mx.abs().max(my.abs());
                keep[idx] = cut <= n as i64;
            }
        }
        Ok(Self {
            data: Arc::new(GridData {
                n,
                half_width,
                plans,
                kx,
                ky,
                k2,
                dx,
                dy,
                keep,
            }),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.data.n
    }

    #[inline]
    pub fn half_width(&self) -> T {
        self.data.half_width
    }

    #[inline]
    pub fn spacing(&self) -> T {
        T::of(2.0) * self.data.half_width / T::of_usize(self.data.n)
    }

    /// Quadrature weight `h²` of one grid cell.
    #[inline]
    pub fn cell_area(&self) -> T {
        let h = self.spacing();
        h * h
    }

    /// `(2L)²`
    pub fn area(&self) -> T {
        let side = T::of(2.0) * self.data.half_width;
        side * side
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.data.n * self.data.n
    }

    #[inline]
    pub fn spectral_len(&self) -> usize {
        (self.data.n / 2 + 1) * self.data.n
    }

    /// Physical coordinate of grid node `(ix, iy)`.
    #[inline]
    pub fn coord(&self, ix: usize, iy: usize) -> (T, T) {
        let h = self.spacing();
        let l = self.data.half_width;
        (-l + h * T::of_usize(ix), -l + h * T::of_usize(iy))
    }

    /// Largest resolved wavenumber magnitude per axis, `πN/(2L)`.
    pub fn k_max(&self) -> T {
        T::PI() * T::of_usize(self.data.n) / (T::of(2.0) * self.data.half_width)
    }

    /// `|k|²` for every spectral index.
    pub fn k_squared(&self) -> &[T] {
        &self.data.k2
    }

    pub fn wavevector(&self, idx: usize) -> (T, T) {
        (self.data.kx[idx], self.data.ky[idx])
    }

    /// `|ik_x|² + |ik_y|²` of the first-derivative symbols (Nyquist lines
    /// removed), the weight of `‖∇u‖²` in Fourier space.
    #[inline]
    pub fn gradient_symbol_sq(&self, idx: usize) -> T {
        let (dx, dy) = (self.data.dx[idx], self.data.dy[idx]);
        dx * dx + dy * dy
    }

    /// 2/3-rule mask: `true` where `max(|mx|, |my|) <= N/3`.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.data.keep
    }

    fn check(&self, other: &Grid<T>) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(LlbError::GridMismatch)
        }
    }

    fn forward_scalar(&self, input: &[T], out: &mut [Complex<T>]) {
        let n = self.data.n;
        let p = &self.data.plans;
        let mut row = p.r2c.make_input_vec();
        let mut row_out = p.r2c.make_output_vec();
        let mut scratch = p.r2c.make_scratch_vec();
        for (iy, src) in input.chunks_exact(n).enumerate() {
            row.copy_from_slice(src);
            p.r2c
                .process_with_scratch(&mut row, &mut row_out, &mut scratch)
                .expect("real fft buffer sizes are fixed by the plan");
            for (ix, z) in row_out.iter().enumerate() {
                out[ix * n + iy] = *z;
            }
        }
        let mut scratch = vec![Complex::default(); p.fwd.get_inplace_scratch_len()];
        p.fwd.process_with_scratch(out, &mut scratch);
    }

    fn inverse_scalar(&self, spec: &[Complex<T>], out: &mut [T]) {
        let n = self.data.n;
        let nh = n / 2 + 1;
        let p = &self.data.plans;
        let mut buf = spec.to_vec();
        let mut scratch = vec![Complex::default(); p.inv.get_inplace_scratch_len()];
        p.inv.process_with_scratch(&mut buf, &mut scratch);
        let mut row = p.c2r.make_input_vec();
        let mut scratch = p.c2r.make_scratch_vec();
        let norm = T::one() / T::of_usize(n * n);
        for (iy, dst) in out.chunks_exact_mut(n).enumerate() {
            for (ix, z) in row.iter_mut().enumerate() {
                *z = buf[ix * n + iy];
            }
            row[0].im = T::zero();
            row[nh - 1].im = T::zero();
            p.c2r
                .process_with_scratch(&mut row, dst, &mut scratch)
                .expect("imaginary parts of edge bins are cleared");
            for v in dst.iter_mut() {
                *v = *v * norm;
            }
        }
    }
}

/// Fourier coefficients of a [`VectorField`] (unnormalized forward DFT).
#[derive(Clone, Debug)]
pub struct Spectrum<T: Scalar> {
    grid: Grid<T>,
    comps: [Vec<Complex<T>>; 3],
}

impl<T: Scalar> Spectrum<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        let len = grid.spectral_len();
        Self {
            grid: grid.clone(),
            comps: [
                vec![Complex::default(); len],
                vec![Complex::default(); len],
                vec![Complex::default(); len],
            ],
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn comps(&self) -> &[Vec<Complex<T>>; 3] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [Vec<Complex<T>>; 3] {
        &mut self.comps
    }

    /// Multiply every mode by a real symbol indexed by spectral position.
    pub fn scale_by(&mut self, symbol: impl Fn(usize) -> T) {
        for c in self.comps.iter_mut() {
            for (idx, z) in c.iter_mut().enumerate() {
                *z = *z * symbol(idx);
            }
        }
    }

    pub fn ifft(&self) -> VectorField<T> {
        let mut out = VectorField::zeros(&self.grid);
        for c in 0..3 {
            self.grid.inverse_scalar(&self.comps[c], &mut out.comps[c]);
        }
        out
    }

    /// `Σ_k |k|^(2p) |û_k|²` with the Hermitian weighting of the half spectrum,
    /// normalized to match the physical quadrature `∫|·|² dx`.
    pub fn weighted_energy(&self, weight: impl Fn(usize) -> T) -> T {
        let n = self.grid.n();
        let nh = n / 2 + 1;
        let mut acc = T::zero();
        for c in &self.comps {
            for ix in 0..nh {
                let mult = if ix == 0 || ix == nh - 1 { T::one() } else { T::of(2.0) };
                for jy in 0..n {
                    let idx = ix * n + jy;
                    acc = acc + mult * weight(idx) * c[idx].norm_sqr();
                }
            }
        }
        let nn = T::of_usize(n * n);
        acc * self.grid.cell_area() / nn
    }
}

/// An `ℝ³`-valued field sampled on a [`Grid`].
#[derive(Clone, Debug)]
pub struct VectorField<T: Scalar> {
    grid: Grid<T>,
    comps: [Vec<T>; 3],
}

impl<T: Scalar> PartialEq for VectorField<T> {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.comps == other.comps
    }
}

impl<T: Scalar> VectorField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        let len = grid.points();
        Self {
            grid: grid.clone(),
            comps: [vec![T::zero(); len], vec![T::zero(); len], vec![T::zero(); len]],
        }
    }

    pub fn constant(grid: &Grid<T>, value: [T; 3]) -> Self {
        let len = grid.points();
        Self {
            grid: grid.clone(),
            comps: [vec![value[0]; len], vec![value[1]; len], vec![value[2]; len]],
        }
    }

    pub fn from_components(grid: &Grid<T>, comps: [Vec<T>; 3]) -> Result<Self> {
        for c in &comps {
            if c.len() != grid.points() {
                return Err(LlbError::Dimension {
                    expected: grid.points(),
                    got: c.len(),
                });
            }
        }
        Ok(Self {
            grid: grid.clone(),
            comps,
        })
    }

    /// Sample `f(x, y)` at every node.
    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T) -> [T; 3]) -> Self {
        let n = grid.n();
        let mut out = Self::zeros(grid);
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = grid.coord(ix, iy);
                let v = f(x, y);
                let i = iy * n + ix;
                out.comps[0][i] = v[0];
                out.comps[1][i] = v[1];
                out.comps[2][i] = v[2];
            }
        }
        out
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn comps(&self) -> &[Vec<T>; 3] {
        &self.comps
    }

    #[inline]
    pub fn comps_mut(&mut self) -> &mut [Vec<T>; 3] {
        &mut self.comps
    }

    #[inline]
    pub fn at(&self, i: usize) -> [T; 3] {
        [self.comps[0][i], self.comps[1][i], self.comps[2][i]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: [T; 3]) {
        self.comps[0][i] = v[0];
        self.comps[1][i] = v[1];
        self.comps[2][i] = v[2];
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(LlbError::NonFinite { op })
        }
    }

    pub fn fft(&self) -> Spectrum<T> {
        let mut out = Spectrum::zeros(&self.grid);
        for c in 0..3 {
            self.grid.forward_scalar(&self.comps[c], &mut out.comps[c]);
        }
        out
    }

    /// Pointwise map over node values.
    pub fn map(&self, f: impl Fn([T; 3]) -> [T; 3]) -> Self {
        let mut out = Self::zeros(&self.grid);
        for i in 0..self.grid.points() {
            out.set(i, f(self.at(i)));
        }
        out
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Self, f: impl Fn([T; 3], [T; 3]) -> [T; 3]) -> Result<Self> {
        self.grid.check(&other.grid)?;
        let mut out = Self::zeros(&self.grid);
        for i in 0..self.grid.points() {
            out.set(i, f(self.at(i), other.at(i)));
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|a| [a[0] * s, a[1] * s, a[2] * s])
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.grid.check(&other.grid)?;
        for c in 0..3 {
            for (a, b) in self.comps[c].iter_mut().zip(&other.comps[c]) {
                *a = *a + s * *b;
            }
        }
        Ok(())
    }

    /// `∫ u·v dx` by the (spectrally exact) periodic rectangle rule.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.grid.check(&other.grid)?;
        let mut acc = T::zero();
        for c in 0..3 {
            for (a, b) in self.comps[c].iter().zip(&other.comps[c]) {
                acc = acc + *a * *b;
            }
        }
        Ok(acc * self.grid.cell_area())
    }

    /// `∫ |u|² dx`
    pub fn l2_sq(&self) -> T {
        let mut acc = T::zero();
        for c in &self.comps {
            for v in c {
                acc = acc + *v * *v;
            }
        }
        acc * self.grid.cell_area()
    }

    /// `max_x |u(x)|` (Euclidean norm per node).
    pub fn max_abs(&self) -> T {
        (0..self.grid.points())
            .map(|i| vec3::norm_sq(self.at(i)).sqrt())
            .fold(T::zero(), T::max)
    }

    /// Remove the Nyquist lines (`|mx| = N/2` or `|my| = N/2`).
    pub fn strip_nyquist(&self) -> Self {
        let n = self.grid.n();
        let mut s = self.fft();
        let nh = n / 2 + 1;
        for c in s.comps.iter_mut() {
            for ix in 0..nh {
                for jy in 0..n {
                    if ix == nh - 1 || jy == n / 2 {
                        c[ix * n + jy] = Complex::default();
                    }
                }
            }
        }
        s.ifft()
    }
}

fn spectral_apply<T: Scalar>(u: &VectorField<T>, op: &'static str, symbol: impl Fn(usize) -> T) -> Result<VectorField<T>> {
    u.ensure_finite(op)?;
    let mut s = u.fft();
    s.scale_by(symbol);
    Ok(s.ifft())
}

/// Spectral Laplacian `Δu`, component-wise.
pub fn laplacian<T: Scalar>(u: &VectorField<T>) -> Result<VectorField<T>> {
    let k2 = &u.grid.data.k2;
    spectral_apply(u, "laplacian", |i| -k2[i])
}

/// `Δ²u` via the `|k|⁴` multiplier.
pub fn biharmonic<T: Scalar>(u: &VectorField<T>) -> Result<VectorField<T>> {
    let k2 = &u.grid.data.k2;
    spectral_apply(u, "biharmonic", |i| k2[i] * k2[i])
}

/// `(∂x u, ∂y u)`
pub fn gradient<T: Scalar>(u: &VectorField<T>) -> Result<(VectorField<T>, VectorField<T>)> {
    u.ensure_finite("gradient")?;
    let s = u.fft();
    Ok((derivative(&s, Axis::X), derivative(&s, Axis::Y)))
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Axis {
    X,
    Y,
}

pub(crate) fn derivative<T: Scalar>(s: &Spectrum<T>, axis: Axis) -> VectorField<T> {
    let sym = match axis {
        Axis::X => &s.grid.data.dx,
        Axis::Y => &s.grid.data.dy,
    };
    let mut d = s.clone();
    for c in d.comps.iter_mut() {
        for (z, k) in c.iter_mut().zip(sym) {
            // multiply by i k
            *z = Complex::new(-z.im * *k, z.re * *k);
        }
    }
    d.ifft()
}

/// Pointwise `u × v`.
pub fn cross<T: Scalar>(u: &VectorField<T>, v: &VectorField<T>) -> Result<VectorField<T>> {
    u.zip_map(v, vec3::cross)
}

/// Pointwise `(1 + |u|²) u`; the drift applies the minus sign.
pub fn cubic_damping<T: Scalar>(u: &VectorField<T>) -> Result<VectorField<T>> {
    u.ensure_finite("cubic_damping")?;
    Ok(u.map(|a| {
        let s = T::one() + vec3::norm_sq(a);
        [s * a[0], s * a[1], s * a[2]]
    }))
}

/// 2/3-rule truncation: zero every mode with `max(|mx|, |my|) > N/3`.
pub fn dealias<T: Scalar>(u: &VectorField<T>) -> VectorField<T> {
    let mut s = u.fft();
    dealias_spectrum(&mut s);
    s.ifft()
}

pub(crate) fn dealias_spectrum<T: Scalar>(s: &mut Spectrum<T>) {
    let keep = &s.grid.data.keep;
    for c in s.comps.iter_mut() {
        for (z, k) in c.iter_mut().zip(keep) {
            if !*k {
                *z = Complex::default();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid<f64> {
        Grid::new(32, 4.0).unwrap()
    }

    fn sine(g: &Grid<f64>) -> VectorField<f64> {
        let l = g.half_width();
        VectorField::from_fn(g, |x, _| [(std::f64::consts::PI * x / l).sin(), 0.0, 0.0])
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::<f64>::new(7, 1.0).is_err());
        assert!(Grid::<f64>::new(6, 1.0).is_err());
        assert!(Grid::<f64>::new(16, 0.0).is_err());
        assert!(Grid::<f64>::new(16, f64::NAN).is_err());
    }

    #[test]
    fn fft_round_trip() {
        let g = grid();
        let u = VectorField::from_fn(&g, |x, y| [x.sin() * y.cos(), (0.3 * x).cos(), x * 0.01 + y]);
        let back = u.fft().ifft();
        for c in 0..3 {
            for (a, b) in u.comps()[c].iter().zip(&back.comps()[c]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_of_constant_and_sine() {
        let g = grid();
        let c = laplacian(&VectorField::constant(&g, [1.0, -2.0, 3.0])).unwrap();
        assert!(c.max_abs() < 1e-12);
        let u = sine(&g);
        let lap = laplacian(&u).unwrap();
        let k = std::f64::consts::PI / g.half_width();
        let expect = u.scale(-k * k);
        assert!(lap.sub(&expect).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn gradient_of_sine() {
        let g = grid();
        let u = sine(&g);
        let (dx, dy) = gradient(&u).unwrap();
        let k = std::f64::consts::PI / g.half_width();
        let l = g.half_width();
        let expect = VectorField::from_fn(&g, |x, _| [k * (std::f64::consts::PI * x / l).cos(), 0.0, 0.0]);
        assert!(dx.sub(&expect).unwrap().max_abs() < 1e-12);
        assert!(dy.max_abs() < 1e-12);
    }

    #[test]
    fn cross_products() {
        let g = grid();
        let ex = VectorField::constant(&g, [1.0, 0.0, 0.0]);
        let ey = VectorField::constant(&g, [0.0, 1.0, 0.0]);
        assert_eq!(cross(&ex, &ey).unwrap().at(5), [0.0, 0.0, 1.0]);
        assert_eq!(cross(&ex, &ex).unwrap().max_abs(), 0.0);
        let a = VectorField::constant(&g, [1.0, 2.0, 3.0]);
        let b = VectorField::constant(&g, [4.0, 5.0, 6.0]);
        assert_eq!(cross(&a, &b).unwrap().at(0), [-3.0, 6.0, -3.0]);
    }

    #[test]
    fn cross_rejects_grid_mismatch() {
        let a = VectorField::constant(&grid(), [1.0, 0.0, 0.0]);
        let b = VectorField::constant(&Grid::new(16, 4.0).unwrap(), [1.0, 0.0, 0.0]);
        assert!(matches!(cross(&a, &b), Err(LlbError::GridMismatch)));
    }

    #[test]
    fn cubic_damping_values() {
        let g = grid();
        assert_eq!(cubic_damping(&VectorField::zeros(&g)).unwrap().max_abs(), 0.0);
        assert_eq!(cubic_damping(&VectorField::constant(&g, [1.0, 0.0, 0.0])).unwrap().at(3), [2.0, 0.0, 0.0]);
        assert_eq!(cubic_damping(&VectorField::constant(&g, [1.0, 1.0, 1.0])).unwrap().at(3), [4.0, 4.0, 4.0]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let g = grid();
        let mut u = VectorField::zeros(&g);
        u.set(3, [f64::NAN, 0.0, 0.0]);
        assert!(matches!(laplacian(&u), Err(LlbError::NonFinite { .. })));
        assert!(matches!(gradient(&u), Err(LlbError::NonFinite { .. })));
        assert!(matches!(cubic_damping(&u), Err(LlbError::NonFinite { .. })));
    }

    #[test]
    fn dealias_behaviour() {
        let g = grid();
        let n = g.n();
        let l = g.half_width();
        let pi = std::f64::consts::PI;
        let low = VectorField::from_fn(&g, |x, y| [(pi * 3.0 * x / l).cos(), (pi * 5.0 * y / l).sin(), 1.0]);
        assert!(dealias(&low).sub(&low).unwrap().max_abs() < 1e-12);
        let m = (n / 2 - 1) as f64;
        let high = VectorField::from_fn(&g, |x, _| [(pi * m * x / l).cos(), 0.0, 0.0]);
        assert!(dealias(&high).max_abs() < 1e-12);
        let mixed = low.add(&high).unwrap();
        let once = dealias(&mixed);
        assert!(dealias(&once).sub(&once).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let g = Grid::<f32>::new(16, 2.0).unwrap();
        let l = g.half_width();
        let u = VectorField::from_fn(&g, |x, _| [(std::f32::consts::PI * x / l).sin(), 0.0, 0.0]);
        let lap = laplacian(&u).unwrap();
        let k = std::f32::consts::PI / l;
        assert!(lap.sub(&u.scale(-k * k)).unwrap().max_abs() < 1e-4);
    }
}
