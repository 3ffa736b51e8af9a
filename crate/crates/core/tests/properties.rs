use std::sync::OnceLock;

use proptest::prelude::*;

use llb::diagnostics::{norm_sq, tail_mass, CutoffFamily, Sobolev};
use llb::dynamics::PathState;
use llb::field::{biharmonic, cross, gradient, laplacian, Grid, VectorField};
use llb::io::{load_checkpoint, save_checkpoint};
use llb::measures::{smooth_lift, weak_distance, EmpiricalMeasure, MeasureMeta, TestFunctional};
use llb::noise::{build_basis, diffusion_apply, ito_correction, NoiseBasis, NoiseSpec, NoiseStream, WienerIncrements};

const N: usize = 16;

fn grid() -> &'static Grid<f64> {
    static G: OnceLock<Grid<f64>> = OnceLock::new();
    G.get_or_init(|| Grid::new(N, 4.0).unwrap())
}

fn noise_grid() -> &'static Grid<f64> {
    static G: OnceLock<Grid<f64>> = OnceLock::new();
    G.get_or_init(|| Grid::new(32, 8.0).unwrap())
}

fn field_on(grid: &Grid<f64>, v: Vec<f64>) -> VectorField<f64> {
    let p = grid.points();
    let comps = [v[..p].to_vec(), v[p..2 * p].to_vec(), v[2 * p..].to_vec()];
    VectorField::from_components(grid, comps).unwrap().strip_nyquist()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn field() -> impl Strategy<Value = VectorField<f64>> {
    values(3 * N * N).prop_map(|v| field_on(grid(), v))
}

fn scaled_field() -> impl Strategy<Value = VectorField<f64>> {
    (field(), 0.01f64..3.0).prop_map(|(u, s)| u.scale(s))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn meta() -> MeasureMeta {
    MeasureMeta {
        epsilon: 0.0,
        delta: 0.0,
        dt: 0.01,
        burn_in: 0.0,
        stride: 1.0,
        t_final: 1.0,
        path_count: 1,
        seed: 0,
    }
}

fn family(probes: &[VectorField<f64>]) -> Vec<TestFunctional<f64>> {
    let mut out = Vec::new();
    for (i, p) in probes.iter().enumerate() {
        let c = 0.3 * i as f64 - 0.3;
        out.push(TestFunctional::gauss_of_projection(vec![p.clone()], vec![c], 0.7).unwrap());
    }
    out.push(TestFunctional::lipschitz_of_norms(2.0, 1.5).unwrap());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn laplacian_is_self_adjoint(u in field(), v in field()) {
        let a = laplacian(&u).unwrap().inner(&v).unwrap();
        let b = u.inner(&laplacian(&v).unwrap()).unwrap();
        let scale = norm_sq(&u, Sobolev::H2).unwrap().sqrt() * norm_sq(&v, Sobolev::H2).unwrap().sqrt();
        prop_assert!((a - b).abs() <= 1e-10 * scale);
    }

    #[test]
    fn laplacian_is_negative(u in field()) {
        let (dx, dy) = gradient(&u).unwrap();
        let grad = dx.l2_sq() + dy.l2_sq();
        let lap = laplacian(&u).unwrap().inner(&u).unwrap();
        prop_assert!(rel(-lap, grad) <= 1e-10);
    }

    #[test]
    fn biharmonic_is_iterated_laplacian(u in field()) {
        let direct = biharmonic(&u).unwrap();
        let twice = laplacian(&laplacian(&u).unwrap()).unwrap();
        let err = direct.sub(&twice).unwrap().max_abs();
        prop_assert!(err <= 1e-10 * direct.max_abs().max(1.0));
        prop_assert!(direct.inner(&u).unwrap() >= -1e-10 * direct.l2_sq().sqrt() * u.l2_sq().sqrt());
    }

    #[test]
    fn precession_is_pointwise_orthogonal(u in scaled_field()) {
        let c = cross(&u, &laplacian(&u).unwrap()).unwrap();
        let scale = c.max_abs() * u.max_abs();
        for i in 0..grid().points() {
            let (a, b) = (u.at(i), c.at(i));
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            prop_assert!(dot.abs() <= 1e-14 * scale.max(1e-300));
        }
    }

    #[test]
    fn h1_norm_splits_into_l2_and_gradient(u in scaled_field()) {
        let (dx, dy) = gradient(&u).unwrap();
        let parts = norm_sq(&u, Sobolev::L2).unwrap() + dx.l2_sq() + dy.l2_sq();
        prop_assert!(rel(norm_sq(&u, Sobolev::H1).unwrap(), parts) <= 1e-12);
    }

    #[test]
    fn double_cross_matches_expansion(u in scaled_field(), f in prop::array::uniform3(-1.0f64..1.0)) {
        let basis = NoiseBasis::from_modes(grid(), vec![VectorField::constant(grid(), f)]).unwrap();
        let got = ito_correction(&u, &basis, 1.0).unwrap();
        let ff = f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
        let tol = 1e-13 * u.max_abs().max(1e-300) * ff.max(1.0);
        for i in 0..grid().points() {
            let a = u.at(i);
            let af = a[0] * f[0] + a[1] * f[1] + a[2] * f[2];
            let g = got.at(i);
            for c in 0..3 {
                prop_assert!((g[c] - 0.5 * (af * f[c] - ff * a[c])).abs() <= tol);
            }
            prop_assert!((g[0] * f[0] + g[1] * f[1] + g[2] * f[2] - 0.5 * (af * ff - ff * af)).abs() <= tol * ff.max(1.0));
        }
    }

    #[test]
    fn diffusion_is_linear_in_increments(
        u in scaled_field(),
        a in prop::collection::vec(-0.3f64..0.3, 2),
        b in prop::collection::vec(-0.3f64..0.3, 2),
        eps in 0.0f64..1.0,
    ) {
        let modes = vec![
            VectorField::from_fn(grid(), |x, y| [(-(x * x + y * y)).exp(), 0.0, 0.5]),
            VectorField::from_fn(grid(), |x, _| [0.0, (0.25 * std::f64::consts::PI * x).sin(), 0.0]),
        ];
        let basis = NoiseBasis::from_modes(grid(), modes).unwrap();
        let apply = |v: Vec<f64>| diffusion_apply(&u, &basis, &WienerIncrements { dt: 0.01, values: v }, eps).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = apply(sum);
        let rhs = apply(a).add(&apply(b)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-14 * (1.0 + u.max_abs()));
    }

    #[test]
    fn tail_mass_is_nonincreasing_in_j(u in scaled_field(), j in 1.0f64..3.0, step in 0.01f64..2.0) {
        let near = tail_mass(&u, j).unwrap();
        let far = tail_mass(&u, j + step).unwrap();
        prop_assert!(far <= near * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn cutoff_derivatives_scale_with_j(j in 1.0f64..20.0, r in 0.0f64..1.0, phi in 0.0f64..std::f64::consts::TAU) {
        let fam = CutoffFamily::default();
        let bounds = fam.derivative_bounds();
        // |∇θ(x/j)| = |θ'(|x|/j)|/j, sampled at |x| = j·r
        prop_assert!(fam.profile_slope(r).abs() / j <= bounds.grad / j);
        let h = 1e-3 * j;
        let (x, y) = (j * r * phi.cos(), j * r * phi.sin());
        let th = |x: f64, y: f64| fam.theta((x / j, y / j));
        let lap = (th(x + h, y) + th(x - h, y) + th(x, y + h) + th(x, y - h) - 4.0 * th(x, y)) / (h * h);
        prop_assert!(lap.abs() <= 1.05 * bounds.laplacian / (j * j) + 1e-9);
    }

    #[test]
    fn functionals_are_bounded_and_lipschitz(u in scaled_field(), v in scaled_field(), lift in prop::option::of(0.05f64..2.0)) {
        let probes = [
            VectorField::from_fn(grid(), |x, y| [(-(x * x + y * y) / 2.0).exp(), 0.0, 0.0]),
            VectorField::from_fn(grid(), |x, _| [0.0, 0.0, (0.5 * std::f64::consts::PI * x).cos() * 0.2]),
        ];
        for g in family(&probes) {
            let g = match lift {
                Some(d) => g.with_lift(d).unwrap(),
                None => g,
            };
            let (a, b) = (g.eval(&u).unwrap(), g.eval(&v).unwrap());
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            let dist = u.sub(&v).unwrap().l2_sq().sqrt();
            prop_assert!((a - b).abs() <= g.lipschitz() * dist * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn smooth_lift_contracts_every_mode(u in scaled_field(), d in 0.01f64..5.0) {
        let before = u.fft();
        let after = smooth_lift(&u, d).unwrap().fft();
        for c in 0..3 {
            let (b, a) = (&before.comps()[c], &after.comps()[c]);
            prop_assert!((a[0] - b[0]).norm() <= 1e-12 * b[0].norm().max(1.0));
            for (x, y) in a.iter().zip(b) {
                prop_assert!(x.norm() <= y.norm() * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn weak_distance_is_a_pseudometric(u in scaled_field(), v in scaled_field(), w in scaled_field()) {
        let probes = [
            VectorField::from_fn(grid(), |x, y| [(-(x * x + y * y) / 2.0).exp(), 0.0, 0.0]),
            VectorField::from_fn(grid(), |_, y| [0.0, 0.1 * (0.25 * std::f64::consts::PI * y).cos(), 0.0]),
        ];
        let fam = family(&probes);
        let m = |f: &VectorField<f64>| EmpiricalMeasure::point_mass(f.clone(), meta()).unwrap();
        let (a, b, c) = (m(&u), m(&v), m(&w));
        let ab = weak_distance(&a, &b, &fam).unwrap();
        prop_assert_eq!(ab, weak_distance(&b, &a, &fam).unwrap());
        prop_assert_eq!(weak_distance(&a, &a, &fam).unwrap(), 0.0);
        let ac = weak_distance(&a, &c, &fam).unwrap();
        let cb = weak_distance(&c, &b, &fam).unwrap();
        prop_assert!(ab <= ac + cb + 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        u in scaled_field(),
        seed in any::<u64>(),
        path in 0u64..1000,
        step in 0u64..100_000,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("state.llb");
        let state = PathState::resume(u.clone(), step as f64 * 0.01, step, NoiseStream::new(seed, path)).unwrap();
        save_checkpoint(&state, 0.5, 0.01, &file).unwrap();
        let (back, header) = load_checkpoint::<f64>(&file).unwrap();
        prop_assert_eq!(back.step_index, step);
        prop_assert_eq!(back.t.to_bits(), state.t.to_bits());
        prop_assert_eq!(back.stream, state.stream);
        prop_assert_eq!(header.epsilon, 0.5);
        for c in 0..3 {
            let same = back.u().comps()[c].iter().zip(&u.comps()[c]).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn summability_grows_with_modes_under_majorant(k in 1usize..24, decay in 1.2f64..3.0) {
        let spec = |modes| NoiseSpec { modes, decay, ..NoiseSpec::default() };
        let small = build_basis(noise_grid(), &spec(k)).unwrap();
        let large = build_basis(noise_grid(), &spec(k + 1)).unwrap();
        prop_assert!(large.summability_value() >= small.summability_value());
        if let Some(m) = large.majorant() {
            prop_assert!(large.summability_value() <= m * (1.0 + 1e-12));
        }
    }

    #[test]
    fn coarse_increments_are_sums_of_fine_ones(seed in any::<u64>(), path in 0u64..64, step in 0u64..10_000, k in 1usize..20) {
        let s = NoiseStream::new(seed, path);
        let dt = 0.01;
        let coarse = s.increments(step, 2, k, dt);
        let a = s.increments(2 * step, 1, k, dt / 2.0);
        let b = s.increments(2 * step + 1, 1, k, dt / 2.0);
        for i in 0..k {
            prop_assert_eq!(coarse[i].to_bits(), (a[i] + b[i]).to_bits());
        }
    }
}
