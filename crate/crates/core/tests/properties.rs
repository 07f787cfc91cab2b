use std::sync::Arc;

use fcoint::acovfpca::{autocov, split};
use fcoint::densities::{clr, inv_clr, kde};
use fcoint::fgrid::{eig_self_adjoint, fourier_basis, tensor};
use fcoint::regress::{fit, FitConfig};
use fcoint::vrtest::vr_eigen;
use fcoint::{FnSeries, Grid, GridFn, LinOp};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

fn random_op(rng: &mut ChaCha8Rng, dom: &Arc<Grid>, cod: &Arc<Grid>) -> LinOp {
    let k = DMatrix::from_fn(cod.n(), dom.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
    LinOp::from_kernel(dom.clone(), cod.clone(), k).unwrap()
}

fn random_fn(rng: &mut ChaCha8Rng, g: &Arc<Grid>) -> GridFn {
    GridFn::new(g.clone(), (0..g.n()).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// `trend` random-walk components plus stationary AR(1) components with
/// decaying scale, on a Fourier basis.
fn series(seed: u64, t: usize, n: usize, components: usize, trend: usize) -> FnSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid::uniform(0.0, 1.0, n).unwrap();
    let basis = fourier_basis(&g, components, true).unwrap();
    let mut state = vec![0.0; components];
    let rows: Vec<GridFn> = (0..t)
        .map(|_| {
            let mut f = GridFn::zeros(g.clone());
            for (j, b) in basis.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                state[j] = if j < trend {
                    state[j] + e
                } else {
                    0.5 * state[j] + e / (1.0 + j as f64)
                };
                f = f.add(&b.scale(state[j])).unwrap();
            }
            f
        })
        .collect();
    FnSeries::from_fns(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trapezoid_exact_on_lines(a in -5.0f64..5.0, len in 0.1f64..10.0, n in 2usize..60, p in -3.0f64..3.0, q in -3.0f64..3.0) {
        let g = Grid::uniform(a, a + len, n).unwrap();
        let f = GridFn::from_fn(g.clone(), |u| p + q * u);
        let b = a + len;
        let exact = p * len + q * (b * b - a * a) / 2.0;
        prop_assert!((f.integral() - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn operator_algebra(seed in any::<u64>(), n in 2usize..9, m in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gx = Grid::uniform(0.0, 1.0, n).unwrap();
        let gy = Grid::uniform(-1.0, 2.0, m).unwrap();
        let a = random_op(&mut rng, &gx, &gy);
        let b = random_op(&mut rng, &gy, &gx);
        let c = random_op(&mut rng, &gx, &gx);
        prop_assert_eq!(a.adjoint().adjoint().kernel().clone(), a.kernel().clone());

        let f = random_fn(&mut rng, &gx);
        let h = random_fn(&mut rng, &gy);
        let lhs = a.apply(&f).unwrap().inner(&h).unwrap();
        let rhs = f.inner(&a.adjoint().apply(&h).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));

        let ab_c = a.compose(&b).unwrap().compose(&a).unwrap().compose(&c).unwrap();
        let a_bc = a.compose(&b.compose(&a.compose(&c).unwrap()).unwrap()).unwrap();
        prop_assert!(rel(ab_c.kernel(), a_bc.kernel()) < 1e-12);

        let adj_comp = a.compose(&c).unwrap().adjoint();
        let comp_adj = c.adjoint().compose(&a.adjoint()).unwrap();
        prop_assert!(rel(adj_comp.kernel(), comp_adj.kernel()) < 1e-12);

        let g1 = random_fn(&mut rng, &gy);
        let t = tensor(&f, &g1);
        let u = random_fn(&mut rng, &gx);
        let want = g1.scale(f.inner(&u).unwrap());
        prop_assert!(t.apply(&u).unwrap().max_abs_diff(&want) <= 1e-10 * (1.0 + want.norm()));
        prop_assert_eq!(t.adjoint().kernel().clone(), tensor(&g1, &f).kernel().clone());

        let lin = a.apply(&f.scale(2.0).add(&u).unwrap()).unwrap();
        let sum = a.apply(&f).unwrap().scale(2.0).add(&a.apply(&u).unwrap()).unwrap();
        prop_assert!(lin.max_abs_diff(&sum) <= 1e-10 * (1.0 + lin.norm()));
    }

    #[test]
    fn spectral_reconstruction(seed in any::<u64>(), n in 4usize..25, r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::uniform(0.0, 2.0, n).unwrap();
        let r = r.min(n);
        let mut a = LinOp::zero(g.clone(), g.clone());
        for _ in 0..r {
            let f = random_fn(&mut rng, &g);
            a = a.add(&tensor(&f, &f).scale(rng.gen_range(0.1..3.0))).unwrap();
        }
        let eig = eig_self_adjoint(&a).unwrap();
        prop_assert_eq!(eig.numerical_rank(), r);
        let rebuilt = eig.spectral_sum(1, r, |l| l);
        prop_assert!(rel(rebuilt.kernel(), a.kernel()) < 1e-8);
    }

    #[test]
    fn parseval(seed in any::<u64>(), count in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::uniform(0.0, 1.0, 41).unwrap();
        let basis = fourier_basis(&g, count, true).unwrap();
        let f = random_fn(&mut rng, &g);
        let energy: f64 = basis.iter().map(|v| f.inner(v).unwrap().powi(2)).sum();
        prop_assert!(energy <= f.norm().powi(2) * (1.0 + 1e-10));
        let span = basis.iter().fold(GridFn::zeros(g.clone()), |acc, v| acc.add(&v.scale(rng.sample(StandardNormal))).unwrap());
        let e2: f64 = basis.iter().map(|v| span.inner(v).unwrap().powi(2)).sum();
        prop_assert!((e2 - span.norm().powi(2)).abs() <= 1e-8 * (1.0 + e2));
    }

    #[test]
    fn clr_round_trip_and_centering(seed in any::<u64>(), n in 5usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::uniform(-2.0, 3.0, n).unwrap();
        let raw = GridFn::new(g.clone(), (0..n).map(|_| rng.gen_range(0.01..5.0)).collect()).unwrap();
        let dens = raw.scale(1.0 / raw.integral());
        let h = clr(&dens, 0.0).unwrap();
        prop_assert!(h.integral().abs() < 1e-8);
        let back = inv_clr(&h).unwrap();
        prop_assert!(back.max_abs_diff(&dens) < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kde_mass_and_shift(seed in any::<u64>(), shift in -10.0f64..10.0, size in 5usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
        let h = rng.gen_range(0.1..1.0);
        let g = Grid::uniform(-4.0, 4.0, 101).unwrap();
        let k = kde(&sample, &g, h).unwrap();
        prop_assert!((k.integral() - 1.0).abs() < 1e-8);
        let moved: Vec<f64> = sample.iter().map(|x| x + shift).collect();
        let gs = Grid::uniform(-4.0 + shift, 4.0 + shift, 101).unwrap();
        let ks = kde(&moved, &gs, h).unwrap();
        let diff = k.values().iter().zip(ks.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-10 * (1.0 + k.values().iter().cloned().fold(0.0, f64::max)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_algebra_and_spectra(seed in any::<u64>(), t in 40usize..120, kappa in 0usize..3, d_n in 1usize..3) {
        let x = series(seed, t, 31, 7, d_n);
        let acov = Arc::new(autocov(&x, kappa, true).unwrap());
        let sp = split(acov.clone(), d_n).unwrap();
        let pn = &sp.p_n;
        prop_assert!(rel(pn.compose(pn).unwrap().kernel(), pn.kernel()) < 1e-8);
        prop_assert!(rel(pn.adjoint().kernel(), pn.kernel()) < 1e-8);
        prop_assert!(pn.compose(&sp.p_s).unwrap().kernel().amax() < 1e-8);
        prop_assert!((pn.trace().unwrap() - d_n as f64).abs() < 1e-8);

        let top = acov.eig_d.value(1);
        let r = acov.eig_d.numerical_rank().min(acov.eig_e.numerical_rank());
        for j in 1..=r {
            prop_assert!((acov.eig_d.value(j) - acov.eig_e.value(j)).abs() < 1e-8 * top);
        }
        for j in 1..=r.min(3) {
            let l = acov.eig_d.value(j);
            if j < r && (acov.eig_d.value(j + 1) - l).abs() < 1e-6 * top {
                continue;
            }
            let w = acov.c.apply(acov.eig_d.function(j)).unwrap().scale(1.0 / l.sqrt());
            let v = acov.eig_e.function(j);
            let cos = w.inner(v).unwrap().abs();
            prop_assert!((cos - 1.0).abs() < 1e-6, "j = {}, |cos| = {}", j, cos);
        }
    }

    #[test]
    fn centering_and_kappa_zero(seed in any::<u64>(), t in 30usize..90, kappa in 0usize..3) {
        let x = series(seed, t, 25, 6, 1);
        let a = autocov(&x, kappa, true).unwrap();
        let b = autocov(&x.demeaned(), kappa, false).unwrap();
        prop_assert!(rel(a.c.kernel(), b.c.kernel()) < 1e-10);
        prop_assert!(rel(a.d.kernel(), b.d.kernel()) < 1e-10);

        let z = autocov(&x, 0, true).unwrap();
        let c0 = eig_self_adjoint(&z.c).unwrap();
        for j in 1..=3 {
            let cos = c0.function(j).inner(z.eig_d.function(j)).unwrap().abs();
            prop_assert!((cos - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fit_structure(seed in any::<u64>(), t in 80usize..160, kappa in 0usize..2) {
        let x = series(seed, t, 25, 6, 2);
        let g = x.grid().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let op = random_op(&mut rng, &g, &g).scale(0.2);
        let noise = series(seed.wrapping_add(1), t, 25, 6, 0);
        let y = x.map_op(&op).unwrap().add_series(&noise);
        let cfg = FitConfig { a1: 0.05, ..FitConfig::new(kappa, 2) };
        let r = match fit(&x, &y, &cfg) {
            Ok(r) => r,
            Err(e) => return Err(TestCaseError::reject(e.to_string())),
        };
        prop_assert_eq!(r.f_n.add(&r.f_s).unwrap().kernel().clone(), r.f_total.kernel().clone());
        let scale = r.f_total.kernel().amax().max(1.0);
        prop_assert!(r.f_n.compose(&r.split.p_s).unwrap().kernel().amax() < 1e-10 * scale);
        prop_assert!(r.f_s.compose(&r.split.p_n).unwrap().kernel().amax() < 1e-10 * scale);

        let u = fit(&x.demeaned(), &y.demeaned(), &FitConfig { centered: false, ..cfg }).unwrap();
        prop_assert!(rel(u.f_total.kernel(), r.f_total.kernel()) < 1e-10);
        let icpt = y.mean().sub(&u.f_total.apply(&x.mean()).unwrap()).unwrap();
        prop_assert!(icpt.max_abs_diff(&r.intercept) < 1e-10 * (1.0 + icpt.norm()));

        for _ in 0..5 {
            let zeta = random_fn(&mut rng, &g);
            prop_assert!(r.theta_hat(&zeta).unwrap() >= 0.0);
        }
    }

    #[test]
    fn vr_invariances(seed in any::<u64>(), t in 60usize..150, c in prop_oneof![-50.0f64..-0.02, 0.02f64..50.0]) {
        let x = series(seed, t, 33, 8, 2);
        let a = vr_eigen(&x, 5, true).unwrap();
        let b = vr_eigen(&x.scale(c), 5, true).unwrap();
        for (ga, gb) in a.gammas.iter().zip(&b.gammas) {
            prop_assert!((ga - gb).abs() <= 1e-8 * (1.0 + ga.abs()));
        }
        for d in 1..5 {
            prop_assert!(a.stat(d + 1) >= a.stat(d));
        }
        let raw = vr_eigen(&x.demeaned(), 5, false).unwrap();
        for (ga, gr) in a.gammas.iter().zip(&raw.gammas) {
            prop_assert!((ga - gr).abs() <= 1e-8 * (1.0 + ga.abs()));
        }
    }
}

trait AddSeries {
    fn add_series(&self, other: &FnSeries) -> FnSeries;
}

impl AddSeries for FnSeries {
    fn add_series(&self, other: &FnSeries) -> FnSeries {
        FnSeries::new(self.grid().clone(), self.matrix() + other.matrix()).unwrap()
    }
}
