use cbflab_core::oracle::{enumerate_candidates, solve_oracle};
use cbflab_core::qp::LGH_ZERO;
use cbflab_core::sampling::{SampleConfig, SearchBox};
use cbflab_core::scenarios::{self, BUILTIN};
use cbflab_core::{classify_region, lie_data, solve, ComparisonFunction, ComparisonKind, LieData, RegionTag, State, Weight};
use nalgebra::{dvector, DVector};
use proptest::prelude::*;

const EXAMPLES: &[&str] = &["example1", "example2", "example3", "example5", "example6"];

fn w(p: f64) -> Weight {
    Weight::new(p).unwrap()
}

fn fd_gradient(f: impl Fn(&State) -> f64, x: &State) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

#[test]
fn certificate_gradients_match_finite_differences() {
    for name in BUILTIN {
        let s = scenarios::load(name).unwrap();
        let box10 = SearchBox::symmetric(s.state_dim(), 10.0).unwrap();
        for x in SampleConfig::new(box10, 100, 3).draw() {
            for cert in [&s.certs().clf, &s.certs().cbf] {
                let exact = cert.gradient(&x);
                let fd = fd_gradient(|y| cert.value(y), &x);
                let scale = exact.norm().max(1.0);
                assert!((exact - fd).norm() <= 1e-5 * scale, "{name} at {x:?}");
            }
        }
    }
}

#[test]
fn comparison_functions_are_strictly_increasing() {
    let mut rng_vals: Vec<f64> = SampleConfig::new(SearchBox::symmetric(1, 50.0).unwrap(), 1000, 5)
        .draw()
        .into_iter()
        .map(|x| x[0])
        .collect();
    rng_vals.sort_by(f64::total_cmp);
    for name in BUILTIN {
        let s = scenarios::load(name).unwrap();
        let c = s.certs();
        for (f, domain_nonneg) in [(&c.gamma, true), (&c.alpha, false)] {
            assert!(f.eval(0.0).abs() <= 1e-12);
            let xs: Vec<f64> = rng_vals
                .iter()
                .map(|v| if domain_nonneg { v.abs() } else { *v })
                .collect::<Vec<_>>();
            let mut xs = xs;
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            for pair in xs.windows(2) {
                assert!(f.eval(pair[0]) < f.eval(pair[1]), "{name}");
            }
        }
    }
    let g1 = ComparisonFunction::custom(ComparisonKind::ClassK, |s| (2.0 * s).sqrt());
    assert_eq!(g1.eval(0.0), 0.0);
}

#[test]
fn clf_is_positive_away_from_origin() {
    for name in EXAMPLES {
        let s = scenarios::load(name).unwrap();
        for x in s.sampling(1000, 9).draw() {
            if x.norm() > 1e-6 {
                assert!(s.certs().clf.value(&x) > 0.0);
            }
        }
    }
}

#[test]
fn lie_data_assembly_matches_direct_formula() {
    for name in EXAMPLES {
        let s = scenarios::load(name).unwrap();
        let c = s.certs();
        for x in s.sampling(200, 2).draw() {
            let lie = s.system.lie_data(&x).unwrap();
            let f = s.system.model.drift(&x).unwrap();
            let g = s.system.model.input_map(&x).unwrap();
            let fv = c.clf.gradient(&x).dot(&f) + c.gamma.eval(c.clf.value(&x));
            let fh = c.cbf.gradient(&x).dot(&f) + c.alpha.eval(c.cbf.value(&x));
            assert!((lie.f_v - fv).abs() <= 1e-12 * fv.abs().max(1.0));
            assert!((lie.f_h - fh).abs() <= 1e-12 * fh.abs().max(1.0));
            assert!((lie.lg_v.clone() - g.tr_mul(&c.clf.gradient(&x))).amax() <= 1e-12);
            assert_eq!(lie.f_v, lie.lf_v + c.gamma.eval(lie.v));
            assert_eq!(lie.f_h, lie.lf_h + c.alpha.eval(lie.h));
        }
    }
}

#[test]
fn example_lie_data_values() {
    let s = scenarios::load("example1").unwrap();
    let l = lie_data(&s.system.model, s.certs(), &dvector![1.0, 0.0]).unwrap();
    assert_eq!((l.lf_v, l.f_v, l.lf_h, l.f_h), (-1.0, -0.5, -2.0, 11.0));
    assert_eq!(l.lg_v, dvector![1.0, 0.0]);
    assert_eq!(l.lg_h, dvector![2.0, -8.0]);

    let s = scenarios::load("example3").unwrap();
    let l = s.system.lie_data(&dvector![1.0, 0.0]).unwrap();
    assert_eq!((l.lf_v, l.f_v, l.f_h), (1.0, 1.5, 15.0));
}

fn check_solution(lie: &LieData, p: Weight) {
    let s = solve(lie, p).unwrap();
    let scale = 1.0 + lie.f_v.abs() + lie.f_h.abs();
    assert!((s.delta - s.lambda1 / p.value()).abs() <= 1e-9 * (1.0 + s.delta.abs()));
    assert!(s.lambda1 >= -1e-12 && s.lambda2 >= -1e-12);
    assert!(s.cbf_residual() >= -1e-9 * scale, "cbf {:e}", s.cbf_residual());
    assert!(s.clf_residual() <= 1e-9 * scale, "clf {:e}", s.clf_residual());
    assert!(s.stationarity().amax() <= 1e-9 * (1.0 + s.u_star.amax()));
    assert!((s.lambda1 * s.clf_residual()).abs() <= 1e-8 * scale * (1.0 + s.lambda1));
    assert!((s.lambda2 * s.cbf_residual()).abs() <= 1e-8 * scale * (1.0 + s.lambda2));
    if matches!(s.region, RegionTag::ClfOffCbfOff | RegionTag::ClfOffCbfOn1) {
        assert!(s.u_star.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn region_coverage_and_kkt_on_every_scenario() {
    for name in EXAMPLES {
        let s = scenarios::load(name).unwrap();
        let sys = if ["example5", "example6"].contains(name) {
            s.transformed_system().unwrap()
        } else {
            s.system.clone()
        };
        for p in [0.1, 1.0, 10.0] {
            for x in s.sampling(10_000, 17).draw() {
                let lie = sys.lie_data(&x).unwrap();
                classify_region(&lie, w(p)).unwrap_or_else(|e| panic!("{name} at {x:?}: {e}"));
                check_solution(&lie, w(p));
            }
        }
    }
}

#[test]
fn closed_form_matches_oracle_on_scenarios() {
    for name in EXAMPLES {
        let s = scenarios::load(name).unwrap();
        for p in [0.1, 1.0, 10.0, 100.0] {
            for x in s.sampling(10_000, 23).draw() {
                let lie = s.system.lie_data(&x).unwrap();
                let a = solve(&lie, w(p)).unwrap();
                let b = solve_oracle(&lie, w(p)).unwrap();
                assert!((&a.u_star - &b.u_star).amax() <= 1e-6, "{name} p={p} at {x:?}");
                assert!((a.delta - b.delta).abs() <= 1e-6);
                let obj = a.objective(w(p)).abs().max(1.0);
                assert!((a.objective(w(p)) - b.objective(w(p))).abs() <= 1e-9 * obj);
            }
        }
    }
}

#[test]
fn oracle_activity_matches_region_tag_off_boundaries() {
    let s = scenarios::load("example1").unwrap();
    let p = w(1.0);
    let mut checked = 0;
    for x in s.sampling(5_000, 31).draw() {
        let lie = s.system.lie_data(&x).unwrap();
        let tag = classify_region(&lie, p).unwrap();
        let sol = solve(&lie, p).unwrap();
        // skip states within slack of a region boundary
        let near_boundary = sol.lambda1.abs() < 1e-8 && tag.clf_active()
            || sol.lambda2.abs() < 1e-8 && tag.cbf_active()
            || sol.clf_residual().abs() < 1e-8 && !tag.clf_active()
            || sol.cbf_residual().abs() < 1e-8 && !tag.cbf_active();
        if near_boundary {
            continue;
        }
        let o = solve_oracle(&lie, p).unwrap();
        assert_eq!(o.region.clf_active(), tag.clf_active());
        assert_eq!(o.region.cbf_active(), tag.cbf_active());
        checked += 1;
    }
    assert!(checked > 4_000);
}

fn arb_lie(m: usize) -> impl Strategy<Value = LieData> {
    (
        prop::collection::vec(-5.0..5.0f64, m),
        prop::collection::vec(-5.0..5.0f64, m),
        -10.0..10.0f64,
        -10.0..10.0f64,
        0.0..10.0f64,
        -5.0..5.0f64,
        any::<bool>(),
    )
        .prop_map(|(lgv, lgh, lfv, lfh, v, h, zero_lgh)| {
            let lg_h = if zero_lgh { DVector::zeros(lgh.len()) } else { DVector::from_vec(lgh) };
            // keep the CBF condition satisfiable when L_gh vanishes
            let h = if zero_lgh { h.abs() + lfh.abs() } else { h };
            LieData {
                f_v: lfv + v,
                f_h: lfh + h,
                lf_v: lfv,
                lg_v: DVector::from_vec(lgv),
                lf_h: lfh,
                lg_h,
                v,
                h,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn random_lie_data_closed_form_vs_oracle(lie in (1usize..4).prop_flat_map(arb_lie), p in 0.01..100.0f64) {
        let p = w(p);
        check_solution(&lie, p);
        let a = solve(&lie, p).unwrap();
        let b = solve_oracle(&lie, p).unwrap();
        prop_assert!((&a.u_star - &b.u_star).amax() <= 1e-6);
        prop_assert!((a.delta - b.delta).abs() <= 1e-6);
        prop_assert!(enumerate_candidates(&lie, p).iter().any(|c| c.feasible));
    }

    #[test]
    fn branches_agree_across_region_boundaries(
        lgv in prop::collection::vec(-3.0..3.0f64, 2),
        lgh in prop::collection::vec(-3.0..3.0f64, 2),
        fv in -5.0..5.0f64,
        p in 0.1..10.0f64,
    ) {
        // F_h placed exactly where the CBF row becomes active for the CLF-only input
        let lg_v = DVector::from_vec(lgv);
        let lg_h = DVector::from_vec(lgh);
        prop_assume!(lg_h.norm() > LGH_ZERO);
        let pw = w(p);
        let l1 = fv.max(0.0) / (1.0 / p + lg_v.norm_squared());
        let fh = l1 * lg_h.dot(&lg_v);
        let lie = LieData { lf_v: fv, lg_v, f_v: fv, lf_h: fh, lg_h, f_h: fh, v: 0.0, h: 0.0 };
        let base = solve(&lie, pw).unwrap();
        for eps in [1e-9, -1e-9] {
            let mut nudged = lie.clone();
            nudged.f_h += eps;
            let other = solve(&nudged, pw).unwrap();
            prop_assert!((&base.u_star - &other.u_star).amax() <= 1e-6);
        }
    }
}
