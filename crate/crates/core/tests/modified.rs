use cbflab_core::equilibria::{find_equilibria, interior_certificate, EquilibriumKind};
use cbflab_core::modified::*;
use cbflab_core::sampling::{SampleConfig, SearchBox};
use cbflab_core::scenarios::{self, ring};
use cbflab_core::sim::{batch, ControllerMode, IntegratorConfig};
use cbflab_core::{
    classify_region, CertificatePair, ControlSystem, DynamicsModel, Error, Quadratic, RegionTag, ScalarCertificate,
    Weight,
};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn w(p: f64) -> Weight {
    Weight::new(p).unwrap()
}

#[test]
fn sontag_examples() {
    let s = scenarios::load("example3").unwrap();
    let nom = sontag_nominal(&s.system.model, s.certs(), &s.sampling(10_000, 4)).unwrap();
    assert_eq!(nom.provenance, Provenance::Sontag);
    let u = nom.eval(&dvector![1.0, 0.0]);
    assert!((u - dvector![-(1.0 + 2f64.sqrt()), 0.0]).amax() < 1e-12);
    assert_eq!(nom.eval(&dvector![0.0, 0.0]), dvector![0.0, 0.0]);

    // L_fV < 0 with no input authority
    let stable = DynamicsModel::new(2, 2, |x| -x, |_| DMatrix::zeros(2, 2)).unwrap();
    let nom = sontag_nominal(&stable, s.certs(), &s.sampling(1000, 4)).unwrap();
    assert_eq!(nom.eval(&dvector![1.0, -2.0]), dvector![0.0, 0.0]);
}

#[test]
fn sontag_rejected_without_authority() {
    let s = scenarios::load("example3").unwrap();
    let unstable = DynamicsModel::new(2, 2, |x| x.clone(), |_| DMatrix::zeros(2, 2)).unwrap();
    match sontag_nominal(&unstable, s.certs(), &s.sampling(1000, 4)) {
        Err(Error::NominalRejected { state, violation }) => {
            assert_eq!(state.len(), 2);
            assert!(violation > 0.0);
        }
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn user_nominal_is_verified() {
    let s = scenarios::load("example3").unwrap();
    let weak = NominalController::linear(DMatrix::identity(2, 2) * -1.0);
    assert!(matches!(
        verify_nominal(&s.system.model, s.certs(), &weak, &s.sampling(10_000, 1)),
        Err(Error::NominalRejected { .. })
    ));
    let s5 = scenarios::load("example5").unwrap();
    verify_nominal(&s5.system.model, s5.certs(), s5.nominal.as_ref().unwrap(), &s5.sampling(10_000, 1)).unwrap();
}

#[test]
fn transform_examples() {
    let s5 = scenarios::load("example5").unwrap();
    let t = s5.transformed().unwrap();
    for x in s5.sampling(100, 3).draw() {
        assert!((t.model.drift(&x).unwrap() + &x).amax() < 1e-12);
    }
    assert!(t.model.drift(&DVector::zeros(2)).unwrap().amax() < 1e-9);

    let s6 = scenarios::load("example6").unwrap();
    let t = s6.transformed().unwrap();
    for x in s6.sampling(100, 3).draw() {
        let expect = dvector![x[1], -x[0] - x[1]];
        assert!((t.model.drift(&x).unwrap() - expect).amax() < 1e-12);
    }

    let zero = transform(&s6.system.model, NominalController::linear(DMatrix::zeros(1, 2)));
    for x in s6.sampling(50, 3).draw() {
        assert_eq!(zero.model.drift(&x).unwrap(), s6.system.model.drift(&x).unwrap());
    }
}

#[test]
fn filtered_control_examples() {
    let s = scenarios::load("example5").unwrap();
    let t = s.transformed().unwrap();
    let c = s.certs();
    assert_eq!(filtered_control(&t, c, w(1.0), &dvector![0.0, 0.0]).unwrap().u, dvector![0.0, 0.0]);
    let fc = filtered_control(&t, c, w(1.0), &dvector![1.0, 0.0]).unwrap();
    assert_eq!(fc.correction.region, RegionTag::ClfOffCbfOff);
    assert_eq!(fc.u, dvector![-2.0, 0.0]);
    let fc = filtered_control(&t, c, w(1.0), &dvector![0.0, 6.0]).unwrap();
    assert!((&fc.correction.u_star - dvector![0.0, 6.0]).amax() < 1e-12);
    assert!((fc.u - dvector![0.0, -6.0]).amax() < 1e-12);
}

#[test]
fn transformed_clf_offset_is_nonpositive_and_slack_vanishes() {
    for name in ["example5", "example6"] {
        let s = scenarios::load(name).unwrap();
        let ts = s.transformed_system().unwrap();
        let mut outside = 0usize;
        for x in s.sampling(10_000, 12).draw() {
            let lie = ts.lie_data(&x).unwrap();
            assert!(lie.f_v <= 1e-8, "{name}: F_V' = {} at {x:?}", lie.f_v);
            for p in [0.1, 1.0, 10.0] {
                let sol = cbflab_core::solve(&lie, w(p)).unwrap();
                if sol.delta > 1e-9 {
                    assert!(x.norm() > 0.5, "{name}: slack {} near the origin", sol.delta);
                    outside += 1;
                }
            }
        }
        eprintln!("{name}: {outside} sampled (state, p) pairs with positive slack away from the origin");
    }
}

#[test]
fn modified_loop_has_no_interior_equilibria() {
    for name in ["example5", "example6"] {
        let s = scenarios::load(name).unwrap();
        let ts = s.transformed_system().unwrap();
        for p in [0.1, 1.0, 10.0] {
            let r = find_equilibria(&ts, w(p), &s.search_grid()).unwrap();
            assert_eq!(r.count(EquilibriumKind::Interior), 0, "{name} p={p}");
            assert_eq!(r.count(EquilibriumKind::Boundary1), 0);
            assert_eq!(r.count(EquilibriumKind::Origin), 1);
            assert!(r.anomalies.is_empty());
            assert!(interior_certificate(&ts, w(p), &s.search_grid()).unwrap().holds);
        }
    }
    // the boundary point (0,6) survives the modification
    let s = scenarios::load("example5").unwrap();
    let r = find_equilibria(&s.transformed_system().unwrap(), w(1.0), &s.search_grid()).unwrap();
    assert!(r.of_kind(EquilibriumKind::Boundary2).any(|e| (&e.location - dvector![0.0, 6.0]).norm() < 1e-4));
}

#[test]
fn local_stability_from_small_ring() {
    let cfg = IntegratorConfig::default();
    for name in ["example5", "example6"] {
        let s = scenarios::load(name).unwrap();
        let lp = s.closed_loop(ControllerMode::Modified).unwrap();
        for p in [0.1, 1.0, 10.0] {
            for t in batch(&lp, w(p), &ring(16, 0.1), &cfg) {
                assert!(t.unwrap().last_state().unwrap().norm() <= 1e-3);
            }
        }
    }
}

#[test]
fn lipschitz_conditions_on_examples() {
    let s2 = scenarios::load("example2").unwrap();
    let rep = lipschitz_precondition(&s2.system, &s2.sampling(10_000, 8)).unwrap();
    assert!(!rep.condition_i);
    assert!(rep.condition_ii);
    assert!(rep.min_lgh_norm <= 1e-6);
    let x = &rep.min_lgh_at;
    assert!((-0.15 * x[0] - 0.2 * x[1]).abs() <= 1e-6);

    // the transformed plant shares M with the original one
    let s6 = scenarios::load("example6").unwrap();
    let rep = lipschitz_precondition(&s6.transformed_system().unwrap(), &s6.sampling(10_000, 8)).unwrap();
    assert!(!rep.condition_i && rep.condition_ii);

    let s1 = scenarios::load("example1").unwrap();
    let rep = lipschitz_precondition(&s1.system, &s1.sampling(10_000, 8)).unwrap();
    assert!(rep.condition_ii);
    assert!((&rep.min_lgh_at - dvector![0.0, 4.0]).norm() < 1e-5);

    let flat = scenarios::load("example5-noobstacle").unwrap();
    let rep = lipschitz_precondition(&flat.system, &flat.sampling(10_000, 8)).unwrap();
    assert!(!rep.condition_i && rep.condition_ii);
}

#[test]
fn lipschitz_detects_nonempty_m() {
    // h = 1 − x2² + x1 has L_gh = 0 and F_h = 0 at (−1, 0) when g only acts on x2
    // and the drift vanishes there.
    let model = DynamicsModel::new(2, 1, |x| dvector![0.0, -x[1]], |_| dmatrix![0.0; 1.0]).unwrap();
    let s = scenarios::load("example1").unwrap();
    let certs = CertificatePair::new(
        s.certs().clf.clone(),
        s.certs().gamma.clone(),
        ScalarCertificate::from_quadratic(Quadratic::new(dmatrix![0.0, 0.0; 0.0, -1.0], dvector![1.0, 0.0], 1.0).unwrap()),
        s.certs().alpha.clone(),
    )
    .unwrap();
    let sys = ControlSystem::new(model, certs);
    let rep = lipschitz_precondition(&sys, &SampleConfig::new(SearchBox::symmetric(2, 3.0).unwrap(), 10_000, 2)).unwrap();
    assert!(!rep.condition_ii);
    let x = rep.m_witness.unwrap();
    assert!((x[0] + 1.0).abs() < 1e-5 && x[1].abs() < 1e-5);
}

/// Smallest `V` over grid nodes in the doubly active region or where the
/// QP has no region.
fn brute_force_eta(sys: &ControlSystem, p: Weight, half: f64, n: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let x = dvector![
                -half + 2.0 * half * i as f64 / (n - 1) as f64,
                -half + 2.0 * half * j as f64 / (n - 1) as f64
            ];
            let lie = sys.lie_data(&x).unwrap();
            if !matches!(classify_region(&lie, p), Ok(t) if t != RegionTag::ClfOnCbfOn2) {
                best = best.min(lie.v);
            }
        }
    }
    best
}

#[test]
fn roa_matches_brute_force_and_is_seeded() {
    let s = scenarios::load("example5").unwrap();
    let ts = s.transformed_system().unwrap();
    let cfg = RoaConfig::new(s.bounds.clone(), 7);
    let a = estimate_roa(&ts, w(1.0), &cfg).unwrap();
    assert_eq!(a, estimate_roa(&ts, w(1.0), &cfg).unwrap());
    assert!(a.sample_count >= 10_000);
    let bf = brute_force_eta(&ts, w(1.0), 8.0, 801);
    assert!((a.eta - bf).abs() <= 0.02 * bf, "sampled {} vs grid {}", a.eta, bf);
    assert!((a.sampled_radius.unwrap() - (2.0 * a.eta).sqrt()).abs() < 1e-12);
}

#[test]
fn roa_without_obstacle_is_box_supremum() {
    let s = scenarios::load("example5-noobstacle").unwrap();
    let ts = s.transformed_system().unwrap();
    let e = estimate_roa(&ts, w(1.0), &RoaConfig::new(s.bounds.clone(), 1)).unwrap();
    assert_eq!(e.eta, 64.0);
}

#[test]
fn roa_does_not_shrink_with_smaller_obstacle() {
    let base = scenarios::load("example5").unwrap();
    let mut etas = Vec::new();
    for radius in [2.0, 1.5] {
        let cbf = Quadratic::new(DMatrix::identity(2, 2), dvector![0.0, -8.0], 16.0 - radius * radius).unwrap();
        let c = base.certs();
        let certs =
            CertificatePair::new(c.clf.clone(), c.gamma.clone(), ScalarCertificate::from_quadratic(cbf), c.alpha.clone())
                .unwrap();
        let ts = base.transformed().unwrap().system(&certs);
        let e = estimate_roa(&ts, w(1.0), &RoaConfig::new(base.bounds.clone(), 3)).unwrap();
        let bf = brute_force_eta(&ts, w(1.0), 8.0, 801);
        assert!((e.eta - bf).abs() <= 0.02 * bf);
        etas.push(e.eta);
    }
    assert!(etas[1] >= etas[0] * (1.0 - 2e-3));
}

#[test]
fn roa_example6_baseline() {
    let s = scenarios::load("example6").unwrap();
    let ts = s.transformed_system().unwrap();
    let e = estimate_roa(&ts, w(1.0), &RoaConfig::new(s.bounds.clone(), 7)).unwrap();
    assert!(e.eta > 0.0);
    assert_eq!(e.eta, 162.5);
    assert!(e.sampled_radius.is_none());
}

#[test]
fn roa_rejects_empty_budget() {
    let s = scenarios::load("example5").unwrap();
    let ts = s.transformed_system().unwrap();
    let cfg = RoaConfig {
        samples: 0,
        ..RoaConfig::new(s.bounds.clone(), 7)
    };
    assert!(matches!(estimate_roa(&ts, w(1.0), &cfg), Err(Error::EstimateUnavailable(_))));
}
