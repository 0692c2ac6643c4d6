//! Acceptance suite: one test per acceptance criterion, each printing a
//! single `criterion N: PASS` line with its headline numbers (visible under
//! `--nocapture`; failures panic with the same numbering).

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use jetinv::distribution::{default_guards, null_covector, sample_point, SpanSampler};
use jetinv::equivalence::Automorphism;
use jetinv::invariants::{
    gaussian_k, hessian, invariant_i, invariant_i_at_jet, invariant_v, J1Point, Lagrangian,
};
use jetinv::jet::{BundleVectorField, EtaRoute, JetCoordinateSystem, JetPoint};
use jetinv::prolong::{explicit_components, LiftedField, VectorFieldData};
use jetinv::testsupport::{
    brioschi_fd_k, fd_gradient, random_automorphism, random_j1_point, random_polynomial,
    random_quartic_lagrangian, seeded,
};
use jetinv::{Expr, Scalar};
use rand::Rng;

fn run_jetinv(args: &[&str]) -> (i32, serde_json::Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_jetinv"))
        .args(args)
        .env_remove("JETINV_SEED")
        .output()
        .expect("binary runs");
    let json = if out.stdout.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&out.stdout).expect("stdout is JSON")
    };
    (out.status.code().expect("no signal"), json)
}

/// The three-Lagrangian test family of criteria 4 and 5. The exponential
/// member needs m = 1 (its Hessian is singular for m > 1), the others run
/// at m = 2 to exercise genuinely multidimensional fibers.
fn test_family(rng: &mut impl Rng) -> Vec<Lagrangian> {
    vec![
        Lagrangian::parse(2, "dy1^2/2 + dy2^2/2").unwrap(),
        Lagrangian::parse(1, "exp(dy1)").unwrap(),
        random_quartic_lagrangian(2, rng),
    ]
}

/// Draw a point accepted by the automorphism guards at which both the
/// transformed Lagrangian (at the point) and the original (at its image)
/// admit the invariants.
fn guarded_point(
    lagrangian: &Lagrangian,
    moved: &Lagrangian,
    phi: &Automorphism,
    rng: &mut impl Rng,
) -> (J1Point<Scalar>, J1Point<Scalar>) {
    for _ in 0..500 {
        let p = random_j1_point(lagrangian.m(), 1.0, rng);
        if phi.guards_at(&p).is_err() {
            continue;
        }
        let image = phi.prolong_point(&p).expect("guards admit the lift");
        if invariant_i(moved, &p).is_ok() && invariant_i(lagrangian, &image).is_ok() {
            return (p, image);
        }
    }
    panic!("guard sampling exhausted after 500 draws");
}

#[test]
fn criterion_1_second_order_rank_theorem() {
    let mut summary = Vec::new();
    for m in 1..=3usize {
        let expected_rank = 2 * m * m + 7 * m + 3;
        let ambient = expected_rank + 1;
        let started = Instant::now();
        let (code, json) = run_jetinv(&[
            "rank", "--m", &m.to_string(), "--order", "2", "--seed", "7",
        ]);
        let elapsed = started.elapsed();
        assert_eq!(code, 0, "criterion 1: rank command failed for m={m}");
        assert_eq!(json["ambient"], ambient as u64, "criterion 1: ambient, m={m}");
        assert_eq!(json["rank"], expected_rank as u64, "criterion 1: rank, m={m}");
        assert_eq!(json["match"], true, "criterion 1: match flag, m={m}");
        let per_point = json["per_point_ranks"].as_array().unwrap();
        assert_eq!(per_point.len(), 20, "criterion 1: 20 points, m={m}");
        let agreeing = per_point
            .iter()
            .filter(|r| r.as_u64() == Some(expected_rank as u64))
            .count();
        assert!(
            10 * agreeing >= 9 * per_point.len(),
            "criterion 1: only {agreeing}/20 points at the expected rank for m={m}"
        );
        assert!(
            elapsed.as_secs_f64() < 10.0,
            "criterion 1: m={m} took {elapsed:?}"
        );
        summary.push(format!(
            "m={m} rank {expected_rank}/{ambient} at {agreeing}/20 points in {elapsed:.2?}"
        ));
    }
    println!("criterion 1: PASS - {}", summary.join("; "));
}

#[test]
fn criterion_2_low_orders_have_no_invariants() {
    for m in 1..=3usize {
        for (order, expected) in [(0usize, 2 * m + 2), (1, 4 * m + 3)] {
            let (code, json) = run_jetinv(&[
                "rank", "--m", &m.to_string(), "--order", &order.to_string(), "--seed", "7",
            ]);
            assert_eq!(code, 0, "criterion 2: rank failed, m={m} order={order}");
            assert_eq!(
                json["rank"], expected as u64,
                "criterion 2: rank, m={m} order={order}"
            );
            assert_eq!(
                json["ambient"], expected as u64,
                "criterion 2: full rank, m={m} order={order}"
            );
        }
    }
    println!("criterion 2: PASS - orders 0 and 1 are full rank (2m+2, 4m+3) for m=1,2,3");
}

#[test]
fn criterion_3_formula_cross_validation() {
    // Generic prolongation against the explicit per-coordinate coefficients.
    let mut rng = seeded(300);
    let mut worst: Scalar = 0.0;
    for m in 1..=3usize {
        let lift = LiftedField::generic(m, 2, EtaRoute::Leibniz).unwrap();
        let sys = JetCoordinateSystem::for_curves(m, 2);
        for _ in 0..100 {
            let data = VectorFieldData::<Scalar>::random(m, &mut rng);
            let point = sample_point(m, 2, &[], 1e-2, &mut rng, 10).unwrap();
            let binding = LiftedField::generic_binding(&point, &data);
            let generic = lift.evaluate(&binding).unwrap();
            let explicit = explicit_components(&data, &point);
            assert_eq!(generic.len(), explicit.len());
            for (i, (g, e)) in generic.iter().zip(&explicit).enumerate() {
                let rel = (g - e).abs() / (1.0 + g.abs());
                assert!(
                    rel <= 1e-9,
                    "criterion 3: m={m} component {} disagrees: {g} vs {e}",
                    sys.coordinates()[i]
                );
                worst = worst.max(rel);
            }
        }
    }

    // The two eta recursions agree for every |I| <= 3 over up to 5 slots.
    for nu in 1..=5usize {
        let names: Vec<String> = (1..=nu).map(|a| format!("t{a}")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let system = JetCoordinateSystem::shared(&name_refs, 3);
        let mut eta_vars = name_refs.clone();
        eta_vars.push("z");
        let xi: Vec<Expr> = (0..nu)
            .map(|_| random_polynomial(&name_refs, 2, 1.0, &mut rng))
            .collect();
        let eta = random_polynomial(&eta_vars, 2, 1.0, &mut rng);
        let field = BundleVectorField::new(system.clone(), xi, eta).unwrap();
        let direct = field.prolong(3, EtaRoute::Direct).unwrap();
        let leibniz = field.prolong(3, EtaRoute::Leibniz).unwrap();
        assert_eq!(direct.len(), leibniz.len());
        for _ in 0..5 {
            let host = system.with_order(3);
            let mut binding = jetinv::Binding::new();
            for sym in host.coordinates() {
                binding.set(sym.as_str(), rng.gen_range(-2.0..2.0));
            }
            for ((sa, fa), (sb, fb)) in direct.iter().zip(&leibniz) {
                assert_eq!(sa, sb);
                let a: Scalar = fa.expr().eval(&binding).unwrap();
                let b: Scalar = fb.expr().eval(&binding).unwrap();
                let rel = (a - b).abs() / (1.0 + a.abs());
                assert!(
                    rel <= 1e-9,
                    "criterion 3: nu={nu} component {sa}: direct {a} vs leibniz {b}"
                );
                worst = worst.max(rel);
            }
        }
    }
    println!("criterion 3: PASS - both dual routes agree, worst relative error {worst:.3e}");
}

#[test]
fn criterion_4_i_is_a_scalar_invariant() {
    let mut rng = seeded(400);
    let mut worst: Scalar = 0.0;
    let mut reversing = 0usize;
    for lagrangian in test_family(&mut rng) {
        let m = lagrangian.m();
        for _ in 0..25 {
            let phi = random_automorphism(m, true, &mut rng);
            if phi.phi_prime_at(0.0).unwrap_or(1.0) < 0.0 {
                reversing += 1;
            }
            let moved = phi.transform_lagrangian(&lagrangian).unwrap();
            for _ in 0..25 {
                let (p, image) = guarded_point(&lagrangian, &moved, &phi, &mut rng);
                let i_moved = invariant_i(&moved, &p).unwrap();
                let i_orig = invariant_i(&lagrangian, &image).unwrap();
                let err = (i_moved - i_orig).abs();
                assert!(
                    err <= 1e-8 * (1.0 + i_orig.abs()),
                    "criterion 4: m={m}: I {i_moved} vs {i_orig}"
                );
                worst = worst.max(err / (1.0 + i_orig.abs()));
            }
        }
    }
    assert!(reversing > 0, "criterion 4: no orientation-reversing map drawn");
    println!(
        "criterion 4: PASS - I invariant over 75 maps ({reversing} reversing) x 25 points, worst {worst:.3e}"
    );
}

#[test]
fn criterion_5_v_transforms_with_the_inverse_base_derivative() {
    let mut rng = seeded(500);
    let mut worst: Scalar = 0.0;
    for lagrangian in test_family(&mut rng) {
        let m = lagrangian.m();
        for _ in 0..25 {
            let phi = random_automorphism(m, true, &mut rng);
            let moved = phi.transform_lagrangian(&lagrangian).unwrap();
            for _ in 0..25 {
                let (p, image) = guarded_point(&lagrangian, &moved, &phi, &mut rng);
                let weighted = invariant_v(&moved, &p).unwrap() * phi.phi_prime_at(p.x).unwrap();
                let reference = invariant_v(&lagrangian, &image).unwrap();
                let rel = (weighted - reference).abs() / (1.0 + reference.abs());
                assert!(
                    rel <= 1e-8,
                    "criterion 5: m={m}: V phi' = {weighted} vs {reference}"
                );
                worst = worst.max(rel);
            }
        }
    }
    println!("criterion 5: PASS - V carries the (phi')^-1 weight, worst relative error {worst:.3e}");
}

#[test]
fn criterion_6_hessian_covariance() {
    let mut rng = seeded(600);
    let mut checked = 0usize;
    let mut worst: Scalar = 0.0;
    let family = test_family(&mut rng);
    while checked < 100 {
        let lagrangian = &family[checked % family.len()];
        let m = lagrangian.m();
        let phi = random_automorphism(m, true, &mut rng);
        let composed = phi.compose_lagrangian(lagrangian).unwrap();
        let mut accepted = 0;
        while accepted < 5 {
            let p = random_j1_point::<Scalar>(m, 1.0, &mut rng);
            if phi.guards_at(&p).is_err() {
                continue;
            }
            let image = phi.prolong_point(&p).unwrap();
            let g = hessian(lagrangian, &image).unwrap();
            let j = phi.velocity_jacobian(&p).unwrap();
            let conjugated = j.transpose() * g.matrix() * &j;
            let direct = hessian(&composed, &p).unwrap();
            let scale = g.matrix().norm();
            for a in 0..m {
                for b in 0..m {
                    let diff = (conjugated[(a, b)] - direct.matrix()[(a, b)]).abs();
                    assert!(
                        diff <= 1e-8 * scale,
                        "criterion 6: entry ({a},{b}): {} vs {}",
                        conjugated[(a, b)],
                        direct.matrix()[(a, b)]
                    );
                    worst = worst.max(diff / scale);
                }
            }
            accepted += 1;
            checked += 1;
        }
    }
    println!(
        "criterion 6: PASS - J^T g J matches the composed Hessian at {checked} points, worst {worst:.3e}"
    );
}

#[test]
fn criterion_7_gaussian_curvature() {
    let mut rng = seeded(700);

    // Flat cases: any quadratic, and the separable exponential.
    let flat = [
        Lagrangian::parse(2, "dy1^2/2 + dy2^2/2 + dy1*dy2/4").unwrap(),
        Lagrangian::parse(2, "exp(dy1) + exp(dy2)").unwrap(),
    ];
    for lagrangian in &flat {
        for _ in 0..10 {
            let p = random_j1_point::<Scalar>(2, 1.0, &mut rng);
            let k = gaussian_k(lagrangian, &p).unwrap();
            assert!(k.abs() <= 1e-10, "criterion 7: flat case K = {k}");
        }
    }

    // Closed formula against the finite-difference Brioschi oracle.
    let mut fd_worst: Scalar = 0.0;
    let mut compared = 0;
    while compared < 10 {
        let lagrangian = random_quartic_lagrangian(2, &mut rng);
        let p = random_j1_point::<Scalar>(2, 0.8, &mut rng);
        let (Ok(closed), Ok(oracle)) = (gaussian_k(&lagrangian, &p), brioschi_fd_k(&lagrangian, &p, 1e-4))
        else {
            continue;
        };
        let rel = (closed - oracle).abs() / (1.0 + closed.abs());
        assert!(
            rel <= 1e-6,
            "criterion 7: closed K {closed} vs Brioschi oracle {oracle}"
        );
        fd_worst = fd_worst.max(rel);
        compared += 1;
    }

    // Invariance under the vertical group.
    let lagrangian = Lagrangian::parse(2, "exp(dy1) + exp(dy2) + dy1*dy2").unwrap();
    let mut vert_worst: Scalar = 0.0;
    for _ in 0..10 {
        let general = random_automorphism(2, false, &mut rng);
        let phi = Automorphism::new(2, Expr::var("x"), general.psi().to_vec()).unwrap();
        assert!(phi.is_vertical());
        let moved = phi.transform_lagrangian(&lagrangian).unwrap();
        let mut accepted = 0;
        while accepted < 5 {
            let p = random_j1_point::<Scalar>(2, 1.0, &mut rng);
            if phi.guards_at(&p).is_err() {
                continue;
            }
            let image = phi.prolong_point(&p).unwrap();
            let (Ok(k_moved), Ok(k_orig)) =
                (gaussian_k(&moved, &p), gaussian_k(&lagrangian, &image))
            else {
                continue;
            };
            let rel = (k_moved - k_orig).abs() / (1.0 + k_orig.abs());
            assert!(
                rel <= 1e-6,
                "criterion 7: vertical map changed K: {k_moved} vs {k_orig}"
            );
            vert_worst = vert_worst.max(rel);
            accepted += 1;
        }
    }
    println!(
        "criterion 7: PASS - flat K <= 1e-10, oracle agreement worst {fd_worst:.3e}, vertical invariance worst {vert_worst:.3e}"
    );
}

#[test]
fn criterion_8_corank_covector_pairs_with_grad_i() {
    let mut rng = seeded(800);
    let mut worst_cos: Scalar = 1.0;
    for m in 1..=3usize {
        let sampler = SpanSampler::<Scalar>::new(m, 2).unwrap();
        for _ in 0..5 {
            let point = sample_point(m, 2, &default_guards(2), 1e-2, &mut rng, 10_000).unwrap();
            let matrix = sampler
                .span_matrix(&point, sampler.ambient() + 16, &mut rng)
                .unwrap();
            let w = null_covector(&matrix).unwrap();
            let system = point.system().clone();
            let grad = fd_gradient(
                |coords| {
                    let p = JetPoint::new(system.clone(), coords.to_vec()).unwrap();
                    invariant_i_at_jet(&p).unwrap_or(Scalar::NAN)
                },
                point.values(),
                1e-5,
            );
            let grad = nalgebra::DVector::from_vec(grad);
            assert!(
                grad.iter().all(|v| v.is_finite()),
                "criterion 8: gradient left the domain"
            );
            let pairing = w.dot(&grad).abs();
            assert!(
                pairing > 1e-6 * w.norm() * grad.norm(),
                "criterion 8: m={m}: pairing {pairing} too small against {} * {}",
                w.norm(),
                grad.norm()
            );
            worst_cos = worst_cos.min(pairing / (w.norm() * grad.norm()));
        }
    }
    println!(
        "criterion 8: PASS - covector and grad I stay paired for m=1,2,3, worst |cos| {worst_cos:.3e}"
    );
}

#[test]
fn criterion_9_end_to_end_equivalence_workflow() {
    let started = Instant::now();
    let distinct = problem_file(
        "accept-distinct.json",
        r#"{"m":1,"l1":"dy1^2/2","l2":"exp(dy1)"}"#,
    );
    let candidate = problem_file(
        "accept-candidate.json",
        r#"{"m":1,"l1":"dy1^2/2","l2":"dy1^2/16","phi":"2*x","psi":["y1"]}"#,
    );
    let scaled = problem_file(
        "accept-scaled.json",
        r#"{"m":1,"l1":"dy1^2/2","l2":"3*(dy1^2/2)"}"#,
    );

    let (code, json) = run_jetinv(&["check", "--problem", distinct.to_str().unwrap()]);
    assert_eq!(code, 4, "criterion 9: distinguishable pair must exit 4");
    assert_eq!(json["status"], "distinguished");

    let (code, json) = run_jetinv(&["check", "--problem", candidate.to_str().unwrap()]);
    assert_eq!(code, 0, "criterion 9: valid candidate must exit 0");
    assert_eq!(json["status"], "equivalent-under-given-map");
    let residual = json["candidate"]["max_relative_residual"].as_f64().unwrap();
    assert!(residual <= 1e-12, "criterion 9: residual {residual}");

    let (code, json) = run_jetinv(&["check", "--problem", scaled.to_str().unwrap()]);
    assert_eq!(code, 0, "criterion 9: scaled pair must exit 0");
    assert_eq!(json["status"], "inconclusive");

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "criterion 9: workflow took {elapsed:?}"
    );
    for path in [distinct, candidate, scaled] {
        std::fs::remove_file(path).ok();
    }
    println!(
        "criterion 9: PASS - distinguished (4), candidate accepted (0, residual {residual:.1e}), scaled inconclusive (0) in {elapsed:.2?}"
    );
}

fn problem_file(name: &str, contents: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("jetinv-{}-{name}", std::process::id()));
    std::fs::write(&path, contents).expect("temp problem file");
    path
}
