//! Random families and independent numeric oracles shared by the test
//! suites. Everything here exists to check the production code from a
//! second direction: finite differences instead of symbolic derivatives,
//! the Brioschi determinant formula instead of the closed cubic one.

use nalgebra::DMatrix;
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::equivalence::Automorphism;
use crate::expr::Expr;
use crate::invariants::{hessian, InvariantError, J1Point, Lagrangian};
use crate::Real;

/// A deterministic generator for one named test stream.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random exact-rational coefficient `p/q` with `|p/q| <= bound` and a
/// small denominator, never zero.
fn coefficient(rng: &mut impl Rng, bound: f64) -> Expr {
    let q = rng.gen_range(2..=9_i64);
    let top = (bound * q as f64).floor().max(1.0) as i64;
    let mut p = 0;
    while p == 0 {
        p = rng.gen_range(-top..=top);
    }
    Expr::rational(p, q)
}

/// A random polynomial over `vars` with total degree `<= degree`, rational
/// coefficients bounded by `bound`, and at least one term.
pub fn random_polynomial(vars: &[&str], degree: u32, bound: f64, rng: &mut impl Rng) -> Expr {
    let mut terms = Vec::new();
    let mut exponents = vec![0u32; vars.len()];
    loop {
        let total: u32 = exponents.iter().sum();
        if total <= degree && (total == 0 || rng.gen_bool(0.6)) {
            let mut factors = vec![coefficient(rng, bound)];
            for (v, &e) in vars.iter().zip(&exponents) {
                if e > 0 {
                    factors.push(Expr::pow_int(Expr::var(*v), i64::from(e)));
                }
            }
            terms.push(Expr::product(factors));
        }
        // Advance the exponent multi-index lexicographically.
        let mut slot = vars.len();
        loop {
            if slot == 0 {
                if terms.is_empty() {
                    terms.push(coefficient(rng, bound));
                }
                return Expr::sum(terms);
            }
            slot -= 1;
            exponents[slot] += 1;
            if exponents[slot] <= degree {
                break;
            }
            exponents[slot] = 0;
        }
    }
}

/// A degree-four polynomial Lagrangian in the velocities whose Hessian
/// stays near the identity on moderate velocities: a dominant positive
/// quadratic plus small cubic and quartic corrections.
pub fn random_quartic_lagrangian(m: usize, rng: &mut impl Rng) -> Lagrangian {
    let dys: Vec<String> = (1..=m).map(|a| format!("dy{a}")).collect();
    let mut terms = Vec::new();
    for a in 0..m {
        let w = rng.gen_range(0..=4_i64);
        terms.push(Expr::product(vec![
            Expr::rational(8 + w, 16),
            Expr::pow_int(Expr::var(&dys[a]), 2),
        ]));
    }
    for a in 0..m {
        for b in a + 1..m {
            let c = rng.gen_range(-3..=3_i64);
            if c != 0 {
                terms.push(Expr::product(vec![
                    Expr::rational(c, 20),
                    Expr::var(&dys[a]),
                    Expr::var(&dys[b]),
                ]));
            }
        }
    }
    // Small higher-order terms: every cubic and quartic monomial with a
    // coefficient in [-1/20, 1/20].
    let var_refs: Vec<&str> = dys.iter().map(String::as_str).collect();
    let mut exponents = vec![0u32; m];
    loop {
        let total: u32 = exponents.iter().sum();
        if (3..=4).contains(&total) && rng.gen_bool(0.5) {
            let mut factors = vec![Expr::div(coefficient(rng, 1.0), Expr::int(20))];
            for (v, &e) in var_refs.iter().zip(&exponents) {
                if e > 0 {
                    factors.push(Expr::pow_int(Expr::var(*v), i64::from(e)));
                }
            }
            terms.push(Expr::product(factors));
        }
        let mut slot = m;
        loop {
            if slot == 0 {
                let expr = Expr::sum(terms);
                return Lagrangian::new(m, expr).expect("velocity polynomial is valid");
            }
            slot -= 1;
            exponents[slot] += 1;
            if exponents[slot] <= 4 {
                break;
            }
            exponents[slot] = 0;
        }
    }
}

/// A random polynomial automorphism with `phi' = s (a + c x^2)` bounded
/// away from zero (orientation-reversing `s = -1` included when allowed)
/// and a fiber map affine in `y` with an `x`-varying matrix part plus a
/// small `y`-quadratic correction, so the fiber Jacobian stays invertible
/// on moderate points.
pub fn random_automorphism(
    m: usize,
    allow_reversing: bool,
    rng: &mut impl Rng,
) -> Automorphism {
    let sign = if allow_reversing && rng.gen_bool(0.5) {
        -1
    } else {
        1
    };
    let a = rng.gen_range(4..=16_i64);
    let c = rng.gen_range(0..=3_i64);
    let b = rng.gen_range(-10..=10_i64);
    let phi = Expr::sum(vec![
        Expr::product(vec![Expr::rational(sign * a, 10), Expr::var("x")]),
        Expr::product(vec![
            Expr::rational(sign * c, 30),
            Expr::pow_int(Expr::var("x"), 3),
        ]),
        Expr::rational(b, 10),
    ]);

    // Base matrix: a dominant diagonal with small off-diagonal couplings,
    // so det stays clear of zero before the small perturbations.
    let mut psi = Vec::with_capacity(m);
    for row in 0..m {
        let mut terms = Vec::new();
        let diag_sign = if rng.gen_bool(0.5) { 1 } else { -1 };
        let diag = rng.gen_range(8..=14_i64);
        for col in 0..m {
            let yb = Expr::var(format!("y{}", col + 1));
            if col == row {
                let slope = rng.gen_range(-2..=2_i64);
                let entry = Expr::sum(vec![
                    Expr::rational(diag_sign * diag, 10),
                    Expr::product(vec![Expr::rational(slope, 40), Expr::var("x")]),
                ]);
                terms.push(Expr::product(vec![entry, yb]));
            } else {
                let off = rng.gen_range(-2..=2_i64);
                if off != 0 {
                    terms.push(Expr::product(vec![Expr::rational(off, 20), yb]));
                }
            }
        }
        // Translation in x and a small quadratic term in y.
        terms.push(random_polynomial(&["x"], 2, 0.8, rng));
        let qa = rng.gen_range(0..m);
        let qb = rng.gen_range(0..m);
        terms.push(Expr::product(vec![
            Expr::rational(rng.gen_range(-1..=1_i64), 25),
            Expr::var(format!("y{}", qa + 1)),
            Expr::var(format!("y{}", qb + 1)),
        ]));
        psi.push(Expr::sum(terms));
    }
    Automorphism::new(m, phi, psi).expect("construction guards hold")
}

/// A uniform random point of the once-extended base with every coordinate
/// in `[-span, span]`.
pub fn random_j1_point<F: Real>(m: usize, span: f64, rng: &mut impl Rng) -> J1Point<F> {
    let mut draw = || F::of(rng.gen_range(-span..=span));
    let x = draw();
    let y = (0..m).map(|_| draw()).collect();
    let dy = (0..m).map(|_| draw()).collect();
    J1Point::new(x, y, dy)
}

/// Central-difference gradient of `f` at `at` with step `h` per
/// coordinate.
pub fn fd_gradient<F: Real>(mut f: impl FnMut(&[F]) -> F, at: &[F], h: F) -> Vec<F> {
    let mut grad = Vec::with_capacity(at.len());
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + h;
        let plus = f(&probe);
        probe[i] = at[i] - h;
        let minus = f(&probe);
        probe[i] = at[i];
        grad.push((plus - minus) / (F::of(2.0) * h));
    }
    grad
}

/// Gaussian curvature of the velocity Hessian metric of a planar
/// Lagrangian by the Brioschi determinant formula, with every metric
/// derivative taken by central finite differences of step `h`. Fully
/// independent of the closed-formula implementation.
pub fn brioschi_fd_k<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    p: &J1Point<F>,
    h: F,
) -> Result<F, InvariantError> {
    assert_eq!(lagrangian.m(), 2, "Brioschi oracle needs a planar fiber");
    let metric = |du: i32, dv: i32| -> Result<(F, F, F), InvariantError> {
        let q = J1Point::new(
            p.x,
            p.y.clone(),
            vec![
                p.dy[0] + F::of(f64::from(du)) * h,
                p.dy[1] + F::of(f64::from(dv)) * h,
            ],
        );
        let g = hessian(lagrangian, &q)?;
        Ok((g.matrix()[(0, 0)], g.matrix()[(0, 1)], g.matrix()[(1, 1)]))
    };

    let (e00, f00, g00) = metric(0, 0)?;
    let (ep0, fp0, gp0) = metric(1, 0)?;
    let (em0, fm0, gm0) = metric(-1, 0)?;
    let (e0p, f0p, g0p) = metric(0, 1)?;
    let (e0m, f0m, g0m) = metric(0, -1)?;
    let (_, fpp, _) = metric(1, 1)?;
    let (_, fpm, _) = metric(1, -1)?;
    let (_, fmp, _) = metric(-1, 1)?;
    let (_, fmm, _) = metric(-1, -1)?;

    let two_h = F::of(2.0) * h;
    let h2 = h * h;
    let e_u = (ep0 - em0) / two_h;
    let e_v = (e0p - e0m) / two_h;
    let f_u = (fp0 - fm0) / two_h;
    let f_v = (f0p - f0m) / two_h;
    let g_u = (gp0 - gm0) / two_h;
    let g_v = (g0p - g0m) / two_h;
    let e_vv = (e0p - F::of(2.0) * e00 + e0m) / h2;
    let g_uu = (gp0 - F::of(2.0) * g00 + gm0) / h2;
    let f_uv = (fpp - fpm - fmp + fmm) / (F::of(4.0) * h2);

    let half = F::of(0.5);
    let m1 = DMatrix::<F>::from_row_slice(
        3,
        3,
        &[
            -half * e_vv + f_uv - half * g_uu,
            half * e_u,
            f_u - half * e_v,
            f_v - half * g_u,
            e00,
            f00,
            half * g_v,
            f00,
            g00,
        ],
    );
    let m2 = DMatrix::<F>::from_row_slice(
        3,
        3,
        &[
            F::of(0.0),
            half * e_v,
            half * g_u,
            half * e_v,
            e00,
            f00,
            half * g_u,
            f00,
            g00,
        ],
    );
    let det_g = e00 * g00 - f00 * f00;
    if Float::abs(det_g) <= F::of(1e-12) {
        return Err(InvariantError::SingularHessian {
            det: det_g.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((m1.determinant() - m2.determinant()) / (det_g * det_g))
}
