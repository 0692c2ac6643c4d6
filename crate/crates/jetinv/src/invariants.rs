//! The Hessian metric of a Lagrangian and the scalar invariants it carries.
//!
//! A Lagrangian is a function of `(x, y^a, dy^a)`. Its fiberwise Hessian
//! `g_ab = d2L/ddy^a ddy^b` is a metric on the velocity fiber wherever it is
//! non-singular; the open region where that holds is called `O²` below, and
//! `O'²` is the part of it where `L` itself does not vanish. On `O²` the
//! inverse metric contracts the velocity gradient into the scalar
//! `V = g^ab L_a L_b`, and on `O'²` the quotient `I = V / L` is a scalar
//! that equivalence transformations cannot change. For two-dimensional
//! fibers the metric also carries its Gaussian curvature `K`.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::Serialize;

use crate::expr::{Binding, EvalError, Expr, Symbol};
use crate::jet::JetPoint;
use crate::prolong::CurveJetView;
use crate::Real;

/// Relative determinant floor below which the Hessian counts as singular.
const SINGULAR_DET: f64 = 1e-10;
/// Relative eigenvalue floor below which the signature is undecidable.
const SIGNATURE_TOL: f64 = 1e-9;
/// Absolute floor for |L| in the quotient I = V / L.
const VANISHING_L: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum InvariantError {
    #[error("a Lagrangian may depend only on (x, y^a, dy^a); found `{0}`")]
    ForeignVariable(Symbol),
    #[error("the Gaussian curvature needs a two-dimensional fiber, got m = {0}")]
    NotPlanar(usize),
    #[error(
        "singular Hessian metric (det = {det:.3e}): the point lies outside O², \
         so the sharp operator cannot invert the metric"
    )]
    SingularHessian { det: f64 },
    #[error(
        "the Lagrangian vanishes at the point (L = {value:.3e}): the point lies \
         outside O'², so I = V/L is undefined"
    )]
    VanishingLagrangian { value: f64 },
    #[error("degenerate Hessian spectrum: the signature is not decidable here")]
    DegenerateSignature,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A point of the once-extended base: position `x`, fiber point `y`, and
/// velocity `dy`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct J1Point<F> {
    pub x: F,
    pub y: Vec<F>,
    pub dy: Vec<F>,
}

impl<F: Real> J1Point<F> {
    pub fn new(x: F, y: Vec<F>, dy: Vec<F>) -> Self {
        assert_eq!(y.len(), dy.len(), "y and dy must have equal length");
        J1Point { x, y, dy }
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    /// Values for `(x, y1.., dy1..)` under the canonical coordinate names.
    pub fn binding(&self) -> Binding<F> {
        let mut b = Binding::new();
        b.set("x", self.x);
        for (i, &v) in self.y.iter().enumerate() {
            b.set(format!("y{}", i + 1), v);
        }
        for (i, &v) in self.dy.iter().enumerate() {
            b.set(format!("dy{}", i + 1), v);
        }
        b
    }
}

/// A first-order Lagrangian `L(x, y^a, dy^a)` with its velocity gradient
/// and Hessian differentiated once at construction.
#[derive(Clone, Debug)]
pub struct Lagrangian {
    m: usize,
    expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Vec<Expr>>,
    third: Option<[Expr; 4]>,
}

impl Lagrangian {
    /// Validates that the expression uses only the coordinates of the
    /// once-extended base, then differentiates the velocity gradient,
    /// Hessian, and (for m = 2) the third velocity partials.
    pub fn new(m: usize, expr: Expr) -> Result<Self, InvariantError> {
        assert!(m >= 1, "fiber dimension must be at least 1");
        let mut allowed: Vec<Symbol> = vec![Symbol::new("x")];
        for a in 1..=m {
            allowed.push(Symbol::new(format!("y{a}")));
            allowed.push(Symbol::new(format!("dy{a}")));
        }
        for v in expr.free_vars() {
            if !allowed.contains(&v) {
                return Err(InvariantError::ForeignVariable(v));
            }
        }
        let dy: Vec<Symbol> = (1..=m).map(|a| Symbol::new(format!("dy{a}"))).collect();
        let grad: Vec<Expr> = dy.iter().map(|s| expr.diff(s).simplify()).collect();
        let mut hess = vec![vec![Expr::int(0); m]; m];
        for a in 0..m {
            for b in a..m {
                let entry = grad[a].diff(&dy[b]).simplify();
                hess[a][b] = entry.clone();
                hess[b][a] = entry;
            }
        }
        // Third partials packed as (111, 112, 122, 222); only the planar
        // case feeds the curvature formula.
        let third = (m == 2).then(|| {
            [
                hess[0][0].diff(&dy[0]).simplify(),
                hess[0][0].diff(&dy[1]).simplify(),
                hess[0][1].diff(&dy[1]).simplify(),
                hess[1][1].diff(&dy[1]).simplify(),
            ]
        });
        Ok(Lagrangian {
            m,
            expr,
            grad,
            hess,
            third,
        })
    }

    /// Parse `src` and build the Lagrangian.
    pub fn parse(m: usize, src: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let expr = crate::expr::parse(src)?;
        Ok(Self::new(m, expr)?)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// `dL/ddy^a` as expressions, `a = 0..m`.
    pub fn velocity_gradient(&self) -> &[Expr] {
        &self.grad
    }

    /// `d2L/ddy^a ddy^b` as expressions; exactly symmetric by construction.
    pub fn velocity_hessian(&self) -> &[Vec<Expr>] {
        &self.hess
    }

    pub fn value<F: Real>(&self, p: &J1Point<F>) -> Result<F, InvariantError> {
        assert_eq!(p.m(), self.m, "point dimension must match the Lagrangian");
        Ok(self.expr.eval(&p.binding())?)
    }
}

/// The velocity Hessian of a Lagrangian evaluated at a point, with its
/// determinant and, where decidable, its signature.
#[derive(Clone, Debug)]
pub struct HessianAtPoint<F> {
    g: DMatrix<F>,
    det: F,
    signature: Option<(usize, usize)>,
}

impl<F: Real + nalgebra::RealField> HessianAtPoint<F> {
    /// Wrap a symmetric numeric matrix. The lower triangle is mirrored from
    /// the upper one so the stored matrix is exactly symmetric.
    pub fn from_matrix(mut g: DMatrix<F>) -> Self {
        assert_eq!(g.nrows(), g.ncols(), "Hessian must be square");
        for a in 0..g.nrows() {
            for b in a + 1..g.ncols() {
                g[(b, a)] = g[(a, b)];
            }
        }
        let det = g.clone().lu().determinant();
        let signature = decide_signature(&g);
        HessianAtPoint { g, det, signature }
    }

    pub fn matrix(&self) -> &DMatrix<F> {
        &self.g
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn det(&self) -> F {
        self.det
    }

    /// `(m⁺, m⁻)` eigenvalue counts, `None` when some eigenvalue is too
    /// close to zero relative to the largest.
    pub fn signature(&self) -> Option<(usize, usize)> {
        self.signature
    }

    /// Whether the metric is invertible under the relative determinant
    /// floor: `|det g| > 1e-10 · ||g||_F^m`.
    pub fn is_nonsingular(&self) -> bool {
        let scale = Float::powi(self.g.norm(), self.m() as i32);
        Float::abs(self.det) > F::of(SINGULAR_DET) * scale && !scale.is_zero()
    }

    fn require_nonsingular(&self) -> Result<(), InvariantError> {
        if self.is_nonsingular() {
            Ok(())
        } else {
            Err(InvariantError::SingularHessian {
                det: self.det.to_f64().unwrap_or(f64::NAN),
            })
        }
    }

    /// The sharp operator: solve `g w = covector`, raising the index with
    /// the inverse metric without forming it.
    pub fn sharp(&self, covector: &DVector<F>) -> Result<DVector<F>, InvariantError> {
        self.require_nonsingular()?;
        self.g
            .clone()
            .lu()
            .solve(covector)
            .ok_or(InvariantError::SingularHessian {
                det: self.det.to_f64().unwrap_or(f64::NAN),
            })
    }
}

fn decide_signature<F: Real + nalgebra::RealField>(g: &DMatrix<F>) -> Option<(usize, usize)> {
    let eigen = g.clone().symmetric_eigen();
    let max = eigen
        .eigenvalues
        .iter()
        .map(|l| Float::abs(*l))
        .fold(F::of(0.0), Float::max);
    let min = eigen
        .eigenvalues
        .iter()
        .map(|l| Float::abs(*l))
        .fold(Float::infinity(), Float::min);
    if min <= F::of(SIGNATURE_TOL) * max || max.is_zero() {
        return None;
    }
    let pos = eigen.eigenvalues.iter().filter(|l| **l > F::of(0.0)).count();
    Some((pos, g.nrows() - pos))
}

/// Eigenvalue signature `(m⁺, m⁻)` of a Hessian; errors when an eigenvalue
/// sits too close to zero for the counts to be trustworthy.
pub fn signature<F: Real + nalgebra::RealField>(
    h: &HessianAtPoint<F>,
) -> Result<(usize, usize), InvariantError> {
    h.signature().ok_or(InvariantError::DegenerateSignature)
}

/// Evaluate the velocity Hessian of `lagrangian` at `p`. Degenerate metrics
/// are representable; only downstream inversions reject them.
pub fn hessian<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    p: &J1Point<F>,
) -> Result<HessianAtPoint<F>, InvariantError> {
    assert_eq!(p.m(), lagrangian.m(), "point dimension must match");
    let m = lagrangian.m();
    let binding = p.binding();
    let mut g = DMatrix::<F>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = lagrangian.hess[a][b].eval(&binding)?;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    Ok(HessianAtPoint::from_matrix(g))
}

fn velocity_gradient_at<F: Real>(
    lagrangian: &Lagrangian,
    binding: &Binding<F>,
) -> Result<DVector<F>, InvariantError> {
    let vals = lagrangian
        .grad
        .iter()
        .map(|e| e.eval(binding))
        .collect::<Result<Vec<F>, _>>()?;
    Ok(DVector::from_vec(vals))
}

/// `V = g^ab L_a L_b` at `p`: the squared metric length of the velocity
/// gradient. Defined on `O²` only.
pub fn invariant_v<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    p: &J1Point<F>,
) -> Result<F, InvariantError> {
    let h = hessian(lagrangian, p)?;
    let grad = velocity_gradient_at(lagrangian, &p.binding())?;
    let sharp = h.sharp(&grad)?;
    Ok(grad.dot(&sharp))
}

/// `I = V / L` at `p`. Defined on `O'²`, where additionally `L` does not
/// vanish.
pub fn invariant_i<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    p: &J1Point<F>,
) -> Result<F, InvariantError> {
    let v = invariant_v(lagrangian, p)?;
    let l = lagrangian.value(p)?;
    if Float::abs(l) <= F::of(VANISHING_L) {
        return Err(InvariantError::VanishingLagrangian {
            value: l.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(v / l)
}

/// Gaussian curvature of the Hessian metric for a two-dimensional fiber,
/// from the closed cubic-in-third-derivatives formula
/// `4 (det g)² K = -L22 (L111 L122 - L112²) + L12 (L111 L222 - L112 L122)
///  - L11 (L112 L222 - L122²)`.
pub fn gaussian_k<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    p: &J1Point<F>,
) -> Result<F, InvariantError> {
    let third = lagrangian
        .third
        .as_ref()
        .ok_or(InvariantError::NotPlanar(lagrangian.m()))?;
    let h = hessian(lagrangian, p)?;
    h.require_nonsingular()?;
    let binding = p.binding();
    let l11 = h.matrix()[(0, 0)];
    let l12 = h.matrix()[(0, 1)];
    let l22 = h.matrix()[(1, 1)];
    let [t111, t112, t122, t222] = third;
    let l111 = t111.eval(&binding)?;
    let l112 = t112.eval(&binding)?;
    let l122 = t122.eval(&binding)?;
    let l222 = t222.eval(&binding)?;
    let numerator = -l22 * (l111 * l122 - l112 * l112) + l12 * (l111 * l222 - l112 * l122)
        - l11 * (l112 * l222 - l122 * l122);
    let det = h.det();
    Ok(numerator / (F::of(4.0) * det * det))
}

/// The invariants of a Lagrangian at one point: `V`, `I`, and for planar
/// fibers the curvature `K`.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantValue<F> {
    pub point: J1Point<F>,
    pub v: F,
    pub i: F,
    pub k: Option<F>,
}

/// Evaluate `V`, `I`, and (m = 2) `K` together at `p`.
pub fn invariant_value<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    p: &J1Point<F>,
) -> Result<InvariantValue<F>, InvariantError> {
    let v = invariant_v(lagrangian, p)?;
    let i = invariant_i(lagrangian, p)?;
    let k = if lagrangian.m() == 2 {
        Some(gaussian_k(lagrangian, p)?)
    } else {
        None
    };
    Ok(InvariantValue {
        point: p.clone(),
        v,
        i,
        k,
    })
}

/// `I` read off a second-order jet point directly: the fiber values
/// `z, z_{dy}, z_{dydy}` stand in for `L` and its velocity derivatives, so
/// this is the function on the second-order jet space whose level sets the
/// prolonged lifts preserve.
pub fn invariant_i_at_jet<F: Real + nalgebra::RealField>(
    point: &JetPoint<F>,
) -> Result<F, InvariantError> {
    let view = CurveJetView::new(point);
    let m = view.m();
    let g = DMatrix::from_fn(m, m, |a, b| view.zdydy(a, b));
    let h = HessianAtPoint::from_matrix(g);
    let grad = DVector::from_fn(m, |a, _| view.zdy(a));
    let sharp = h.sharp(&grad)?;
    let v = grad.dot(&sharp);
    let z = view.z();
    if Float::abs(z) <= F::of(VANISHING_L) {
        return Err(InvariantError::VanishingLagrangian {
            value: z.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(v / z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Scalar;

    fn quadratic(m: usize) -> Lagrangian {
        let terms = (1..=m)
            .map(|a| Expr::div(Expr::pow_int(Expr::var(format!("dy{a}")), 2), Expr::int(2)))
            .collect();
        Lagrangian::new(m, Expr::sum(terms)).unwrap()
    }

    fn point(m: usize, dy: &[f64]) -> J1Point<Scalar> {
        J1Point::new(0.3, vec![0.1; m], dy.to_vec())
    }

    #[test]
    fn foreign_variables_are_rejected() {
        assert!(matches!(
            Lagrangian::new(1, Expr::var("z")),
            Err(InvariantError::ForeignVariable(_))
        ));
        assert!(matches!(
            Lagrangian::new(1, Expr::var("dy2")),
            Err(InvariantError::ForeignVariable(_))
        ));
        assert!(Lagrangian::new(2, Expr::var("dy2")).is_ok());
    }

    #[test]
    fn quadratic_lagrangian_has_identity_hessian() {
        let lag = quadratic(3);
        let h = hessian(&lag, &point(3, &[1.0, -2.0, 0.5])).unwrap();
        assert_eq!(h.matrix(), &DMatrix::<Scalar>::identity(3, 3));
        assert_eq!(h.signature(), Some((3, 0)));
        assert_eq!(h.det(), 1.0);
    }

    #[test]
    fn crossed_quadratic_has_split_signature() {
        // L = dy1 dy2 has the off-diagonal Hessian [[0,1],[1,0]].
        let lag = Lagrangian::new(
            2,
            Expr::product(vec![Expr::var("dy1"), Expr::var("dy2")]),
        )
        .unwrap();
        let h = hessian(&lag, &point(2, &[1.0, 2.0])).unwrap();
        assert_eq!(h.matrix()[(0, 1)], 1.0);
        assert_eq!(h.matrix()[(1, 0)], 1.0);
        assert_eq!(h.matrix()[(0, 0)], 0.0);
        assert_eq!(signature(&h).unwrap(), (1, 1));
    }

    #[test]
    fn exponential_lagrangian_hessian_at_zero_velocity() {
        let lag = Lagrangian::new(1, Expr::exp(Expr::var("dy1"))).unwrap();
        let h = hessian(&lag, &point(1, &[0.0])).unwrap();
        assert_eq!(h.matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn quadratic_invariants() {
        // V = sum dy^2 and I = 2 wherever L != 0.
        for m in 1..=3 {
            let lag = quadratic(m);
            let dy: Vec<f64> = (0..m).map(|a| 0.7 + 0.3 * a as f64).collect();
            let p = point(m, &dy);
            let expect: f64 = dy.iter().map(|v| v * v).sum();
            assert!((invariant_v(&lag, &p).unwrap() - expect).abs() < 1e-12);
            assert!((invariant_i(&lag, &p).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_velocity_gradient_gives_zero_v() {
        let lag = quadratic(2);
        let p = point(2, &[0.0, 0.0]);
        assert_eq!(invariant_v(&lag, &p).unwrap(), 0.0);
        // L also vanishes there, so I is a domain error naming O'2.
        let err = invariant_i(&lag, &p).unwrap_err();
        assert!(err.to_string().contains("O'²"), "{err}");
    }

    #[test]
    fn exponential_invariants() {
        let lag = Lagrangian::new(1, Expr::exp(Expr::var("dy1"))).unwrap();
        for dy in [-1.2, 0.0, 0.4, 2.0] {
            let p = point(1, &[dy]);
            assert!((invariant_v(&lag, &p).unwrap() - dy.exp()).abs() < 1e-12 * dy.exp());
            assert!((invariant_i(&lag, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaled_quadratic_keeps_i() {
        // dy^2/16 is the transform of dy^2/2 under doubling of x; I stays 2.
        let lag = Lagrangian::parse(1, "dy1^2 / 16").unwrap();
        let p = point(1, &[1.3]);
        assert!((invariant_i(&lag, &p).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_weight_of_v_and_invariance_of_i() {
        let lag = Lagrangian::parse(2, "dy1^2/2 + dy2^2/2 + dy1*dy2/4").unwrap();
        let scaled = Lagrangian::new(
            2,
            Expr::product(vec![Expr::rational(7, 3), lag.expr().clone()]),
        )
        .unwrap();
        let p = point(2, &[0.9, -0.4]);
        let v = invariant_v(&lag, &p).unwrap();
        let vs = invariant_v(&scaled, &p).unwrap();
        assert!((vs - 7.0 / 3.0 * v).abs() < 1e-12, "{vs} vs {v}");
        let i = invariant_i(&lag, &p).unwrap();
        let is = invariant_i(&scaled, &p).unwrap();
        assert!((is - i).abs() < 1e-12);
    }

    #[test]
    fn singular_hessian_errors_name_the_domain() {
        // L linear in dy: Hessian identically zero.
        let lag = Lagrangian::parse(1, "dy1 + y1").unwrap();
        let err = invariant_v(&lag, &point(1, &[1.0])).unwrap_err();
        assert!(err.to_string().contains("O²"), "{err}");
    }

    #[test]
    fn curvature_of_flat_metrics_vanishes() {
        let quad = Lagrangian::parse(2, "dy1^2/2 + dy2^2/2 + dy1*dy2/4").unwrap();
        let separable = Lagrangian::parse(2, "exp(dy1) + exp(dy2)").unwrap();
        for lag in [&quad, &separable] {
            for dy in [[0.4, -0.3], [1.1, 0.8], [-0.9, 1.6]] {
                let k = gaussian_k(lag, &point(2, &dy)).unwrap();
                assert!(k.abs() < 1e-10, "K = {k}");
            }
        }
    }

    #[test]
    fn curvature_requires_a_planar_fiber() {
        let lag = quadratic(3);
        assert!(matches!(
            gaussian_k(&lag, &point(3, &[0.1, 0.2, 0.3])),
            Err(InvariantError::NotPlanar(3))
        ));
    }

    #[test]
    fn signature_is_congruence_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = 3;
            let g0 = DMatrix::<Scalar>::from_fn(m, m, |_, _| rng.gen_range(-1.0..=1.0));
            let g = HessianAtPoint::from_matrix(&g0 + g0.transpose());
            let Some(sig) = g.signature() else { continue };
            let s = DMatrix::<Scalar>::from_fn(m, m, |_, _| rng.gen_range(-1.0..=1.0));
            if s.clone().lu().determinant().abs() < 1e-3 {
                continue;
            }
            let congruent = HessianAtPoint::from_matrix(s.transpose() * g.matrix() * &s);
            assert_eq!(congruent.signature(), Some(sig));
        }
    }

    #[test]
    fn jet_reading_of_i_matches_the_lagrangian_reading() {
        // Fill a second-order jet point with the actual derivatives of a
        // Lagrangian and compare both routes to I.
        let lag = Lagrangian::parse(2, "dy1^2/2 + dy2^2/2 + dy1*dy2/4 + y1*dy1").unwrap();
        let p = point(2, &[0.8, -0.6]);
        let system = crate::jet::JetCoordinateSystem::for_curves(2, 2);
        let binding = p.binding();
        let mut values = vec![p.x, p.y[0], p.y[1], p.dy[0], p.dy[1]];
        for (idx, _) in system.fiber() {
            let mut e = lag.expr().clone();
            let names = ["x", "y1", "y2", "dy1", "dy2"];
            for (slot, &name) in names.iter().enumerate() {
                for _ in 0..idx.slots()[slot] {
                    e = e.diff(&Symbol::new(name));
                }
            }
            values.push(e.eval(&binding).unwrap());
        }
        let jet = JetPoint::new(system, values).unwrap();
        let from_jet = invariant_i_at_jet(&jet).unwrap();
        let direct = invariant_i(&lag, &p).unwrap();
        assert!((from_jet - direct).abs() < 1e-11, "{from_jet} vs {direct}");
    }
}
