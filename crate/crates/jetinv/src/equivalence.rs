//! Bundle automorphisms acting on Lagrangians, and the invariant-based
//! comparison workflow.
//!
//! An automorphism of the trivial bundle is a pair `(phi, Psi)`: a base
//! reparametrization `x -> phi(x)` and a fiber map `y -> Psi(x, y)`. It
//! prolongs to first jets by the chain rule and acts on Lagrangians by
//! `L -> (phi')^{-1} (L o Phi^(1))`. The scalar `I` is unchanged by this
//! action, so disjoint sampled ranges of `I` certify that no automorphism
//! maps one Lagrangian to the other; overlapping ranges prove nothing.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_traits::Float;
use serde::Serialize;

use crate::expr::{EvalError, Expr, Symbol};
use crate::invariants::{
    gaussian_k, invariant_i, InvariantError, J1Point, Lagrangian,
};
use crate::Real;

/// Magnitude floor for `phi'` and `det dPsi/dy` at sampled points.
const GUARD_MARGIN: f64 = 1e-6;
/// Default residual tolerance for candidate verification.
pub const CANDIDATE_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum EquivalenceError {
    #[error("phi must be an expression in x alone; found `{0}`")]
    PhiVariables(Symbol),
    #[error("psi^{index} may depend only on (x, y^a); found `{found}`")]
    PsiVariables { index: usize, found: Symbol },
    #[error("expected {expected} fiber components, got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("phi' vanishes identically, so the base map is not invertible")]
    ConstantPhi,
    #[error("|phi'({x})| = {value:.3e} is below the margin {margin:.1e}")]
    PhiPrimeGuard { x: f64, value: f64, margin: f64 },
    #[error("|det dPsi/dy| = {value:.3e} is below the margin {margin:.1e} at the point")]
    FiberJacobianGuard { value: f64, margin: f64 },
    #[error("no usable grid point: {reason}")]
    EmptyGrid { reason: String },
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A bundle automorphism `(x, y) -> (phi(x), Psi(x, y))` with its first
/// derivatives differentiated once at construction.
#[derive(Clone, Debug)]
pub struct Automorphism {
    m: usize,
    phi: Expr,
    psi: Vec<Expr>,
    phi_prime: Expr,
    psi_x: Vec<Expr>,
    psi_y: Vec<Vec<Expr>>,
}

impl Automorphism {
    pub fn new(m: usize, phi: Expr, psi: Vec<Expr>) -> Result<Self, EquivalenceError> {
        assert!(m >= 1, "fiber dimension must be at least 1");
        if psi.len() != m {
            return Err(EquivalenceError::ComponentCount {
                expected: m,
                got: psi.len(),
            });
        }
        let x = Symbol::new("x");
        for v in phi.free_vars() {
            if v != x {
                return Err(EquivalenceError::PhiVariables(v));
            }
        }
        let ys: Vec<Symbol> = (1..=m).map(|a| Symbol::new(format!("y{a}"))).collect();
        for (index, component) in psi.iter().enumerate() {
            for v in component.free_vars() {
                if v != x && !ys.contains(&v) {
                    return Err(EquivalenceError::PsiVariables {
                        index: index + 1,
                        found: v,
                    });
                }
            }
        }
        let phi_prime = phi.diff(&x).simplify();
        if phi_prime.is_zero() {
            return Err(EquivalenceError::ConstantPhi);
        }
        let psi_x: Vec<Expr> = psi.iter().map(|c| c.diff(&x).simplify()).collect();
        let psi_y: Vec<Vec<Expr>> = psi
            .iter()
            .map(|c| ys.iter().map(|yb| c.diff(yb).simplify()).collect())
            .collect();
        Ok(Automorphism {
            m,
            phi,
            psi,
            phi_prime,
            psi_x,
            psi_y,
        })
    }

    /// Parse `phi` and the `psi` components from DSL strings.
    pub fn parse(
        m: usize,
        phi: &str,
        psi: &[&str],
    ) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let phi = crate::expr::parse(phi)?;
        let psi = psi
            .iter()
            .map(|s| crate::expr::parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(m, phi, psi)?)
    }

    pub fn identity(m: usize) -> Self {
        let psi = (1..=m).map(|a| Expr::var(format!("y{a}"))).collect();
        Self::new(m, Expr::var("x"), psi).expect("identity is a valid automorphism")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn phi(&self) -> &Expr {
        &self.phi
    }

    pub fn psi(&self) -> &[Expr] {
        &self.psi
    }

    /// Composition as maps: `(self o inner)(q) = self(inner(q))`.
    pub fn compose(&self, inner: &Automorphism) -> Result<Self, EquivalenceError> {
        assert_eq!(self.m, inner.m, "fiber dimensions must match");
        let mut map: HashMap<Symbol, Expr> = HashMap::new();
        map.insert(Symbol::new("x"), inner.phi.clone());
        for (b, component) in inner.psi.iter().enumerate() {
            map.insert(Symbol::new(format!("y{}", b + 1)), component.clone());
        }
        let phi = self.phi.subst(&map).simplify();
        let psi = self
            .psi
            .iter()
            .map(|c| c.subst(&map).simplify())
            .collect();
        Self::new(self.m, phi, psi)
    }

    /// Whether the base map is the identity, probed numerically.
    pub fn is_vertical(&self) -> bool {
        let x = Symbol::new("x");
        (-3..=3).all(|k| {
            let t = f64::from(k) * 0.61 + 0.13;
            let mut b = crate::expr::Binding::new();
            b.set_symbol(x.clone(), t);
            matches!(self.phi.eval(&b), Ok(v) if (v - t).abs() <= 1e-12)
        })
    }

    pub fn phi_prime_at<F: Real>(&self, x: F) -> Result<F, EquivalenceError> {
        let mut b = crate::expr::Binding::new();
        b.set("x", x);
        Ok(self.phi_prime.eval(&b)?)
    }

    /// `dPsi^a/dy^b` evaluated at the base point of `p`.
    pub fn fiber_jacobian<F: Real + nalgebra::RealField>(
        &self,
        p: &J1Point<F>,
    ) -> Result<DMatrix<F>, EquivalenceError> {
        let binding = p.binding();
        let mut j = DMatrix::<F>::zeros(self.m, self.m);
        for a in 0..self.m {
            for b in 0..self.m {
                j[(a, b)] = self.psi_y[a][b].eval(&binding)?;
            }
        }
        Ok(j)
    }

    /// Check `|phi'|` and `|det dPsi/dy|` against the margin at `p`.
    pub fn guards_at<F: Real + nalgebra::RealField>(
        &self,
        p: &J1Point<F>,
    ) -> Result<(), EquivalenceError> {
        let margin = F::of(GUARD_MARGIN);
        let dphi = self.phi_prime_at(p.x)?;
        if Float::abs(dphi) <= margin {
            return Err(EquivalenceError::PhiPrimeGuard {
                x: p.x.to_f64().unwrap_or(f64::NAN),
                value: Float::abs(dphi).to_f64().unwrap_or(f64::NAN),
                margin: GUARD_MARGIN,
            });
        }
        let det = self.fiber_jacobian(p)?.lu().determinant();
        if Float::abs(det) <= margin {
            return Err(EquivalenceError::FiberJacobianGuard {
                value: Float::abs(det).to_f64().unwrap_or(f64::NAN),
                margin: GUARD_MARGIN,
            });
        }
        Ok(())
    }

    /// The first-jet action: `(x, y, dy) -> (phi(x), Psi(x, y), dybar)`
    /// with `dybar^a = (Psi^a_x + Psi^a_{y^b} dy^b) / phi'(x)`.
    pub fn prolong_point<F: Real + nalgebra::RealField>(
        &self,
        p: &J1Point<F>,
    ) -> Result<J1Point<F>, EquivalenceError> {
        assert_eq!(p.m(), self.m, "point dimension must match");
        self.guards_at(p)?;
        let binding = p.binding();
        let xbar = self.phi.eval(&binding)?;
        let ybar = self
            .psi
            .iter()
            .map(|c| c.eval(&binding))
            .collect::<Result<Vec<F>, _>>()?;
        let dphi = self.phi_prime_at(p.x)?;
        let mut dybar = Vec::with_capacity(self.m);
        for a in 0..self.m {
            let mut total = self.psi_x[a].eval(&binding)?;
            for b in 0..self.m {
                total = total + self.psi_y[a][b].eval(&binding)? * p.dy[b];
            }
            dybar.push(total / dphi);
        }
        Ok(J1Point::new(xbar, ybar, dybar))
    }

    fn jet_substitution(&self) -> HashMap<Symbol, Expr> {
        let mut map: HashMap<Symbol, Expr> = HashMap::new();
        map.insert(Symbol::new("x"), self.phi.clone());
        for a in 0..self.m {
            map.insert(Symbol::new(format!("y{}", a + 1)), self.psi[a].clone());
            let mut terms = vec![self.psi_x[a].clone()];
            for b in 0..self.m {
                terms.push(Expr::product(vec![
                    self.psi_y[a][b].clone(),
                    Expr::var(format!("dy{}", b + 1)),
                ]));
            }
            map.insert(
                Symbol::new(format!("dy{}", a + 1)),
                Expr::div(Expr::sum(terms), self.phi_prime.clone()),
            );
        }
        map
    }

    /// The bare composition `L o Phi^(1)` as a Lagrangian, without the
    /// `(phi')^{-1}` density factor.
    pub fn compose_lagrangian(
        &self,
        lagrangian: &Lagrangian,
    ) -> Result<Lagrangian, EquivalenceError> {
        assert_eq!(lagrangian.m(), self.m, "fiber dimensions must match");
        let expr = lagrangian.expr().subst(&self.jet_substitution()).simplify();
        Ok(Lagrangian::new(self.m, expr)?)
    }

    /// The induced action on Lagrangians:
    /// `Lbar = (phi')^{-1} (L o Phi^(1))`, built by symbolic substitution
    /// of the prolonged coordinate expressions.
    pub fn transform_lagrangian(
        &self,
        lagrangian: &Lagrangian,
    ) -> Result<Lagrangian, EquivalenceError> {
        assert_eq!(lagrangian.m(), self.m, "fiber dimensions must match");
        let composed = lagrangian.expr().subst(&self.jet_substitution());
        let expr = Expr::div(composed, self.phi_prime.clone()).simplify();
        Ok(Lagrangian::new(self.m, expr)?)
    }

    /// The velocity Jacobian `d(dybar)/d(dy) = (dPsi/dy) / phi'` at the
    /// base point of `p`: the matrix that conjugates Hessians under the
    /// jet action, `J^T g(Phi^(1) p) J = Hess(L o Phi^(1))(p)`.
    pub fn velocity_jacobian<F: Real + nalgebra::RealField>(
        &self,
        p: &J1Point<F>,
    ) -> Result<DMatrix<F>, EquivalenceError> {
        let dphi = self.phi_prime_at(p.x)?;
        Ok(self.fiber_jacobian(p)? / dphi)
    }
}

/// Residuals of the pullback identity
/// `Lbar(p) = phi'(x(p))^{-1} L(Phi^(1)(p))` over a set of points.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport<F> {
    pub max_relative_residual: F,
    pub worst_point: Option<J1Point<F>>,
    pub checked: usize,
    pub skipped: usize,
    pub tolerance: F,
    pub pass: bool,
}

/// Verify a candidate automorphism against a Lagrangian pair pointwise.
/// Points violating the automorphism guards are skipped and counted; the
/// check passes only if at least one point was actually compared.
pub fn check_candidate<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    candidate_transform: &Lagrangian,
    phi: &Automorphism,
    points: &[J1Point<F>],
    tolerance: F,
) -> Result<ResidualReport<F>, EquivalenceError> {
    let mut max_rel = F::of(0.0);
    let mut worst = None;
    let mut checked = 0;
    let mut skipped = 0;
    for p in points {
        if phi.guards_at(p).is_err() {
            skipped += 1;
            continue;
        }
        let image = phi.prolong_point(p)?;
        let reference = lagrangian.value(&image)? / phi.phi_prime_at(p.x)?;
        let actual = candidate_transform.value(p)?;
        let rel = Float::abs(actual - reference) / (F::of(1.0) + Float::abs(reference));
        if rel > max_rel || worst.is_none() {
            max_rel = rel;
            worst = Some(p.clone());
        }
        checked += 1;
    }
    Ok(ResidualReport {
        max_relative_residual: max_rel,
        worst_point: worst,
        checked,
        skipped,
        tolerance,
        pass: checked > 0 && max_rel <= tolerance,
    })
}

/// A finite evaluation grid over the `(x, y^a, dy^a)` coordinates: the
/// cartesian product of per-axis value lists.
#[derive(Clone, Debug)]
pub struct GridSpec<F> {
    m: usize,
    axes: Vec<(Symbol, Vec<F>)>,
}

impl<F: Real> GridSpec<F> {
    /// Default grid: `x = 0`, every `y^a = 0`, every `dy^a` five equispaced
    /// values in `[-2, 2]`.
    pub fn new(m: usize) -> Self {
        let mut axes = vec![(Symbol::new("x"), vec![F::of(0.0)])];
        for a in 1..=m {
            axes.push((Symbol::new(format!("y{a}")), vec![F::of(0.0)]));
        }
        for a in 1..=m {
            let values = (0..5).map(|k| F::of(-2.0 + f64::from(k))).collect();
            axes.push((Symbol::new(format!("dy{a}")), values));
        }
        GridSpec { m, axes }
    }

    /// Replace the values of one named axis.
    pub fn set_axis(
        &mut self,
        name: &str,
        values: Vec<F>,
    ) -> Result<&mut Self, EquivalenceError> {
        assert!(!values.is_empty(), "axis values must be non-empty");
        let sym = Symbol::new(name);
        let axis = self.axes.iter_mut().find(|(s, _)| *s == sym).ok_or_else(|| {
            EquivalenceError::EmptyGrid {
                reason: format!("unknown grid axis `{name}`"),
            }
        })?;
        axis.1 = values;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points in row-major order over the axes.
    pub fn points(&self) -> Vec<J1Point<F>> {
        let mut out = Vec::with_capacity(self.len());
        let mut index = vec![0usize; self.axes.len()];
        loop {
            let coord: Vec<F> = self
                .axes
                .iter()
                .zip(&index)
                .map(|((_, vals), &i)| vals[i])
                .collect();
            out.push(J1Point::new(
                coord[0],
                coord[1..=self.m].to_vec(),
                coord[self.m + 1..].to_vec(),
            ));
            let mut slot = self.axes.len();
            loop {
                if slot == 0 {
                    return out;
                }
                slot -= 1;
                index[slot] += 1;
                if index[slot] < self.axes[slot].1.len() {
                    break;
                }
                index[slot] = 0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictStatus {
    EquivalentUnderGivenMap,
    Distinguished,
    Inconclusive,
}

/// The sampled range of one invariant over the guarded part of a grid.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantRange<F> {
    pub low: F,
    pub high: F,
    pub low_point: J1Point<F>,
    pub high_point: J1Point<F>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Ranges of one invariant for the two Lagrangians under comparison.
#[derive(Clone, Debug, Serialize)]
pub struct RangePair<F> {
    pub invariant: String,
    pub first: InvariantRange<F>,
    pub second: InvariantRange<F>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceVerdict<F> {
    pub status: VerdictStatus,
    /// Which invariant separated the ranges, when distinguished.
    pub separating_invariant: Option<String>,
    /// The certified range separation, when distinguished.
    pub gap: Option<F>,
    /// Residual report when a candidate automorphism was checked.
    pub candidate: Option<ResidualReport<F>>,
    pub ranges: Vec<RangePair<F>>,
    pub tol_abs: F,
    pub tol_rel: F,
}

#[derive(Clone, Copy, Debug)]
pub struct DistinguishOptions<F> {
    /// Compare K as well (m = 2 only): sound only when the comparison is
    /// restricted to vertical automorphisms.
    pub vertical: bool,
    pub tol_abs: F,
    pub tol_rel: F,
}

impl<F: Real> Default for DistinguishOptions<F> {
    fn default() -> Self {
        DistinguishOptions {
            vertical: false,
            tol_abs: F::of(1e-6),
            tol_rel: F::of(1e-6),
        }
    }
}

fn sample_range<F: Real + nalgebra::RealField>(
    lagrangian: &Lagrangian,
    points: &[J1Point<F>],
    invariant: impl Fn(&Lagrangian, &J1Point<F>) -> Result<F, InvariantError>,
) -> Option<InvariantRange<F>> {
    let mut range: Option<InvariantRange<F>> = None;
    let mut skipped = 0;
    for p in points {
        match invariant(lagrangian, p) {
            Ok(value) if Float::is_finite(value) => match &mut range {
                None => {
                    range = Some(InvariantRange {
                        low: value,
                        high: value,
                        low_point: p.clone(),
                        high_point: p.clone(),
                        evaluated: 1,
                        skipped: 0,
                    });
                }
                Some(r) => {
                    if value < r.low {
                        r.low = value;
                        r.low_point = p.clone();
                    }
                    if value > r.high {
                        r.high = value;
                        r.high_point = p.clone();
                    }
                    r.evaluated += 1;
                }
            },
            _ => skipped += 1,
        }
    }
    if let Some(r) = &mut range {
        r.skipped = skipped;
    }
    range
}

/// Compare sampled invariant ranges of two Lagrangians over a grid.
/// Disjoint closed ranges beyond the tolerance certify non-equivalence;
/// anything else is inconclusive. This never certifies equivalence.
pub fn distinguish<F: Real + nalgebra::RealField>(
    first: &Lagrangian,
    second: &Lagrangian,
    grid: &GridSpec<F>,
    options: &DistinguishOptions<F>,
) -> Result<EquivalenceVerdict<F>, EquivalenceError> {
    assert_eq!(first.m(), second.m(), "fiber dimensions must match");
    let points = grid.points();
    let mut invariants: Vec<(
        String,
        Box<dyn Fn(&Lagrangian, &J1Point<F>) -> Result<F, InvariantError>>,
    )> = vec![("I".to_owned(), Box::new(invariant_i))];
    if options.vertical && first.m() == 2 {
        invariants.push(("K".to_owned(), Box::new(gaussian_k)));
    }

    let mut ranges = Vec::new();
    let mut separating: Option<(String, F)> = None;
    for (name, eval) in &invariants {
        let r1 = sample_range(first, &points, eval);
        let r2 = sample_range(second, &points, eval);
        let (Some(r1), Some(r2)) = (r1, r2) else {
            if name == "I" {
                return Err(EquivalenceError::EmptyGrid {
                    reason: format!(
                        "no grid point admitted the invariant {name} for both Lagrangians"
                    ),
                });
            }
            continue;
        };
        let scale = [r1.low, r1.high, r2.low, r2.high]
            .iter()
            .map(|v| Float::abs(*v))
            .fold(F::of(0.0), Float::max);
        let tol = options.tol_abs + options.tol_rel * scale;
        let gap = Float::max(r1.low - r2.high, r2.low - r1.high);
        if gap > tol && separating.is_none() {
            separating = Some((name.clone(), gap));
        }
        ranges.push(RangePair {
            invariant: name.clone(),
            first: r1,
            second: r2,
        });
    }

    let (status, separating_invariant, gap) = match separating {
        Some((name, gap)) => (VerdictStatus::Distinguished, Some(name), Some(gap)),
        None => (VerdictStatus::Inconclusive, None, None),
    };
    Ok(EquivalenceVerdict {
        status,
        separating_invariant,
        gap,
        candidate: None,
        ranges,
        tol_abs: options.tol_abs,
        tol_rel: options.tol_rel,
    })
}
