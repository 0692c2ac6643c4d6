//! Lifts of projectable vector fields on the fibered manifold
//! `R x M -> R` to the line bundle over curve one-jets, and their
//! prolongations to second order.
//!
//! A projectable field `X = u(x) d/dx + v^alpha(x, y) d/dy^alpha` acts on
//! one-jets through the chain rule and on Lagrangian densities through the
//! reciprocal stretch of the base, giving the lift
//!
//! ```text
//! u d/dx + v^alpha d/dy^alpha + v1^alpha d/ddy^alpha - u' z d/dz,
//! v1^alpha = dv^alpha/dx + dy^beta dv^alpha/dy^beta - u' dy^alpha.
//! ```
//!
//! Prolonging the lift to the order-two jet space of the bundle can be done
//! two independent ways: generically through the total-derivative formula
//! (see [`crate::jet`]), or through the explicit per-coordinate
//! coefficients implemented in [`explicit_components`]. The two routes are
//! developed separately on purpose and tested against each other.

use crate::expr::{Binding, EvalError, Expr, Symbol};
use crate::jet::{
    BundleVectorField, EtaRoute, JetCoordinateSystem, JetError, JetFunction, JetPoint, MultiIndex,
};
use crate::Real;
use rand::Rng;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

/// Highest derivative order of the field data entering the second-order
/// prolongation: `u'''` and third partials of `v`.
pub const DATA_ORDER: u32 = 3;

/// A projectable vector field on `R x M`: `u` depends on `x` only, each
/// `v^alpha` on `x` and the `y^beta` only.
#[derive(Clone, Debug)]
pub struct ProjectableField {
    m: usize,
    u: Expr,
    v: Vec<Expr>,
    params: BTreeSet<Symbol>,
}

impl ProjectableField {
    pub fn new(m: usize, u: Expr, v: Vec<Expr>) -> Result<Self, JetError> {
        Self::with_params(m, u, v, BTreeSet::new())
    }

    pub fn with_params(
        m: usize,
        u: Expr,
        v: Vec<Expr>,
        params: BTreeSet<Symbol>,
    ) -> Result<Self, JetError> {
        assert_eq!(v.len(), m, "one v component per curve dimension");
        let x = Symbol::new("x");
        let ys: Vec<Symbol> = (1..=m).map(|a| Symbol::new(format!("y{a}"))).collect();
        for s in u.free_vars() {
            if s != x && !params.contains(&s) {
                return Err(JetError::UnknownSymbol(s.as_str().to_owned()));
            }
        }
        for comp in &v {
            for s in comp.free_vars() {
                if s != x && !ys.contains(&s) && !params.contains(&s) {
                    return Err(JetError::UnknownSymbol(s.as_str().to_owned()));
                }
            }
        }
        Ok(ProjectableField { m, u, v, params })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn u(&self) -> &Expr {
        &self.u
    }

    pub fn v(&self) -> &[Expr] {
        &self.v
    }

    /// Velocity component of the first prolongation:
    /// `v1^alpha = v^alpha_x + dy^beta v^alpha_{y^beta} - u' dy^alpha`.
    pub fn velocity_component(&self, alpha: usize) -> Expr {
        let x = Symbol::new("x");
        let mut terms = vec![self.v[alpha].diff(&x)];
        for b in 0..self.m {
            let yb = Symbol::new(format!("y{}", b + 1));
            let dvb = self.v[alpha].diff(&yb);
            if !dvb.is_zero() {
                terms.push(Expr::product(vec![Expr::var(format!("dy{}", b + 1)), dvb]));
            }
        }
        let du = self.u.diff(&x);
        if !du.is_zero() {
            terms.push(Expr::neg(Expr::product(vec![
                du,
                Expr::var(format!("dy{}", alpha + 1)),
            ])));
        }
        Expr::sum(terms)
    }

    /// Lift to the line bundle over curve one-jets: base components
    /// `(u, v^alpha, v1^alpha)` and fiber component `-u' z`.
    pub fn lift(&self) -> Result<BundleVectorField, JetError> {
        let sys = JetCoordinateSystem::for_curves(self.m, 0);
        let mut xi = Vec::with_capacity(2 * self.m + 1);
        xi.push(self.u.clone());
        xi.extend(self.v.iter().cloned());
        for a in 0..self.m {
            xi.push(self.velocity_component(a));
        }
        let x = Symbol::new("x");
        let eta = Expr::neg(Expr::product(vec![self.u.diff(&x), Expr::var("z")]));
        BundleVectorField::with_params(sys, xi, eta, self.params.clone())
    }
}

/// Derivative multi-indices of the field data `v^alpha(x, y)` up to order
/// three, over the `m + 1` slots `(x, y^1 .. y^m)`; canonical order.
pub fn taylor_indices(m: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for k in 0..=DATA_ORDER {
        out.extend(MultiIndex::of_order(m + 1, k));
    }
    out
}

/// Names of the free data symbols of the generic lift, in the layout of
/// [`VectorFieldData`]: `u0..u3`, then per component the `v` derivatives
/// in [`taylor_indices`] order.
pub fn data_symbols(m: usize) -> Vec<Symbol> {
    let mut out: Vec<Symbol> = (0..=DATA_ORDER).map(|k| Symbol::new(format!("u{k}"))).collect();
    for alpha in 1..=m {
        for idx in taylor_indices(m) {
            out.push(Symbol::new(v_symbol_name(alpha, &idx)));
        }
    }
    out
}

/// Anchor symbols `(px, py1 .. pym)` for the expansion point of the
/// generic lift.
pub fn anchor_symbols(m: usize) -> Vec<Symbol> {
    let mut out = vec![Symbol::new("px")];
    out.extend((1..=m).map(|a| Symbol::new(format!("py{a}"))));
    out
}

fn v_symbol_name(alpha: usize, idx: &MultiIndex) -> String {
    let mut s = format!("v{alpha}");
    if idx.order() > 0 {
        s.push('_');
        for _ in 0..idx.slots()[0] {
            s.push('x');
        }
        for (b, &k) in idx.slots()[1..].iter().enumerate() {
            for _ in 0..k {
                s.push_str(&format!("y{}", b + 1));
            }
        }
    }
    s
}

fn factorial(idx: &MultiIndex) -> i64 {
    idx.slots()
        .iter()
        .map(|&k| (1..=i64::from(k)).product::<i64>())
        .product()
}

/// Generic projectable field whose data are free symbols: `u` and `v` are
/// degree-three polynomials around the anchor `(px, py)` whose coefficients
/// are the derivative values themselves.
///
/// Binding `px, py` to the coordinates of an evaluation point makes every
/// data symbol equal the corresponding derivative of the field at that
/// point, and degree three is exact because nothing beyond third
/// derivatives enters a second-order prolongation.
pub fn generic_field(m: usize) -> ProjectableField {
    let x = Expr::var("x");
    let dx = Expr::sum(vec![x, Expr::neg(Expr::var("px"))]);
    let mut u_terms = Vec::new();
    for k in 0..=DATA_ORDER {
        let coeff = Expr::div(
            Expr::var(format!("u{k}")),
            Expr::int((1..=i64::from(k)).product::<i64>().max(1)),
        );
        u_terms.push(Expr::product(vec![
            coeff,
            Expr::pow_int(dx.clone(), i64::from(k)),
        ]));
    }
    let u = Expr::sum(u_terms);

    let mut v = Vec::with_capacity(m);
    for alpha in 1..=m {
        let mut terms = Vec::new();
        for idx in taylor_indices(m) {
            let mut factors = vec![Expr::div(
                Expr::var(v_symbol_name(alpha, &idx)),
                Expr::int(factorial(&idx)),
            )];
            let k0 = idx.slots()[0];
            if k0 > 0 {
                factors.push(Expr::pow_int(dx.clone(), i64::from(k0)));
            }
            for (b, &k) in idx.slots()[1..].iter().enumerate() {
                if k > 0 {
                    let dy = Expr::sum(vec![
                        Expr::var(format!("y{}", b + 1)),
                        Expr::neg(Expr::var(format!("py{}", b + 1))),
                    ]);
                    factors.push(Expr::pow_int(dy, i64::from(k)));
                }
            }
            terms.push(Expr::product(factors));
        }
        v.push(Expr::sum(terms));
    }

    let mut params: BTreeSet<Symbol> = data_symbols(m).into_iter().collect();
    params.extend(anchor_symbols(m));
    ProjectableField::with_params(m, u, v, params).expect("generic field is well formed")
}

/// A lifted field prolonged to order `r`: one symbolic component per
/// coordinate of the order-`r` jet system, in canonical coordinate order.
#[derive(Clone, Debug)]
pub struct LiftedField {
    m: usize,
    order: usize,
    system: Arc<JetCoordinateSystem>,
    components: Vec<(Symbol, JetFunction)>,
}

impl LiftedField {
    pub fn from_field(
        field: &ProjectableField,
        order: usize,
        route: EtaRoute,
    ) -> Result<Self, JetError> {
        let lifted = field.lift()?;
        let components = lifted.prolong(order, route)?;
        Ok(LiftedField {
            m: field.m(),
            order,
            system: JetCoordinateSystem::for_curves(field.m(), order),
            components,
        })
    }

    /// Prolongation of the data-parameterized [`generic_field`].
    pub fn generic(m: usize, order: usize, route: EtaRoute) -> Result<Self, JetError> {
        Self::from_field(&generic_field(m), order, route)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn system(&self) -> &Arc<JetCoordinateSystem> {
        &self.system
    }

    pub fn components(&self) -> &[(Symbol, JetFunction)] {
        &self.components
    }

    /// Evaluate every component under one binding (coordinates plus any
    /// data and anchor symbols).
    pub fn evaluate<F: Real>(&self, binding: &Binding<F>) -> Result<Vec<F>, EvalError> {
        self.components
            .iter()
            .map(|(_, f)| f.expr().eval(binding))
            .collect()
    }

    /// Binding for evaluating the generic lift: point coordinates, the
    /// anchors tied to the point, and the field data values.
    pub fn generic_binding<F: Real>(point: &JetPoint<F>, data: &VectorFieldData<F>) -> Binding<F> {
        let mut b = point.binding();
        b.merge(&data.binding());
        b.set("px", point.get(&Symbol::new("x")).expect("x coordinate"));
        for a in 1..=data.m() {
            let ya = Symbol::new(format!("y{a}"));
            b.set(format!("py{a}"), point.get(&ya).expect("y coordinate"));
        }
        b
    }
}

/// Numeric jet data of a projectable field at a point: the derivatives of
/// `u` to third order and of every `v^alpha` to third order in `(x, y)`.
#[derive(Clone, Debug)]
pub struct VectorFieldData<F> {
    m: usize,
    u: [F; 4],
    v: Vec<Vec<F>>,
    positions: HashMap<MultiIndex, usize>,
}

impl<F: Real> VectorFieldData<F> {
    pub fn new(m: usize, u: [F; 4], v: Vec<Vec<F>>) -> Self {
        let indices = taylor_indices(m);
        assert_eq!(v.len(), m);
        for comp in &v {
            assert_eq!(comp.len(), indices.len());
        }
        let positions = indices
            .into_iter()
            .enumerate()
            .map(|(i, idx)| (idx, i))
            .collect();
        VectorFieldData {
            m,
            u,
            v,
            positions,
        }
    }

    /// Independent uniform draws from `[-1, 1]` for every data slot.
    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || F::of(rng.gen_range(-1.0..=1.0));
        let u = [draw(), draw(), draw(), draw()];
        let n = taylor_indices(m).len();
        let v = (0..m)
            .map(|_| (0..n).map(|_| draw()).collect())
            .collect();
        Self::new(m, u, v)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `d^k u / dx^k` at the point, `k <= 3`.
    pub fn u_deriv(&self, k: usize) -> F {
        self.u[k]
    }

    /// Every data value flattened in [`data_symbols`] order.
    pub fn flat(&self) -> impl Iterator<Item = F> + '_ {
        self.u.iter().chain(self.v.iter().flatten()).copied()
    }

    /// Derivative of `v^alpha` (zero-based `alpha`) for a multi-index over
    /// `(x, y^1 .. y^m)`.
    pub fn v_deriv(&self, alpha: usize, idx: &MultiIndex) -> F {
        self.v[alpha][self.positions[idx]]
    }

    fn ex(&self) -> MultiIndex {
        MultiIndex::unit(self.m + 1, 0)
    }
    fn ey(&self, b: usize) -> MultiIndex {
        MultiIndex::unit(self.m + 1, 1 + b)
    }

    pub fn v0(&self, a: usize) -> F {
        self.v_deriv(a, &MultiIndex::zero(self.m + 1))
    }
    pub fn vx(&self, a: usize) -> F {
        self.v_deriv(a, &self.ex())
    }
    pub fn vy(&self, a: usize, b: usize) -> F {
        self.v_deriv(a, &self.ey(b))
    }
    pub fn vxx(&self, a: usize) -> F {
        self.v_deriv(a, &self.ex().plus_unit(0))
    }
    pub fn vxy(&self, a: usize, b: usize) -> F {
        self.v_deriv(a, &self.ex().plus_unit(1 + b))
    }
    pub fn vyy(&self, a: usize, b: usize, c: usize) -> F {
        self.v_deriv(a, &self.ey(b).plus_unit(1 + c))
    }
    pub fn vxxx(&self, a: usize) -> F {
        self.v_deriv(a, &self.ex().plus_unit(0).plus_unit(0))
    }
    pub fn vxxy(&self, a: usize, b: usize) -> F {
        self.v_deriv(a, &self.ex().plus_unit(0).plus_unit(1 + b))
    }
    pub fn vxyy(&self, a: usize, b: usize, c: usize) -> F {
        self.v_deriv(a, &self.ex().plus_unit(1 + b).plus_unit(1 + c))
    }
    pub fn vyyy(&self, a: usize, b: usize, c: usize, d: usize) -> F {
        self.v_deriv(a, &self.ey(b).plus_unit(1 + c).plus_unit(1 + d))
    }

    /// Values for the data symbols of the generic lift.
    pub fn binding(&self) -> Binding<F> {
        let mut b = Binding::new();
        for (k, val) in self.u.iter().enumerate() {
            b.set(format!("u{k}"), *val);
        }
        let mut by_pos: Vec<&MultiIndex> = self.positions.keys().collect();
        by_pos.sort_by_key(|idx| self.positions[idx]);
        for (alpha, comp) in self.v.iter().enumerate() {
            for (idx, val) in by_pos.iter().zip(comp) {
                b.set(v_symbol_name(alpha + 1, idx), *val);
            }
        }
        b
    }
}

/// View of a curve-bundle jet point through named accessors. Fiber accessors
/// panic if the requested index exceeds the order of the underlying point.
pub(crate) struct CurveJetView<'a, F> {
    m: usize,
    point: &'a JetPoint<F>,
}

impl<'a, F: Real> CurveJetView<'a, F> {
    pub(crate) fn new(point: &'a JetPoint<F>) -> Self {
        let nu = point.system().nu();
        CurveJetView {
            m: (nu - 1) / 2,
            point,
        }
    }

    pub(crate) fn m(&self) -> usize {
        self.m
    }

    fn nu(&self) -> usize {
        2 * self.m + 1
    }

    fn base(&self, slot: usize) -> F {
        self.point.values()[slot]
    }

    pub(crate) fn dy(&self, a: usize) -> F {
        self.base(1 + self.m + a)
    }

    fn z_at(&self, idx: &MultiIndex) -> F {
        let pos = self
            .point
            .system()
            .fiber_position(idx)
            .expect("index within the point's order");
        self.point.values()[self.nu() + pos]
    }

    fn ex(&self) -> MultiIndex {
        MultiIndex::unit(self.nu(), 0)
    }
    fn ey(&self, a: usize) -> MultiIndex {
        MultiIndex::unit(self.nu(), 1 + a)
    }
    fn edy(&self, a: usize) -> MultiIndex {
        MultiIndex::unit(self.nu(), 1 + self.m + a)
    }

    pub(crate) fn z(&self) -> F {
        self.z_at(&MultiIndex::zero(self.nu()))
    }
    fn zx(&self) -> F {
        self.z_at(&self.ex())
    }
    fn zy(&self, a: usize) -> F {
        self.z_at(&self.ey(a))
    }
    pub(crate) fn zdy(&self, a: usize) -> F {
        self.z_at(&self.edy(a))
    }
    fn zxx(&self) -> F {
        self.z_at(&self.ex().plus_unit(0))
    }
    fn zxy(&self, a: usize) -> F {
        self.z_at(&self.ey(a).plus_unit(0))
    }
    fn zxdy(&self, a: usize) -> F {
        self.z_at(&self.edy(a).plus_unit(0))
    }
    fn zyy(&self, a: usize, b: usize) -> F {
        self.z_at(&self.ey(a).plus_unit(1 + b))
    }
    fn zydy(&self, a: usize, b: usize) -> F {
        self.z_at(&self.ey(a).plus_unit(1 + self.m + b))
    }
    pub(crate) fn zdydy(&self, a: usize, b: usize) -> F {
        self.z_at(&self.edy(a).plus_unit(1 + self.m + b))
    }
}

/// Explicit second-order prolongation coefficients of the lift of a
/// projectable field, evaluated numerically from the field data at the
/// point. One value per coordinate of the order-two system, in canonical
/// order; transcribed coefficient by coefficient rather than derived, so
/// it can serve as an independent oracle for the generic route.
pub fn explicit_components<F: Real>(data: &VectorFieldData<F>, point: &JetPoint<F>) -> Vec<F> {
    let m = data.m();
    let view = CurveJetView::new(point);
    assert_eq!(view.m, m, "point dimension matches field data");
    assert!(
        point.system().order() >= 2,
        "explicit coefficients are second order"
    );

    let p = &view;
    let u1 = data.u_deriv(1);
    let u2 = data.u_deriv(2);

    let mut out = Vec::with_capacity(point.system().dimension());

    // base components: u, v^alpha, v1^alpha
    out.push(data.u_deriv(0));
    for a in 0..m {
        out.push(data.v0(a));
    }
    for a in 0..m {
        let mut v1 = data.vx(a) - u1 * p.dy(a);
        for b in 0..m {
            v1 = v1 + p.dy(b) * data.vy(a, b);
        }
        out.push(v1);
    }

    for (idx, _) in point.system().fiber() {
        let order = idx.order();
        let val = if order == 0 {
            // eta = -u' z
            -u1 * p.z()
        } else if order == 1 {
            if idx.slots()[0] == 1 {
                // A
                let mut s = -u2 * p.z() - F::of(2.0) * u1 * p.zx();
                for a in 0..m {
                    s = s - data.vx(a) * p.zy(a) - data.vxx(a) * p.zdy(a)
                        + u2 * p.dy(a) * p.zdy(a);
                    for b in 0..m {
                        s = s - data.vxy(a, b) * p.dy(b) * p.zdy(a);
                    }
                }
                s
            } else if let Some(a) = slot_y(idx, m) {
                // B_a
                let mut s = -u1 * p.zy(a);
                for b in 0..m {
                    s = s - data.vy(b, a) * p.zy(b) - data.vxy(b, a) * p.zdy(b);
                    for g in 0..m {
                        s = s - data.vyy(b, a, g) * p.dy(g) * p.zdy(b);
                    }
                }
                s
            } else {
                // C_a
                let a = slot_dy(idx, m).expect("first-order index");
                let mut s = F::zero();
                for b in 0..m {
                    s = s - data.vy(b, a) * p.zdy(b);
                }
                s
            }
        } else {
            second_order_coefficient(idx, m, data, p)
        };
        out.push(val);
    }
    out
}

fn slot_y(idx: &MultiIndex, m: usize) -> Option<usize> {
    (0..m).find(|&a| idx.slots()[1 + a] > 0)
}

fn slot_dy(idx: &MultiIndex, m: usize) -> Option<usize> {
    (0..m).find(|&a| idx.slots()[1 + m + a] > 0)
}

fn second_order_coefficient<F: Real>(
    idx: &MultiIndex,
    m: usize,
    data: &VectorFieldData<F>,
    p: &CurveJetView<'_, F>,
) -> F {
    let u1 = data.u_deriv(1);
    let u2 = data.u_deriv(2);
    let u3 = data.u_deriv(3);
    let two = F::of(2.0);
    let three = F::of(3.0);
    let kx = idx.slots()[0];
    if kx == 2 {
        // D: coefficient of d/dz_xx
        let mut s = -three * u1 * p.zxx() - three * u2 * p.zx() - u3 * p.z();
        for a in 0..m {
            s = s - two * data.vx(a) * p.zxy(a) + two * u2 * p.dy(a) * p.zxdy(a);
            s = s - data.vxx(a) * p.zy(a) - two * data.vxx(a) * p.zxdy(a);
            s = s + u3 * p.dy(a) * p.zdy(a) - data.vxxx(a) * p.zdy(a);
            for b in 0..m {
                s = s - two * data.vxy(a, b) * p.dy(b) * p.zxdy(a);
                s = s - data.vxxy(a, b) * p.dy(b) * p.zdy(a);
            }
        }
        s
    } else if kx == 1 {
        if let Some(a) = slot_y(idx, m) {
            // E_a: coefficient of d/dz_{x y^a}
            let mut s = -two * u1 * p.zxy(a) - u2 * p.zy(a);
            for b in 0..m {
                s = s - data.vx(b) * p.zyy(a, b) - data.vy(b, a) * p.zxy(b);
                s = s + u2 * p.dy(b) * p.zydy(a, b) - data.vxx(b) * p.zydy(a, b);
                s = s - data.vxy(b, a) * p.zy(b) - data.vxy(b, a) * p.zxdy(b);
                s = s - data.vxxy(b, a) * p.zdy(b);
                for g in 0..m {
                    s = s - data.vxy(b, g) * p.dy(g) * p.zydy(a, b);
                    s = s - data.vyy(b, a, g) * p.dy(g) * p.zxdy(b);
                    s = s - data.vxyy(b, a, g) * p.dy(g) * p.zdy(b);
                }
            }
            s
        } else {
            // F_a: coefficient of d/dz_{x dy^a}
            let a = slot_dy(idx, m).expect("mixed x index");
            let mut s = -u1 * p.zxdy(a);
            for b in 0..m {
                s = s - data.vx(b) * p.zydy(b, a) - data.vy(b, a) * p.zxdy(b);
                s = s + u2 * p.dy(b) * p.zdydy(a, b) - data.vxx(b) * p.zdydy(a, b);
                s = s - data.vxy(b, a) * p.zdy(b);
                for g in 0..m {
                    s = s - data.vxy(b, g) * p.dy(g) * p.zdydy(a, b);
                }
            }
            s
        }
    } else {
        // no x derivative: split by how the two slots fall on y and dy
        let ys: Vec<usize> = (0..m)
            .flat_map(|a| std::iter::repeat(a).take(idx.slots()[1 + a] as usize))
            .collect();
        let dys: Vec<usize> = (0..m)
            .flat_map(|a| std::iter::repeat(a).take(idx.slots()[1 + m + a] as usize))
            .collect();
        match (ys.len(), dys.len()) {
            (2, 0) => {
                // G_ab: coefficient of d/dz_{y^a y^b}, a <= b
                let (a, b) = (ys[0], ys[1]);
                let mut s = -u1 * p.zyy(a, b);
                for t in 0..m {
                    s = s - data.vyy(t, a, b) * p.zy(t) - data.vxyy(t, a, b) * p.zdy(t);
                    s = s - data.vy(t, b) * p.zyy(a, t) - data.vy(t, a) * p.zyy(b, t);
                    s = s - data.vxy(t, b) * p.zydy(a, t) - data.vxy(t, a) * p.zydy(b, t);
                    for g in 0..m {
                        s = s - data.vyyy(t, a, b, g) * p.dy(g) * p.zdy(t);
                        s = s - data.vyy(t, b, g) * p.dy(g) * p.zydy(a, t);
                        s = s - data.vyy(t, a, g) * p.dy(g) * p.zydy(b, t);
                    }
                }
                s
            }
            (1, 1) => {
                // H_ab: coefficient of d/dz_{y^a dy^b}
                let (a, b) = (ys[0], dys[0]);
                let mut s = F::zero();
                for t in 0..m {
                    s = s - data.vyy(t, a, b) * p.zdy(t);
                    s = s - data.vy(t, b) * p.zydy(a, t) - data.vy(t, a) * p.zydy(t, b);
                    s = s - data.vxy(t, a) * p.zdydy(b, t);
                    for g in 0..m {
                        s = s - data.vyy(t, a, g) * p.dy(g) * p.zdydy(b, t);
                    }
                }
                s
            }
            (0, 2) => {
                // K_ab: coefficient of d/dz_{dy^a dy^b}, a <= b
                let (a, b) = (dys[0], dys[1]);
                let mut s = u1 * p.zdydy(a, b);
                for t in 0..m {
                    s = s - data.vy(t, b) * p.zdydy(a, t) - data.vy(t, a) * p.zdydy(b, t);
                }
                s
            }
            _ => unreachable!("second-order index over (x, y, dy)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn component_map(lift: &LiftedField) -> HashMap<String, String> {
        lift.components()
            .iter()
            .map(|(sym, f)| (sym.as_str().to_owned(), f.expr().simplify().to_string()))
            .collect()
    }

    #[test]
    fn scaling_field_weights() {
        // u = x, v = 0: the lift scales each jet coordinate by its weight
        let field = ProjectableField::new(1, parse("x").unwrap(), vec![Expr::int(0)]).unwrap();
        let lift = LiftedField::from_field(&field, 2, EtaRoute::Direct).unwrap();
        let map = component_map(&lift);
        assert_eq!(map["x"], "x");
        assert_eq!(map["y1"], "0");
        assert_eq!(map["dy1"], "-dy1");
        assert_eq!(map["z"], "-z");
        assert_eq!(map["z_x"], "-2*z_x");
        assert_eq!(map["z_y1"], "-z_y1");
        assert_eq!(map["z_dy1"], "0");
        assert_eq!(map["z_xx"], "-3*z_xx");
        assert_eq!(map["z_xy1"], "-2*z_xy1");
        assert_eq!(map["z_xdy1"], "-z_xdy1");
        assert_eq!(map["z_y1y1"], "-z_y1y1");
        assert_eq!(map["z_y1dy1"], "0");
        assert_eq!(map["z_dy1dy1"], "z_dy1dy1");
    }

    #[test]
    fn velocity_component_formula() {
        let field = ProjectableField::new(
            2,
            parse("x^2").unwrap(),
            vec![parse("x*y2").unwrap(), parse("y1^2").unwrap()],
        )
        .unwrap();
        // v1^1 = y2 + x*dy2 - 2x*dy1, v1^2 = 2*y1*dy1 - 2x*dy2
        let got1 = field.velocity_component(0).simplify();
        let want1 = parse("y2 + x*dy2 - 2*x*dy1").unwrap().simplify();
        let got2 = field.velocity_component(1).simplify();
        let want2 = parse("2*y1*dy1 - 2*x*dy2").unwrap().simplify();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let b: Binding<f64> = ["x", "y1", "y2", "dy1", "dy2"]
                .iter()
                .map(|n| (*n, rng.gen_range(-2.0..2.0)))
                .collect();
            let g1: f64 = got1.eval(&b).unwrap();
            let w1: f64 = want1.eval(&b).unwrap();
            assert!((g1 - w1).abs() < 1e-12);
            let g2: f64 = got2.eval(&b).unwrap();
            let w2: f64 = want2.eval(&b).unwrap();
            assert!((g2 - w2).abs() < 1e-12);
        }
    }

    #[test]
    fn field_validation_rejects_velocity_dependence() {
        let err = ProjectableField::new(1, parse("x").unwrap(), vec![parse("dy1").unwrap()]);
        assert!(matches!(err, Err(JetError::UnknownSymbol(s)) if s == "dy1"));
        let err = ProjectableField::new(1, parse("y1").unwrap(), vec![Expr::int(0)]);
        assert!(matches!(err, Err(JetError::UnknownSymbol(s)) if s == "y1"));
    }

    #[test]
    fn generic_field_taylor_data_is_exact() {
        // binding the anchors to the point makes the data symbols equal the
        // derivatives of u and v there, to all orders that matter
        let field = generic_field(2);
        let mut rng = StdRng::seed_from_u64(17);
        let data = VectorFieldData::<f64>::random(2, &mut rng);
        let x0 = 0.7;
        let y0 = [0.3, -0.4];
        let mut b = data.binding();
        b.set("px", x0).set("py1", y0[0]).set("py2", y0[1]);
        b.set("x", x0).set("y1", y0[0]).set("y2", y0[1]);
        // u value and derivatives by symbolic differentiation at the anchor
        let sx = Symbol::new("x");
        let mut u = field.u().clone();
        for k in 0..=3usize {
            let got: f64 = u.eval(&b).unwrap();
            assert!((got - data.u_deriv(k)).abs() < 1e-12, "u derivative {k}");
            u = u.diff(&sx);
        }
        // a sample of v derivatives
        let sy2 = Symbol::new("y2");
        let v1_xy2 = field.v()[0].diff(&sx).diff(&sy2);
        let got: f64 = v1_xy2.eval(&b).unwrap();
        let idx = MultiIndex::unit(3, 0).plus_unit(2);
        assert!((got - data.v_deriv(0, &idx)).abs() < 1e-12);
        let v2_y1y1y2 = field.v()[1]
            .diff(&Symbol::new("y1"))
            .diff(&Symbol::new("y1"))
            .diff(&sy2);
        let got: f64 = v2_y1y1y2.eval(&b).unwrap();
        let idx = MultiIndex::unit(3, 1).plus_unit(1).plus_unit(2);
        assert!((got - data.v_deriv(1, &idx)).abs() < 1e-12);
    }

    #[test]
    fn explicit_coefficients_match_generic_prolongation() {
        let mut rng = StdRng::seed_from_u64(91);
        for m in 1..=3usize {
            let lift = LiftedField::generic(m, 2, EtaRoute::Leibniz).unwrap();
            let sys = JetCoordinateSystem::for_curves(m, 2);
            for _ in 0..10 {
                let data = VectorFieldData::<f64>::random(m, &mut rng);
                let values: Vec<f64> = (0..sys.dimension())
                    .map(|_| rng.gen_range(-2.0..2.0))
                    .collect();
                let point = JetPoint::new(sys.clone(), values).unwrap();
                let binding = LiftedField::generic_binding(&point, &data);
                let generic = lift.evaluate(&binding).unwrap();
                let explicit = explicit_components(&data, &point);
                assert_eq!(generic.len(), explicit.len());
                for (i, (g, e)) in generic.iter().zip(&explicit).enumerate() {
                    let coord = &sys.coordinates()[i];
                    assert!(
                        (g - e).abs() <= 1e-9 * (1.0 + g.abs()),
                        "m={m} component {coord}: generic {g} vs explicit {e}"
                    );
                }
            }
        }
    }
}
