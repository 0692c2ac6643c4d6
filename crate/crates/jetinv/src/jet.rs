//! Jet coordinates on a trivial line bundle and the total-derivative
//! calculus used to prolong vector fields.
//!
//! The bundle has base coordinates `t^1 .. t^nu` and one fiber coordinate
//! `z`. The order-`r` jet space adds a coordinate `z_I` for every
//! derivative multi-index `I` with `|I| <= r`; each gets a readable alias
//! built from the base names (`z`, `z_x`, `z_xdy1`, ...), and expressions
//! refer to jet coordinates through those aliases.
//!
//! A projectable vector field `xi^a d/dt^a + eta d/dz` prolongs to the jet
//! space with fiber components
//!
//! ```text
//! eta_I = D^I(eta - xi^a z_(a)) + xi^a z_(I+(a))
//!       = D^I(eta) - sum_{J < I} binom(I, J) (d^(I-J) xi^a) z_(J+(a))
//! ```
//!
//! where `D` is the total derivative. Both forms are implemented; the first
//! exercises the truncation cancellation directly, the second never leaves
//! the target order. Tests hold them against each other.

use crate::expr::{Binding, Expr, Symbol};
use crate::Real;
use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

/// Derivative multi-index: one count per base coordinate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(counts: Vec<u32>) -> Self {
        MultiIndex(counts)
    }

    pub fn zero(nu: usize) -> Self {
        MultiIndex(vec![0; nu])
    }

    /// The index with a single derivative in `slot`.
    pub fn unit(nu: usize, slot: usize) -> Self {
        let mut c = vec![0; nu];
        c[slot] = 1;
        MultiIndex(c)
    }

    pub fn slots(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total derivative order `|I|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn plus_unit(&self, slot: usize) -> Self {
        let mut c = self.0.clone();
        c[slot] += 1;
        MultiIndex(c)
    }

    /// Componentwise `self <= other`.
    pub fn leq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Componentwise difference, defined when `other <= self`.
    pub fn minus(&self, other: &Self) -> Option<Self> {
        if !other.leq(self) {
            return None;
        }
        Some(MultiIndex(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Product of componentwise binomial coefficients `C(i_a, j_a)`.
    pub fn binom(&self, lower: &Self) -> u64 {
        self.0
            .iter()
            .zip(&lower.0)
            .map(|(&i, &j)| num_integer::binomial(u64::from(i), u64::from(j)))
            .product()
    }

    /// Every `J <= self`, in ascending lexicographic order.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex(Vec::with_capacity(self.0.len()))];
        for &bound in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (bound as usize + 1));
            for prefix in &out {
                for k in 0..=bound {
                    let mut c = prefix.0.clone();
                    c.push(k);
                    next.push(MultiIndex(c));
                }
            }
            out = next;
        }
        out
    }

    /// All indices of order exactly `k` over `nu` slots, first slot
    /// heaviest first (descending lexicographic).
    pub fn of_order(nu: usize, k: u32) -> Vec<MultiIndex> {
        fn rec(slot: usize, rem: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if slot + 1 == cur.len() {
                cur[slot] = rem;
                out.push(MultiIndex(cur.clone()));
                return;
            }
            for i in (0..=rem).rev() {
                cur[slot] = i;
                rec(slot + 1, rem - i, cur, out);
            }
        }
        if nu == 0 {
            return if k == 0 {
                vec![MultiIndex(Vec::new())]
            } else {
                Vec::new()
            };
        }
        let mut out = Vec::new();
        rec(0, k, &mut vec![0; nu], &mut out);
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JetError {
    #[error("symbol `{0}` is neither a coordinate of the jet system nor a declared parameter")]
    UnknownSymbol(String),
    #[error("base slot {slot} out of range: the system has {nu} base coordinates")]
    SlotOutOfRange { slot: usize, nu: usize },
    #[error("multi-index has {got} slots but the system has {expected} base coordinates")]
    ArityMismatch { got: usize, expected: usize },
    #[error("expected {expected} coordinate values, got {got}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(
        "prolongation component for `{component}` kept the order-{order} coordinate `{coordinate}`"
    )]
    TruncationLeak {
        component: String,
        coordinate: String,
        order: u32,
    },
}

/// Coordinates of an order-`r` jet space: the base symbols plus one aliased
/// fiber symbol per multi-index of order up to `r`.
///
/// Systems are cached and shared; [`JetCoordinateSystem::shared`] returns
/// the same allocation for the same base names and order.
#[derive(Debug)]
pub struct JetCoordinateSystem {
    base: Vec<Symbol>,
    order: usize,
    fiber: Vec<(MultiIndex, Symbol)>,
    by_alias: HashMap<Symbol, usize>,
    by_index: HashMap<MultiIndex, usize>,
}

impl PartialEq for JetCoordinateSystem {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.order == other.order
    }
}
impl Eq for JetCoordinateSystem {}

static SYSTEMS: OnceLock<Mutex<HashMap<(Vec<String>, usize), Arc<JetCoordinateSystem>>>> =
    OnceLock::new();

impl JetCoordinateSystem {
    /// Cached system over the given base coordinate names.
    pub fn shared(base_names: &[&str], order: usize) -> Arc<JetCoordinateSystem> {
        let key = (
            base_names.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            order,
        );
        let mut cache = SYSTEMS
            .get_or_init(|| Mutex::new(HashMap::new()))
            .lock()
            .expect("jet system cache poisoned");
        if let Some(sys) = cache.get(&key) {
            return sys.clone();
        }
        let sys = Arc::new(Self::build(base_names, order));
        cache.insert(key, sys.clone());
        sys
    }

    /// System for the line bundle over curve one-jets in `m` dimensions:
    /// base coordinates `x, y1..ym, dy1..dym`.
    pub fn for_curves(m: usize, order: usize) -> Arc<JetCoordinateSystem> {
        assert!(m >= 1, "at least one curve dimension");
        let mut names: Vec<String> = vec!["x".to_string()];
        names.extend((1..=m).map(|a| format!("y{a}")));
        names.extend((1..=m).map(|a| format!("dy{a}")));
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let sys = Self::shared(&refs, order);
        if order == 2 {
            debug_assert_eq!(sys.dimension(), crate::j2q_dimension(m));
        }
        sys
    }

    fn build(base_names: &[&str], order: usize) -> JetCoordinateSystem {
        let base: Vec<Symbol> = base_names.iter().map(Symbol::new).collect();
        let mut fiber = Vec::new();
        for k in 0..=order as u32 {
            for idx in MultiIndex::of_order(base.len(), k) {
                let alias = Symbol::new(Self::make_alias(&base, &idx));
                fiber.push((idx, alias));
            }
        }
        let by_alias: HashMap<Symbol, usize> = fiber
            .iter()
            .enumerate()
            .map(|(i, (_, a))| (a.clone(), i))
            .collect();
        let by_index: HashMap<MultiIndex, usize> = fiber
            .iter()
            .enumerate()
            .map(|(i, (idx, _))| (idx.clone(), i))
            .collect();
        // aliases must be distinct from each other and from the base names
        assert_eq!(by_alias.len(), fiber.len(), "fiber alias collision");
        for b in &base {
            assert!(!by_alias.contains_key(b), "base name shadows a fiber alias");
        }
        JetCoordinateSystem {
            base,
            order,
            fiber,
            by_alias,
            by_index,
        }
    }

    fn make_alias(base: &[Symbol], idx: &MultiIndex) -> String {
        if idx.order() == 0 {
            return "z".to_string();
        }
        let mut s = String::from("z_");
        for (slot, &k) in idx.slots().iter().enumerate() {
            for _ in 0..k {
                s.push_str(base[slot].as_str());
            }
        }
        s
    }

    pub fn base(&self) -> &[Symbol] {
        &self.base
    }

    /// Number of base coordinates.
    pub fn nu(&self) -> usize {
        self.base.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Fiber coordinates `(I, alias)` in canonical order: by total order,
    /// then first slot heaviest first.
    pub fn fiber(&self) -> &[(MultiIndex, Symbol)] {
        &self.fiber
    }

    /// Same base, different jet order.
    pub fn with_order(&self, order: usize) -> Arc<JetCoordinateSystem> {
        let names: Vec<&str> = self.base.iter().map(|s| s.as_str()).collect();
        Self::shared(&names, order)
    }

    pub fn alias(&self, idx: &MultiIndex) -> Option<&Symbol> {
        self.by_index.get(idx).map(|&i| &self.fiber[i].1)
    }

    pub fn index_of(&self, alias: &Symbol) -> Option<&MultiIndex> {
        self.by_alias.get(alias).map(|&i| &self.fiber[i].0)
    }

    /// Position of `z_I` within the fiber list (and, offset by the base
    /// count, within [`JetCoordinateSystem::coordinates`]).
    pub fn fiber_position(&self, idx: &MultiIndex) -> Option<usize> {
        self.by_index.get(idx).copied()
    }

    /// Variable expression for the fiber coordinate `z_I`.
    ///
    /// Panics when `I` exceeds the system order; that is a programming
    /// error, not an input error.
    pub fn z_var(&self, idx: &MultiIndex) -> Expr {
        let alias = self
            .alias(idx)
            .unwrap_or_else(|| panic!("no fiber coordinate for index {:?}", idx.slots()));
        Expr::var_symbol(alias.clone())
    }

    pub fn contains(&self, sym: &Symbol) -> bool {
        self.base.contains(sym) || self.by_alias.contains_key(sym)
    }

    /// All coordinates in canonical order: base, then fiber.
    pub fn coordinates(&self) -> Vec<Symbol> {
        let mut out = self.base.clone();
        out.extend(self.fiber.iter().map(|(_, a)| a.clone()));
        out
    }

    pub fn dimension(&self) -> usize {
        self.base.len() + self.fiber.len()
    }
}

/// Numeric point of a jet space: one value per coordinate, in the order of
/// [`JetCoordinateSystem::coordinates`].
#[derive(Clone, Debug)]
pub struct JetPoint<F> {
    system: Arc<JetCoordinateSystem>,
    values: Vec<F>,
}

impl<F: Real> JetPoint<F> {
    pub fn new(system: Arc<JetCoordinateSystem>, values: Vec<F>) -> Result<Self, JetError> {
        if values.len() != system.dimension() {
            return Err(JetError::DimensionMismatch {
                got: values.len(),
                expected: system.dimension(),
            });
        }
        Ok(JetPoint { system, values })
    }

    pub fn system(&self) -> &Arc<JetCoordinateSystem> {
        &self.system
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn get(&self, sym: &Symbol) -> Option<F> {
        let coords = self.system.coordinates();
        coords
            .iter()
            .position(|c| c == sym)
            .map(|i| self.values[i])
    }

    pub fn binding(&self) -> Binding<F> {
        let mut b = Binding::new();
        for (sym, &v) in self.system.coordinates().iter().zip(&self.values) {
            b.set_symbol(sym.clone(), v);
        }
        b
    }
}

/// An expression hosted on a jet coordinate system: free variables are
/// checked to be coordinates of the system or declared parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct JetFunction {
    system: Arc<JetCoordinateSystem>,
    expr: Expr,
    params: BTreeSet<Symbol>,
}

impl JetFunction {
    pub fn new(system: Arc<JetCoordinateSystem>, expr: Expr) -> Result<Self, JetError> {
        Self::with_params(system, expr, BTreeSet::new())
    }

    pub fn with_params(
        system: Arc<JetCoordinateSystem>,
        expr: Expr,
        params: BTreeSet<Symbol>,
    ) -> Result<Self, JetError> {
        for v in expr.free_vars() {
            if !system.contains(&v) && !params.contains(&v) {
                return Err(JetError::UnknownSymbol(v.as_str().to_owned()));
            }
        }
        Ok(JetFunction {
            system,
            expr,
            params,
        })
    }

    pub fn system(&self) -> &Arc<JetCoordinateSystem> {
        &self.system
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn params(&self) -> &BTreeSet<Symbol> {
        &self.params
    }

    /// Rehost on a system of a different order over the same base. Fails
    /// when the expression uses coordinates beyond the target order.
    pub fn promote(&self, order: usize) -> Result<JetFunction, JetError> {
        let host = self.system.with_order(order);
        Self::with_params(host, self.expr.clone(), self.params.clone())
    }

    /// Total derivative along base slot `a`:
    /// `D_a = d/dt^a + sum_I z_(I+(a)) d/dz_I`, hosted one order higher.
    pub fn total_derivative(&self, slot: usize) -> Result<JetFunction, JetError> {
        let nu = self.system.nu();
        if slot >= nu {
            return Err(JetError::SlotOutOfRange { slot, nu });
        }
        let host = self.system.with_order(self.system.order() + 1);
        let free = self.expr.free_vars();
        let mut terms = Vec::new();
        let dx = self.expr.diff(&self.system.base()[slot]);
        if !dx.is_zero() {
            terms.push(dx);
        }
        for (idx, alias) in self.system.fiber() {
            if !free.contains(alias) {
                continue;
            }
            let de = self.expr.diff(alias);
            if de.is_zero() {
                continue;
            }
            terms.push(Expr::product(vec![host.z_var(&idx.plus_unit(slot)), de]));
        }
        let expr = Expr::sum(terms);
        Self::with_params(host, expr, self.params.clone())
    }

    /// Iterated total derivative `D^I`, highest slot first. The slot order
    /// is a convention only: total derivatives commute.
    pub fn apply_di(&self, idx: &MultiIndex) -> Result<JetFunction, JetError> {
        if idx.len() != self.system.nu() {
            return Err(JetError::ArityMismatch {
                got: idx.len(),
                expected: self.system.nu(),
            });
        }
        let mut f = self.clone();
        for slot in (0..idx.len()).rev() {
            for _ in 0..idx.slots()[slot] {
                f = f.total_derivative(slot)?;
            }
        }
        Ok(f)
    }
}

/// Which algebraic form of the prolongation coefficients to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaRoute {
    /// `D^I(eta - xi^a z_(a)) + xi^a z_(I+(a))`; relies on cancellation of
    /// the over-order terms and verifies it happened.
    Direct,
    /// `D^I(eta) - sum_{J<I} binom(I,J) (d^(I-J) xi^a) z_(J+(a))`.
    Leibniz,
}

/// Projectable vector field `xi^a(t) d/dt^a + eta(t, z) d/dz` on the line
/// bundle. `xi` must not involve fiber coordinates; `eta` may involve `z`
/// but no higher jet coordinate. Extra symbols listed in `params` are
/// treated as constants throughout.
#[derive(Clone, Debug)]
pub struct BundleVectorField {
    system: Arc<JetCoordinateSystem>,
    xi: Vec<Expr>,
    eta: Expr,
    params: BTreeSet<Symbol>,
}

impl BundleVectorField {
    pub fn new(
        system: Arc<JetCoordinateSystem>,
        xi: Vec<Expr>,
        eta: Expr,
    ) -> Result<Self, JetError> {
        Self::with_params(system, xi, eta, BTreeSet::new())
    }

    pub fn with_params(
        system: Arc<JetCoordinateSystem>,
        xi: Vec<Expr>,
        eta: Expr,
        params: BTreeSet<Symbol>,
    ) -> Result<Self, JetError> {
        let system = system.with_order(0);
        assert_eq!(xi.len(), system.nu(), "one xi component per base slot");
        for x in &xi {
            for v in x.free_vars() {
                if !system.base().contains(&v) && !params.contains(&v) {
                    return Err(JetError::UnknownSymbol(v.as_str().to_owned()));
                }
            }
        }
        for v in eta.free_vars() {
            if !system.contains(&v) && !params.contains(&v) {
                return Err(JetError::UnknownSymbol(v.as_str().to_owned()));
            }
        }
        Ok(BundleVectorField {
            system,
            xi,
            eta,
            params,
        })
    }

    pub fn system(&self) -> &Arc<JetCoordinateSystem> {
        &self.system
    }

    pub fn xi(&self) -> &[Expr] {
        &self.xi
    }

    pub fn eta(&self) -> &Expr {
        &self.eta
    }

    /// Prolongation coefficient for the fiber coordinate `z_I`, hosted on
    /// the order-`|I|` system.
    pub fn eta_component(&self, idx: &MultiIndex, route: EtaRoute) -> Result<JetFunction, JetError> {
        if idx.len() != self.system.nu() {
            return Err(JetError::ArityMismatch {
                got: idx.len(),
                expected: self.system.nu(),
            });
        }
        let order = idx.order() as usize;
        let raw = match route {
            EtaRoute::Direct => self.eta_direct(idx)?,
            EtaRoute::Leibniz => self.eta_leibniz(idx)?,
        };
        // one simplify pass over the whole tree: identical subtrees in the
        // cancelling terms stay identical, so the over-order coordinates
        // collapse exactly
        let expr = raw.simplify();
        let host = self.system.with_order(order);
        for v in expr.free_vars() {
            if let Some(vi) = host.with_order(order + 1).index_of(&v) {
                if vi.order() as usize > order {
                    return Err(JetError::TruncationLeak {
                        component: format!("eta_{:?}", idx.slots()),
                        coordinate: v.as_str().to_owned(),
                        order: vi.order(),
                    });
                }
            }
        }
        JetFunction::with_params(host, expr, self.params.clone())
    }

    fn eta_direct(&self, idx: &MultiIndex) -> Result<Expr, JetError> {
        let nu = self.system.nu();
        // G = eta - xi^a z_(a), hosted at order one
        let sys1 = self.system.with_order(1);
        let mut terms = vec![self.eta.clone()];
        for a in 0..nu {
            if self.xi[a].is_zero() {
                continue;
            }
            terms.push(Expr::neg(Expr::product(vec![
                self.xi[a].clone(),
                sys1.z_var(&MultiIndex::unit(nu, a)),
            ])));
        }
        let g = JetFunction::with_params(sys1, Expr::sum(terms), self.params.clone())?;
        let dg = g.apply_di(idx)?;
        // correction xi^a z_(I+(a)) against the top-order term of D^I
        let top = dg.system();
        let mut out = vec![dg.expr().clone()];
        for a in 0..nu {
            if self.xi[a].is_zero() {
                continue;
            }
            out.push(Expr::product(vec![
                self.xi[a].clone(),
                top.z_var(&idx.plus_unit(a)),
            ]));
        }
        Ok(Expr::sum(out))
    }

    fn eta_leibniz(&self, idx: &MultiIndex) -> Result<Expr, JetError> {
        let nu = self.system.nu();
        let eta = JetFunction::with_params(
            self.system.clone(),
            self.eta.clone(),
            self.params.clone(),
        )?;
        let host = self.system.with_order(idx.order() as usize);
        let mut terms = vec![eta.apply_di(idx)?.expr().clone()];
        for lower in idx.sub_indices() {
            if &lower == idx {
                continue;
            }
            let gap = idx.minus(&lower).expect("sub-index");
            let coeff = idx.binom(&lower);
            for a in 0..nu {
                if self.xi[a].is_zero() {
                    continue;
                }
                // plain partials: xi has no jet coordinates
                let mut dxi = self.xi[a].clone();
                for slot in (0..nu).rev() {
                    for _ in 0..gap.slots()[slot] {
                        dxi = dxi.diff(&self.system.base()[slot]);
                    }
                }
                if dxi.is_zero() {
                    continue;
                }
                terms.push(Expr::neg(Expr::product(vec![
                    Expr::int(coeff as i64),
                    dxi,
                    host.z_var(&lower.plus_unit(a)),
                ])));
            }
        }
        Ok(Expr::sum(terms))
    }

    /// Full prolonged vector field up to order `r`: one component per
    /// coordinate of the order-`r` system, base components first.
    pub fn prolong(&self, r: usize, route: EtaRoute) -> Result<Vec<(Symbol, JetFunction)>, JetError> {
        let host = self.system.with_order(r);
        let mut out = Vec::with_capacity(host.dimension());
        for (a, sym) in host.base().iter().enumerate() {
            let f = JetFunction::with_params(host.clone(), self.xi[a].clone(), self.params.clone())?;
            out.push((sym.clone(), f));
        }
        for (idx, alias) in host.fiber() {
            let f = self.eta_component(idx, route)?.promote(r)?;
            out.push((alias.clone(), f));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn curves(m: usize, order: usize) -> Arc<JetCoordinateSystem> {
        JetCoordinateSystem::for_curves(m, order)
    }

    #[test]
    fn order_enumeration_is_first_slot_heavy() {
        let got = MultiIndex::of_order(3, 2);
        let want: Vec<MultiIndex> = [
            [2, 0, 0],
            [1, 1, 0],
            [1, 0, 1],
            [0, 2, 0],
            [0, 1, 1],
            [0, 0, 2],
        ]
        .iter()
        .map(|c| MultiIndex::new(c.to_vec()))
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn sub_index_machinery() {
        let idx = MultiIndex::new(vec![1, 1]);
        let subs = idx.sub_indices();
        assert_eq!(subs.len(), 4);
        assert!(subs.contains(&MultiIndex::zero(2)));
        assert!(subs.contains(&idx));
        assert_eq!(
            MultiIndex::new(vec![2, 1]).binom(&MultiIndex::new(vec![1, 0])),
            2
        );
        assert_eq!(
            MultiIndex::new(vec![3, 2]).binom(&MultiIndex::new(vec![2, 1])),
            6
        );
        assert_eq!(
            MultiIndex::new(vec![2, 1]).minus(&MultiIndex::new(vec![1, 1])),
            Some(MultiIndex::new(vec![1, 0]))
        );
        assert_eq!(
            MultiIndex::new(vec![0, 1]).minus(&MultiIndex::new(vec![1, 0])),
            None
        );
    }

    #[test]
    fn curve_system_dimensions() {
        assert_eq!(curves(1, 2).dimension(), 13);
        assert_eq!(curves(2, 2).dimension(), 26);
        assert_eq!(curves(3, 2).dimension(), 43);
        assert_eq!(curves(1, 0).dimension(), 4);
        assert_eq!(curves(1, 1).dimension(), 7);
        // aliases are exactly as documented
        let sys = curves(1, 2);
        let names: Vec<String> = sys
            .coordinates()
            .iter()
            .map(|s| s.as_str().to_owned())
            .collect();
        assert_eq!(
            names,
            [
                "x", "y1", "dy1", "z", "z_x", "z_y1", "z_dy1", "z_xx", "z_xy1", "z_xdy1",
                "z_y1y1", "z_y1dy1", "z_dy1dy1"
            ]
        );
    }

    #[test]
    fn shared_systems_are_cached() {
        let a = curves(2, 1);
        let b = curves(2, 1);
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn total_derivative_of_contact_combination() {
        // base t, one dimension: D_t(z - t*z_t) = -t*z_tt
        let sys = JetCoordinateSystem::shared(&["t"], 1);
        let f = JetFunction::new(sys, parse("z - t*z_t").unwrap()).unwrap();
        let df = f.total_derivative(0).unwrap();
        assert_eq!(df.expr().simplify(), parse("-(t*z_tt)").unwrap().simplify());
    }

    #[test]
    fn total_derivative_product_rule() {
        let sys = JetCoordinateSystem::shared(&["x"], 1);
        let f = JetFunction::new(sys, parse("z_x*x").unwrap()).unwrap();
        let df = f.total_derivative(0).unwrap();
        assert_eq!(df.expr().simplify(), parse("z_x + x*z_xx").unwrap().simplify());
    }

    #[test]
    fn vertical_field_prolongs_to_all_jets() {
        // xi = 0, eta = z: the prolongation is z_I in every slot
        let sys = curves(1, 0);
        let nu = sys.nu();
        let field =
            BundleVectorField::new(sys.clone(), vec![Expr::int(0); nu], parse("z").unwrap())
                .unwrap();
        let host = sys.with_order(2);
        for (idx, alias) in host.fiber() {
            for route in [EtaRoute::Direct, EtaRoute::Leibniz] {
                let c = field.eta_component(idx, route).unwrap();
                assert_eq!(
                    c.expr(),
                    &Expr::var_symbol(alias.clone()),
                    "component for {:?} via {:?}",
                    idx.slots(),
                    route
                );
            }
        }
    }

    #[test]
    fn translation_field_prolongs_to_zero() {
        let sys = JetCoordinateSystem::shared(&["t"], 0);
        let field =
            BundleVectorField::new(sys.clone(), vec![Expr::int(1)], Expr::int(0)).unwrap();
        for k in 1..=3u32 {
            let idx = MultiIndex::new(vec![k]);
            for route in [EtaRoute::Direct, EtaRoute::Leibniz] {
                let c = field.eta_component(&idx, route).unwrap();
                assert!(c.expr().is_zero(), "order {k} via {route:?}");
            }
        }
    }

    #[test]
    fn scaling_base_field_cancels_exactly() {
        // xi = t, eta = z: eta_(1) = D(z - t z_t) + t z_tt = z_t - z_t = 0...
        // here eta = z gives eta_(1) = z_t - z_t - t z_tt + t z_tt + ... trace:
        // D(z - t*z_t) = z_t - z_t - t*z_tt, plus t*z_tt leaves 0; with eta = z
        // the first term is D(z) = z_t, so eta_(1) = z_t - z_t - t z_tt + t z_tt = 0
        let sys = JetCoordinateSystem::shared(&["t"], 0);
        let field =
            BundleVectorField::new(sys.clone(), vec![parse("t").unwrap()], parse("z").unwrap())
                .unwrap();
        let c = field
            .eta_component(&MultiIndex::new(vec![1]), EtaRoute::Direct)
            .unwrap();
        assert_eq!(c.expr().simplify(), Expr::int(0));
    }

    #[test]
    fn validation_rejects_jet_coordinates_in_field_data() {
        let sys = curves(1, 0);
        let nu = sys.nu();
        let err = BundleVectorField::new(sys.clone(), vec![Expr::int(0); nu], parse("z_x").unwrap());
        assert!(matches!(err, Err(JetError::UnknownSymbol(s)) if s == "z_x"));
        let err = BundleVectorField::new(
            sys.clone(),
            vec![parse("z").unwrap(), Expr::int(0), Expr::int(0)],
            Expr::int(0),
        );
        assert!(matches!(err, Err(JetError::UnknownSymbol(s)) if s == "z"));
    }

    fn random_poly(rng: &mut StdRng, vars: &[Symbol], max_terms: usize) -> Expr {
        let n = rng.gen_range(1..=max_terms);
        let mut terms = Vec::new();
        for _ in 0..n {
            let mut factors = vec![Expr::int(rng.gen_range(-3i64..=3))];
            for v in vars {
                let p = rng.gen_range(0..=2);
                if p > 0 {
                    factors.push(Expr::pow_int(Expr::var_symbol(v.clone()), p));
                }
            }
            terms.push(Expr::product(factors));
        }
        Expr::sum(terms)
    }

    #[test]
    fn direct_and_leibniz_routes_agree() {
        let mut rng = StdRng::seed_from_u64(31);
        for nu in 1..=3usize {
            let names: Vec<String> = (0..nu).map(|i| format!("t{i}")).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let sys = JetCoordinateSystem::shared(&refs, 0);
            let base: Vec<Symbol> = sys.base().to_vec();
            let mut eta_vars = base.clone();
            eta_vars.push(Symbol::new("z"));
            for _ in 0..6 {
                let xi: Vec<Expr> = (0..nu).map(|_| random_poly(&mut rng, &base, 2)).collect();
                let eta = random_poly(&mut rng, &eta_vars, 2);
                let field = BundleVectorField::new(sys.clone(), xi, eta).unwrap();
                for k in 1..=2u32 {
                    for idx in MultiIndex::of_order(nu, k) {
                        let d = field.eta_component(&idx, EtaRoute::Direct).unwrap();
                        let l = field.eta_component(&idx, EtaRoute::Leibniz).unwrap();
                        // numeric agreement at random bindings
                        for _ in 0..10 {
                            let mut b = Binding::new();
                            for c in d.system().coordinates() {
                                b.set_symbol(c, rng.gen_range(-1.5..1.5));
                            }
                            let dv: f64 = d.expr().eval(&b).unwrap();
                            let lv: f64 = l.expr().eval(&b).unwrap();
                            assert!(
                                (dv - lv).abs() <= 1e-9 * (1.0 + dv.abs()),
                                "routes disagree at {:?}: {} vs {}",
                                idx.slots(),
                                dv,
                                lv
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn total_derivatives_commute() {
        let mut rng = StdRng::seed_from_u64(7);
        let sys = JetCoordinateSystem::shared(&["s", "t"], 1);
        let mut vars: Vec<Symbol> = sys.base().to_vec();
        vars.extend(sys.fiber().iter().map(|(_, a)| a.clone()));
        for _ in 0..5 {
            let f = JetFunction::new(sys.clone(), random_poly(&mut rng, &vars, 3)).unwrap();
            let ab = f.total_derivative(0).unwrap().total_derivative(1).unwrap();
            let ba = f.total_derivative(1).unwrap().total_derivative(0).unwrap();
            for _ in 0..10 {
                let mut b = Binding::new();
                for c in ab.system().coordinates() {
                    b.set_symbol(c, rng.gen_range(-1.5..1.5));
                }
                let u: f64 = ab.expr().eval(&b).unwrap();
                let v: f64 = ba.expr().eval(&b).unwrap();
                assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn jet_point_roundtrip() {
        let sys = curves(1, 1);
        let vals: Vec<f64> = (0..sys.dimension()).map(|i| i as f64).collect();
        let p = JetPoint::new(sys.clone(), vals).unwrap();
        assert_eq!(p.get(&Symbol::new("x")), Some(0.0));
        assert_eq!(p.get(&Symbol::new("z")), Some(3.0));
        let b = p.binding();
        assert_eq!(b.get(&Symbol::new("z_dy1")), Some(6.0));
        assert!(JetPoint::<f64>::new(sys, vec![0.0]).is_err());
    }
}
