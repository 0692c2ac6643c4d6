//! Exact symbolic expression trees.
//!
//! Constants are exact rationals; floating point enters only at evaluation
//! time. Trees are immutable values: every operation returns a fresh tree.
//! The normalizing constructors ([`Expr::sum`], [`Expr::product`], ...) fold
//! constants, drop additive zeros and multiplicative ones, and keep a few
//! structural invariants (no nested sums inside sums, a single leading
//! constant per product, no double negation) so that printing followed by
//! parsing reproduces a tree exactly.
//!
//! [`Expr::simplify`] layers like-term collection on top. It promises value
//! preservation at every binding, not a canonical form; tests that compare
//! symbolic results do so numerically at random bindings.

mod compile;
mod parse;

pub use compile::{Program, VarTable};
pub use parse::parse;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use crate::Real;

/// Interned variable name. Equality and ordering follow the name itself;
/// interning only makes clones and comparisons cheap.
#[derive(Clone, Debug)]
pub struct Symbol(Arc<str>);

static INTERNER: OnceLock<Mutex<HashSet<Arc<str>>>> = OnceLock::new();

impl Symbol {
    pub fn new(name: impl AsRef<str>) -> Symbol {
        let name = name.as_ref();
        let mut table = INTERNER
            .get_or_init(|| Mutex::new(HashSet::new()))
            .lock()
            .expect("symbol interner poisoned");
        if let Some(existing) = table.get(name) {
            return Symbol(existing.clone());
        }
        let arc: Arc<str> = Arc::from(name);
        table.insert(arc.clone());
        Symbol(arc)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}
impl Eq for Symbol {}
impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.as_ref().cmp(other.0.as_ref())
    }
}
impl std::hash::Hash for Symbol {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.as_ref().hash(state)
    }
}
impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Unary elementary functions available in the expression language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Symbolic expression. Build through the associated constructors (or
/// [`parse`]); they maintain the structural invariants the printer and the
/// simplifier rely on.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Const(BigRational),
    Var(Symbol),
    /// Two or more terms, none of them a `Sum`, at most one constant term
    /// (kept last, never zero).
    Sum(Vec<Expr>),
    /// Two or more factors, none of them a `Product` or `Neg`, at most one
    /// constant factor (kept first, never 0, 1, or -1).
    Product(Vec<Expr>),
    /// Exponent is never 0 or 1; constant bases with integer exponents are
    /// folded away on construction.
    Pow(Box<Expr>, BigRational),
    /// Inner expression is never a constant, a `Neg`, or a `Div`.
    Neg(Box<Expr>),
    /// Denominator is never a nonzero constant.
    Div(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Name -> value assignment used for numeric evaluation.
#[derive(Clone, Debug, Default)]
pub struct Binding<F> {
    values: HashMap<Symbol, F>,
}

impl<F: Copy> Binding<F> {
    pub fn new() -> Self {
        Binding {
            values: HashMap::new(),
        }
    }

    pub fn set(&mut self, name: impl AsRef<str>, value: F) -> &mut Self {
        self.values.insert(Symbol::new(name), value);
        self
    }

    pub fn set_symbol(&mut self, symbol: Symbol, value: F) -> &mut Self {
        self.values.insert(symbol, value);
        self
    }

    pub fn with(mut self, name: impl AsRef<str>, value: F) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, symbol: &Symbol) -> Option<F> {
        self.values.get(symbol).copied()
    }

    pub fn merge(&mut self, other: &Binding<F>) -> &mut Self {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), *v);
        }
        self
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.values.keys()
    }
}

impl<'a, F: Copy> FromIterator<(&'a str, F)> for Binding<F> {
    fn from_iter<T: IntoIterator<Item = (&'a str, F)>>(iter: T) -> Self {
        let mut b = Binding::new();
        for (k, v) in iter {
            b.set(k, v);
        }
        b
    }
}

/// Parse failure with one-based source position.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("parse error at line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

/// Numeric evaluation failure.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {reason} in `{subexpr}`")]
    Domain { reason: String, subexpr: String },
}

fn big(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Largest integer exponent folded exactly on construction; beyond this the
/// power node is kept and evaluated in floating point.
const FOLD_EXP_LIMIT: i64 = 4096;

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::Const(big(n))
    }

    /// Exact rational constant `p/q`. Panics when `q == 0`.
    pub fn rational(p: i64, q: i64) -> Expr {
        assert!(q != 0, "rational constant with zero denominator");
        Expr::Const(BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    pub fn constant(c: BigRational) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: impl AsRef<str>) -> Expr {
        Expr::Var(Symbol::new(name))
    }

    pub fn var_symbol(symbol: Symbol) -> Expr {
        Expr::Var(symbol)
    }

    /// Normalized sum: flattens nested sums, folds constants into a single
    /// trailing term, drops zeros, never yields a one-element `Sum`.
    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut acc = BigRational::zero();
        let mut rest: Vec<Expr> = Vec::with_capacity(terms.len());
        let mut stack: Vec<Expr> = terms;
        stack.reverse();
        while let Some(t) = stack.pop() {
            match t {
                Expr::Const(c) => acc += c,
                Expr::Sum(inner) => {
                    for e in inner.into_iter().rev() {
                        stack.push(e);
                    }
                }
                other => rest.push(other),
            }
        }
        if !acc.is_zero() {
            rest.push(Expr::Const(acc));
        }
        match rest.len() {
            0 => Expr::int(0),
            1 => rest.pop().expect("one element"),
            _ => Expr::Sum(rest),
        }
    }

    /// Normalized product: flattens nested products, hoists signs out of
    /// `Neg` factors, folds constants into a single leading factor.
    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut coeff = BigRational::one();
        let mut rest: Vec<Expr> = Vec::with_capacity(factors.len());
        let mut stack: Vec<Expr> = factors;
        stack.reverse();
        while let Some(f) = stack.pop() {
            match f {
                Expr::Const(c) => coeff *= c,
                Expr::Neg(inner) => {
                    coeff = -coeff;
                    stack.push(*inner);
                }
                Expr::Product(inner) => {
                    for e in inner.into_iter().rev() {
                        stack.push(e);
                    }
                }
                other => rest.push(other),
            }
        }
        if coeff.is_zero() {
            return Expr::int(0);
        }
        let wrap = |mut rest: Vec<Expr>| match rest.len() {
            0 => Expr::int(1),
            1 => rest.pop().expect("one element"),
            _ => Expr::Product(rest),
        };
        if rest.is_empty() {
            Expr::Const(coeff)
        } else if coeff.is_one() {
            wrap(rest)
        } else if coeff == -BigRational::one() {
            Expr::neg(wrap(rest))
        } else {
            let mut all = Vec::with_capacity(rest.len() + 1);
            all.push(Expr::Const(coeff));
            all.extend(rest);
            Expr::Product(all)
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::product(vec![a, b])
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, b])
    }

    /// Normalized negation; folds into constants, products, and quotient
    /// numerators so double negations cannot arise.
    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            Expr::Product(fs) => {
                if matches!(fs.first(), Some(Expr::Const(_))) {
                    let mut fs = fs;
                    let head = match fs.remove(0) {
                        Expr::Const(c) => -c,
                        _ => unreachable!("checked constant head"),
                    };
                    let mut all = vec![Expr::Const(head)];
                    all.extend(fs);
                    Expr::product(all)
                } else {
                    Expr::Neg(Box::new(Expr::Product(fs)))
                }
            }
            Expr::Div(a, b) => Expr::div(Expr::neg(*a), *b),
            other => Expr::Neg(Box::new(other)),
        }
    }

    /// Normalized quotient. Division by a nonzero constant becomes
    /// multiplication by its reciprocal; division by literal zero is kept
    /// and surfaces as an evaluation-time domain error.
    pub fn div(a: Expr, b: Expr) -> Expr {
        match b {
            Expr::Const(c) if !c.is_zero() => {
                Expr::product(vec![Expr::Const(c.recip()), a])
            }
            Expr::Neg(inner) => Expr::div(Expr::neg(a), *inner),
            b => {
                // 0/e folds to 0, but 0/0 must stay an eval-time error
                let zero_den = matches!(&b, Expr::Const(c) if c.is_zero());
                if a.is_zero() && !zero_den {
                    return Expr::int(0);
                }
                Expr::Div(Box::new(a), Box::new(b))
            }
        }
    }

    pub fn pow_int(base: Expr, exp: i64) -> Expr {
        Expr::pow(base, big(exp))
    }

    /// Normalized power with exact rational exponent. Exponents 0 and 1
    /// collapse, constant bases fold under integer exponents, and integer
    /// powers of powers multiply out.
    pub fn pow(base: Expr, exp: BigRational) -> Expr {
        if exp.is_zero() {
            return Expr::int(1);
        }
        if exp.is_one() {
            return base;
        }
        let int_exp = if exp.is_integer() {
            exp.to_integer().to_i64()
        } else {
            None
        };
        match base {
            Expr::Const(c) => {
                if let Some(k) = int_exp {
                    if c.is_zero() && k < 0 {
                        return Expr::Pow(Box::new(Expr::Const(c)), exp);
                    }
                    if k.unsigned_abs() <= FOLD_EXP_LIMIT as u64 {
                        return Expr::Const(Pow::pow(&c, k as i32));
                    }
                    return Expr::Pow(Box::new(Expr::Const(c)), exp);
                }
                if c.is_zero() && exp.is_positive() {
                    return Expr::int(0);
                }
                if c.is_one() {
                    return Expr::int(1);
                }
                Expr::Pow(Box::new(Expr::Const(c)), exp)
            }
            Expr::Pow(inner, inner_exp) if int_exp.is_some() => {
                Expr::pow(*inner, inner_exp * exp)
            }
            Expr::Neg(inner) => match int_exp {
                Some(k) if k % 2 == 0 => Expr::pow(*inner, exp),
                Some(_) => Expr::neg(Expr::pow(*inner, exp)),
                None => Expr::Pow(Box::new(Expr::Neg(inner)), exp),
            },
            other => Expr::Pow(Box::new(other), exp),
        }
    }

    pub fn call(func: Func, arg: Expr) -> Expr {
        if let Expr::Const(c) = &arg {
            match func {
                Func::Exp if c.is_zero() => return Expr::int(1),
                Func::Log if c.is_one() => return Expr::int(0),
                Func::Sin if c.is_zero() => return Expr::int(0),
                Func::Cos if c.is_zero() => return Expr::int(1),
                Func::Sqrt if !c.is_negative() => {
                    if let Some(root) = exact_sqrt(c) {
                        return Expr::Const(root);
                    }
                }
                _ => {}
            }
        }
        Expr::Call(func, Box::new(arg))
    }

    pub fn exp(arg: Expr) -> Expr {
        Expr::call(Func::Exp, arg)
    }
    pub fn log(arg: Expr) -> Expr {
        Expr::call(Func::Log, arg)
    }
    pub fn sin(arg: Expr) -> Expr {
        Expr::call(Func::Sin, arg)
    }
    pub fn cos(arg: Expr) -> Expr {
        Expr::call(Func::Cos, arg)
    }
    pub fn sqrt(arg: Expr) -> Expr {
        Expr::call(Func::Sqrt, arg)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_one())
    }

    /// Exact partial derivative with respect to `var`; all other variables
    /// are treated as constants.
    pub fn diff(&self, var: &Symbol) -> Expr {
        match self {
            Expr::Const(_) => Expr::int(0),
            Expr::Var(v) => {
                if v == var {
                    Expr::int(1)
                } else {
                    Expr::int(0)
                }
            }
            Expr::Sum(ts) => Expr::sum(ts.iter().map(|t| t.diff(var)).collect()),
            Expr::Product(fs) => {
                let mut terms = Vec::with_capacity(fs.len());
                for i in 0..fs.len() {
                    let di = fs[i].diff(var);
                    if di.is_zero() {
                        continue;
                    }
                    let mut factors = Vec::with_capacity(fs.len());
                    factors.extend(fs[..i].iter().cloned());
                    factors.push(di);
                    factors.extend(fs[i + 1..].iter().cloned());
                    terms.push(Expr::product(factors));
                }
                Expr::sum(terms)
            }
            Expr::Pow(base, exp) => {
                let db = base.diff(var);
                if db.is_zero() {
                    return Expr::int(0);
                }
                Expr::product(vec![
                    Expr::Const(exp.clone()),
                    Expr::pow((**base).clone(), exp - BigRational::one()),
                    db,
                ])
            }
            Expr::Neg(inner) => Expr::neg(inner.diff(var)),
            Expr::Div(a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                if db.is_zero() {
                    return Expr::div(da, (**b).clone());
                }
                let num = Expr::sum(vec![
                    Expr::product(vec![da, (**b).clone()]),
                    Expr::neg(Expr::product(vec![(**a).clone(), db])),
                ]);
                Expr::div(num, Expr::pow_int((**b).clone(), 2))
            }
            Expr::Call(func, arg) => {
                let du = arg.diff(var);
                if du.is_zero() {
                    return Expr::int(0);
                }
                let u = (**arg).clone();
                match func {
                    Func::Exp => Expr::product(vec![Expr::exp(u), du]),
                    Func::Log => Expr::div(du, u),
                    Func::Sin => Expr::product(vec![Expr::cos(u), du]),
                    Func::Cos => Expr::neg(Expr::product(vec![Expr::sin(u), du])),
                    Func::Sqrt => {
                        Expr::div(du, Expr::product(vec![Expr::int(2), Expr::sqrt(u)]))
                    }
                }
            }
        }
    }

    /// Numeric evaluation under `binding`. Every variable must be bound;
    /// log/sqrt/division domain violations name the offending subtree.
    pub fn eval<F: Real>(&self, binding: &Binding<F>) -> Result<F, EvalError> {
        match self {
            Expr::Const(c) => Ok(rational_to(c)),
            Expr::Var(v) => binding
                .get(v)
                .ok_or_else(|| EvalError::Unbound(v.as_str().to_owned())),
            Expr::Sum(ts) => {
                let mut acc = ts[0].eval(binding)?;
                for t in &ts[1..] {
                    acc = acc + t.eval(binding)?;
                }
                Ok(acc)
            }
            Expr::Product(fs) => {
                let mut acc = fs[0].eval(binding)?;
                for f in &fs[1..] {
                    acc = acc * f.eval(binding)?;
                }
                Ok(acc)
            }
            Expr::Pow(base, exp) => {
                let b = base.eval(binding)?;
                apply_pow(b, exp, || self.to_string())
            }
            Expr::Neg(inner) => Ok(-inner.eval(binding)?),
            Expr::Div(a, b) => {
                let num = a.eval(binding)?;
                let den = b.eval(binding)?;
                if den.is_zero() {
                    return Err(EvalError::Domain {
                        reason: "division by zero".to_owned(),
                        subexpr: self.to_string(),
                    });
                }
                Ok(num / den)
            }
            Expr::Call(func, arg) => {
                let v = arg.eval(binding)?;
                apply_func(*func, v, || self.to_string())
            }
        }
    }

    /// Variables occurring in the tree, in name order.
    pub fn free_vars(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Sum(es) | Expr::Product(es) => {
                for e in es {
                    e.collect_vars(out);
                }
            }
            Expr::Pow(b, _) => b.collect_vars(out),
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, a) => a.collect_vars(out),
        }
    }

    /// Simultaneous substitution of variables by expressions, rebuilt
    /// through the normalizing constructors.
    pub fn subst(&self, map: &HashMap<Symbol, Expr>) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Sum(ts) => Expr::sum(ts.iter().map(|t| t.subst(map)).collect()),
            Expr::Product(fs) => Expr::product(fs.iter().map(|f| f.subst(map)).collect()),
            Expr::Pow(b, e) => Expr::pow(b.subst(map), e.clone()),
            Expr::Neg(e) => Expr::neg(e.subst(map)),
            Expr::Div(a, b) => Expr::div(a.subst(map), b.subst(map)),
            Expr::Call(f, a) => Expr::call(*f, a.subst(map)),
        }
    }

    /// Value-preserving cleanup: constant folding, zero/one absorption, and
    /// like-term collection inside sums and products. Not a canonical form.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Sum(ts) => {
                let ts: Vec<Expr> = ts.iter().map(|t| t.simplify()).collect();
                collect_terms(ts)
            }
            Expr::Product(fs) => {
                let fs: Vec<Expr> = fs.iter().map(|f| f.simplify()).collect();
                let (c, key) = decompose(&Expr::product(fs));
                recompose(c, key)
            }
            Expr::Pow(b, e) => Expr::pow(b.simplify(), e.clone()),
            Expr::Neg(e) => Expr::neg(e.simplify()),
            Expr::Div(a, b) => Expr::div(a.simplify(), b.simplify()),
            Expr::Call(f, a) => Expr::call(*f, a.simplify()),
        }
    }
}

/// One additive term split into a rational coefficient and a multiset of
/// (base, exponent) factors; the factor list is sorted so that commuted
/// products compare equal.
fn decompose(term: &Expr) -> (BigRational, Vec<(Expr, BigRational)>) {
    fn push_factor(factors: &mut Vec<(Expr, BigRational)>, base: Expr, exp: BigRational) {
        factors.push((base, exp));
    }

    let mut coeff = BigRational::one();
    let mut factors: Vec<(Expr, BigRational)> = Vec::new();
    let mut stack = vec![(term.clone(), false)];
    while let Some((e, negate)) = stack.pop() {
        if negate {
            coeff = -coeff;
        }
        match e {
            Expr::Const(c) => coeff *= c,
            Expr::Neg(inner) => stack.push((*inner, true)),
            Expr::Product(fs) => {
                for f in fs {
                    stack.push((f, false));
                }
            }
            Expr::Pow(b, q) => push_factor(&mut factors, *b, q),
            other => push_factor(&mut factors, other, BigRational::one()),
        }
    }
    factors.sort_by(|a, b| a.0.cmp(&b.0));
    // merge equal bases; exponents that cancel to zero drop the factor
    let mut merged: Vec<(Expr, BigRational)> = Vec::with_capacity(factors.len());
    for (base, exp) in factors {
        match merged.last_mut() {
            Some((b, q)) if *b == base => *q += exp,
            _ => merged.push((base, exp)),
        }
    }
    merged.retain(|(_, q)| !q.is_zero());
    (coeff, merged)
}

fn recompose(coeff: BigRational, factors: Vec<(Expr, BigRational)>) -> Expr {
    let mut parts: Vec<Expr> = vec![Expr::Const(coeff)];
    for (base, exp) in factors {
        parts.push(Expr::pow(base, exp));
    }
    Expr::product(parts)
}

/// Like-term collection over a flattened list of addends.
fn collect_terms(terms: Vec<Expr>) -> Expr {
    let flat = match Expr::sum(terms) {
        Expr::Sum(ts) => ts,
        single => return single,
    };
    let mut order: Vec<Vec<(Expr, BigRational)>> = Vec::new();
    let mut coeffs: Vec<BigRational> = Vec::new();
    let mut index: HashMap<Vec<(Expr, BigRational)>, usize> = HashMap::new();
    for term in &flat {
        let (c, key) = decompose(term);
        match index.get(&key) {
            Some(&i) => coeffs[i] += c,
            None => {
                index.insert(key.clone(), order.len());
                order.push(key);
                coeffs.push(c);
            }
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for (key, c) in order.into_iter().zip(coeffs) {
        if c.is_zero() {
            continue;
        }
        out.push(recompose(c, key));
    }
    Expr::sum(out)
}

fn exact_sqrt(c: &BigRational) -> Option<BigRational> {
    let num = c.numer();
    let den = c.denom();
    let rn = num.sqrt();
    let rd = den.sqrt();
    if &(&rn * &rn) == num && &(&rd * &rd) == den {
        Some(BigRational::new(rn, rd))
    } else {
        None
    }
}

/// Rational constant to floating point. Falls back to a scaled conversion
/// when numerator or denominator overflow `f64` on their own.
pub fn rational_to<F: Real>(c: &BigRational) -> F {
    if let Some(v) = c.to_f64() {
        if v.is_finite() {
            return F::of(v);
        }
    }
    // shift numerator and denominator down together; at most 512 bits each
    // survive, which f64 represents without overflow
    let nbits = c.numer().bits() as i64;
    let dbits = c.denom().bits() as i64;
    let shift = (nbits.max(dbits) - 512).max(0) as usize;
    let n = (c.numer() >> shift).to_f64().unwrap_or(f64::NAN);
    let d = (c.denom() >> shift).to_f64().unwrap_or(f64::NAN);
    F::of(n / d)
}

pub(crate) fn apply_pow<F: Real>(
    base: F,
    exp: &BigRational,
    subexpr: impl FnOnce() -> String,
) -> Result<F, EvalError> {
    if exp.is_integer() {
        if let Some(k) = exp.to_integer().to_i64() {
            if base.is_zero() && k < 0 {
                return Err(EvalError::Domain {
                    reason: "zero raised to a negative power".to_owned(),
                    subexpr: subexpr(),
                });
            }
            if let Ok(k32) = i32::try_from(k) {
                return Ok(base.powi(k32));
            }
        }
    }
    let e: F = rational_to(exp);
    if base < F::zero() {
        return Err(EvalError::Domain {
            reason: "negative base under a fractional exponent".to_owned(),
            subexpr: subexpr(),
        });
    }
    if base.is_zero() && e < F::zero() {
        return Err(EvalError::Domain {
            reason: "zero raised to a negative power".to_owned(),
            subexpr: subexpr(),
        });
    }
    Ok(base.powf(e))
}

pub(crate) fn apply_func<F: Real>(
    func: Func,
    v: F,
    subexpr: impl FnOnce() -> String,
) -> Result<F, EvalError> {
    match func {
        Func::Exp => Ok(v.exp()),
        Func::Log => {
            if v <= F::zero() {
                Err(EvalError::Domain {
                    reason: format!("log of a non-positive value {v}"),
                    subexpr: subexpr(),
                })
            } else {
                Ok(v.ln())
            }
        }
        Func::Sin => Ok(v.sin()),
        Func::Cos => Ok(v.cos()),
        Func::Sqrt => {
            if v < F::zero() {
                Err(EvalError::Domain {
                    reason: format!("square root of a negative value {v}"),
                    subexpr: subexpr(),
                })
            } else {
                Ok(v.sqrt())
            }
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::sum(vec![self, rhs])
    }
}
impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sum(vec![self, Expr::neg(rhs)])
    }
}
impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::product(vec![self, rhs])
    }
}
impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}
impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

// Printing. The output reparses to the identical tree; precedence and the
// constant conventions of the constructors decide where parentheses go.

fn fmt_const(c: &BigRational, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if c.is_integer() {
        write!(f, "{}", c.numer())
    } else {
        write!(f, "{}/{}", c.numer(), c.denom())
    }
}

/// Splits `t` into its positive counterpart when the term carries a leading
/// minus sign, so sums can print `a - b` instead of `a + -b`.
fn negated_form(t: &Expr) -> Option<Expr> {
    match t {
        Expr::Neg(inner) => Some((**inner).clone()),
        Expr::Const(c) if c.is_negative() => Some(Expr::Const(-c.clone())),
        Expr::Product(fs) => match fs.first() {
            Some(Expr::Const(c)) if c.is_negative() => {
                let mut parts = vec![Expr::Const(-c.clone())];
                parts.extend(fs[1..].iter().cloned());
                Some(Expr::product(parts))
            }
            _ => None,
        },
        _ => None,
    }
}

fn is_pow_safe_base(e: &Expr) -> bool {
    match e {
        Expr::Var(_) | Expr::Call(_, _) => true,
        Expr::Const(c) => !c.is_negative() && c.is_integer(),
        _ => false,
    }
}

fn fmt_factor(e: &Expr, first: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let parens = match e {
        Expr::Sum(_) => true,
        Expr::Div(_, _) => !first,
        _ => false,
    };
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => fmt_const(c, f),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Sum(ts) => {
                write!(f, "{}", ts[0])?;
                for t in &ts[1..] {
                    match negated_form(t) {
                        Some(pos) => write!(f, " - {pos}")?,
                        None => write!(f, " + {t}")?,
                    }
                }
                Ok(())
            }
            Expr::Product(fs) => {
                fmt_factor(&fs[0], true, f)?;
                for x in &fs[1..] {
                    write!(f, "*")?;
                    fmt_factor(x, false, f)?;
                }
                Ok(())
            }
            Expr::Pow(base, exp) => {
                if is_pow_safe_base(base) {
                    write!(f, "{base}")?;
                } else {
                    write!(f, "({base})")?;
                }
                if exp.is_integer() {
                    write!(f, "^{}", exp.numer())
                } else {
                    write!(f, "^({}/{})", exp.numer(), exp.denom())
                }
            }
            Expr::Neg(inner) => match &**inner {
                Expr::Sum(_) | Expr::Product(_) | Expr::Div(_, _) => write!(f, "-({inner})"),
                _ => write!(f, "-{inner}"),
            },
            Expr::Div(a, b) => {
                match &**a {
                    Expr::Sum(_) | Expr::Product(_) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                write!(f, "/")?;
                match &**b {
                    Expr::Var(_) | Expr::Call(_, _) => write!(f, "{b}"),
                    Expr::Const(c) if !c.is_negative() && c.is_integer() => write!(f, "{b}"),
                    Expr::Pow(base, _) if is_pow_safe_base(base) => write!(f, "{b}"),
                    _ => write!(f, "({b})"),
                }
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::var("x")
    }
    fn y() -> Expr {
        Expr::var("y")
    }

    #[test]
    fn parse_builds_expected_structure() {
        let e = parse("1/2*(dy1^2 + dy2^2)").unwrap();
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        assert_eq!(
            e,
            Expr::Product(vec![
                Expr::Const(half),
                Expr::Sum(vec![
                    Expr::pow_int(Expr::var("dy1"), 2),
                    Expr::pow_int(Expr::var("dy2"), 2),
                ]),
            ])
        );
    }

    #[test]
    fn constructors_fold_trivialities() {
        assert_eq!(parse("0*x + y1").unwrap(), Expr::var("y1"));
        assert_eq!(parse("x^1").unwrap(), x());
        assert_eq!(parse("x^0").unwrap(), Expr::int(1));
        assert_eq!(parse("x - x").unwrap().simplify(), Expr::int(0));
        assert_eq!(parse("2^10").unwrap(), Expr::int(1024));
        assert_eq!(parse("sqrt(9/4)").unwrap(), Expr::rational(3, 2));
    }

    #[test]
    fn division_by_zero_is_not_folded_away() {
        // 0/0 must survive construction and fail at evaluation
        let e = Expr::div(Expr::int(0), Expr::int(0));
        assert!(matches!(
            e.eval::<f64>(&Binding::new()),
            Err(EvalError::Domain { .. })
        ));
        // a zero numerator over anything else folds
        assert_eq!(Expr::div(Expr::int(0), x()), Expr::int(0));
    }

    #[test]
    fn differentiation_basics() {
        let sx = Symbol::new("x");
        assert_eq!(
            Expr::pow_int(x(), 2).diff(&sx),
            Expr::product(vec![Expr::int(2), x()])
        );
        assert_eq!(x().diff(&sx), Expr::int(1));
        assert_eq!(y().diff(&sx), Expr::int(0));
        // product rule
        let e = Expr::product(vec![x(), y()]).diff(&sx);
        assert_eq!(e, y());
        // chain rule through a call
        let e = Expr::sin(Expr::pow_int(x(), 2)).diff(&sx);
        let expected = Expr::product(vec![
            Expr::cos(Expr::pow_int(x(), 2)),
            Expr::product(vec![Expr::int(2), x()]),
        ]);
        assert_eq!(e, expected);
    }

    #[test]
    fn eval_matches_hand_values() {
        let b: Binding<f64> = [("x", 2.0), ("y", 3.0)].into_iter().collect();
        assert_eq!(parse("x^2 + 3").unwrap().eval(&b).unwrap(), 7.0);
        assert_eq!(parse("1/2").unwrap().eval(&b).unwrap(), 0.5);
        assert_eq!(parse("x*y - y").unwrap().eval(&b).unwrap(), 3.0);
        assert_eq!(parse("2^(-1)").unwrap().eval(&b).unwrap(), 0.5);
        assert_eq!(parse("x^(1/2)").unwrap().eval(&b).unwrap(), 2f64.sqrt());
        assert!(matches!(
            parse("log(0)").unwrap().eval(&b),
            Err(EvalError::Domain { .. })
        ));
        assert!(matches!(
            parse("sqrt(0 - x)").unwrap().eval(&b),
            Err(EvalError::Domain { .. })
        ));
        assert!(matches!(
            parse("z + 1").unwrap().eval(&b),
            Err(EvalError::Unbound(_))
        ));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse("2 +").unwrap_err();
        assert_eq!((err.line, err.col), (1, 4));
        let err = parse("foo(x)").unwrap_err();
        assert_eq!((err.line, err.col), (1, 1));
        assert!(err.message.contains("unknown function"));
        let err = parse("1. + x").unwrap_err();
        assert!(err.message.contains("malformed number"));
        let err = parse("x + $").unwrap_err();
        assert_eq!((err.line, err.col), (1, 5));
        let err = parse("x y").unwrap_err();
        assert!(err.message.contains("trailing"));
        let err = parse("x^y").unwrap_err();
        assert!(err.message.contains("exponent"));
    }

    #[test]
    fn printing_reparses_to_the_same_tree() {
        let cases = [
            "x + y",
            "x - y",
            "2*x*y",
            "-(x*y)",
            "x/y",
            "x/(y*y)",
            "(x + y)/(x - y)",
            "2*(x/y)",
            "x^2/y^2",
            "x^(1/2)",
            "x^(-3/2)",
            "exp(x) + log(y)",
            "1/2*x - 3/4",
            "sin(x)*cos(y)",
            "x/y/y",
        ];
        for s in cases {
            let e = parse(s).unwrap();
            let printed = e.to_string();
            let back = parse(&printed).unwrap_or_else(|err| {
                panic!("reparse of `{printed}` (from `{s}`) failed: {err}")
            });
            assert_eq!(back, e, "round trip through `{printed}` from `{s}`");
        }
    }

    #[test]
    fn simplify_collects_like_terms() {
        let e = parse("x*x").unwrap().simplify();
        assert_eq!(e, Expr::pow_int(x(), 2));
        let e = parse("x + x").unwrap().simplify();
        assert_eq!(e, Expr::product(vec![Expr::int(2), x()]));
        let e = parse("2*x + y - 2*x - y").unwrap().simplify();
        assert_eq!(e, Expr::int(0));
        // no distribution: a sum factor stays a factor, cancelling only
        // against terms that carry the identical subtree
        let e = parse("3*(x + y) - (x + y)").unwrap().simplify();
        assert_eq!(
            e,
            Expr::product(vec![Expr::int(2), Expr::sum(vec![x(), y()])])
        );
        let e = parse("x*y - y*x").unwrap().simplify();
        assert_eq!(e, Expr::int(0));
        let e = parse("x^2*x^(-2)").unwrap().simplify();
        assert_eq!(e, Expr::int(1));
    }

    #[test]
    fn subst_rebuilds_through_constructors() {
        let e = parse("x + y").unwrap();
        let mut map = HashMap::new();
        map.insert(Symbol::new("x"), Expr::pow_int(Expr::var("z"), 2));
        assert_eq!(e.subst(&map), parse("z^2 + y").unwrap());
        // substituting a negation must not create Sum-in-Sum
        map.insert(Symbol::new("y"), Expr::neg(Expr::var("z")));
        assert_eq!(e.subst(&map), parse("z^2 - z").unwrap());
    }

    #[test]
    fn compiled_program_matches_tree_eval() {
        let e = parse("(x + y)^3/(x^2 + 1) - sin(x*y)*exp(y/7) + x^(1/2)").unwrap();
        let table: VarTable = e.free_vars().iter().collect();
        let prog: Program<f64> = Program::compile(&e, &table).unwrap();
        let mut slots = vec![0.0; table.len()];
        for i in 0..50 {
            let xv = 0.1 + (i as f64) * 0.37;
            let yv = -2.0 + (i as f64) * 0.11;
            let b: Binding<f64> = [("x", xv), ("y", yv)].into_iter().collect();
            for (j, s) in table.symbols().iter().enumerate() {
                slots[j] = b.get(s).unwrap();
            }
            let tree = e.eval(&b).unwrap();
            let compiled = prog.run(&slots).unwrap();
            assert_eq!(tree.to_bits(), compiled.to_bits(), "at x={xv}, y={yv}");
        }
    }

    #[test]
    fn compile_reports_unbound_variables() {
        let e = parse("x + q").unwrap();
        let mut table = VarTable::new();
        table.slot(&Symbol::new("x"));
        assert!(matches!(
            Program::<f64>::compile(&e, &table),
            Err(EvalError::Unbound(name)) if name == "q"
        ));
    }

    #[test]
    fn rational_to_handles_huge_values() {
        let big = BigRational::new(BigInt::from(10).pow(400u32), BigInt::from(1));
        let v: f64 = rational_to(&big);
        assert!(v.is_infinite() && v > 0.0);
        let ratio = BigRational::new(BigInt::from(10).pow(400u32), BigInt::from(10).pow(399u32));
        let v: f64 = rational_to(&ratio);
        assert!((v - 10.0).abs() < 1e-9);
        let tiny = BigRational::new(BigInt::from(1), BigInt::from(10).pow(400u32));
        let v: f64 = rational_to(&tiny);
        assert!(v.abs() < 1e-300);
    }
}
