//! Compilation of expression trees into flat stack programs for repeated
//! numeric evaluation.
//!
//! A [`Program`] evaluates against a slot array instead of a hash-map
//! binding, so batch evaluation (many expressions, many points) avoids both
//! tree traversal and symbol hashing. Sums and products fold left in the
//! same order as tree evaluation, so a compiled program reproduces
//! [`Expr::eval`](super::Expr::eval) bit for bit.

use super::{apply_func, apply_pow, rational_to, EvalError, Expr, Func, Symbol};
use crate::Real;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use std::collections::HashMap;

/// Assignment of symbols to slot indices in an evaluation buffer.
#[derive(Clone, Debug, Default)]
pub struct VarTable {
    slots: HashMap<Symbol, u32>,
    order: Vec<Symbol>,
}

impl VarTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Slot for `sym`, inserting at the next free index when unseen.
    pub fn slot(&mut self, sym: &Symbol) -> u32 {
        if let Some(&i) = self.slots.get(sym) {
            return i;
        }
        let i = u32::try_from(self.order.len()).expect("slot count exceeds u32");
        self.slots.insert(sym.clone(), i);
        self.order.push(sym.clone());
        i
    }

    pub fn get(&self, sym: &Symbol) -> Option<u32> {
        self.slots.get(sym).copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Symbols in slot order.
    pub fn symbols(&self) -> &[Symbol] {
        &self.order
    }
}

impl<'a> FromIterator<&'a Symbol> for VarTable {
    fn from_iter<I: IntoIterator<Item = &'a Symbol>>(iter: I) -> Self {
        let mut t = VarTable::new();
        for s in iter {
            t.slot(s);
        }
        t
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Const(F),
    Load(u32),
    AddN(u32),
    MulN(u32),
    Neg,
    Div,
    PowInt(i32),
    /// Exponent outside the `i32` fast path; kept exact.
    PowBig(Box<BigRational>),
    Func(Func),
}

/// A compiled expression: evaluate with [`Program::run`] against a slot
/// array laid out by the [`VarTable`] it was compiled with.
#[derive(Clone, Debug)]
pub struct Program<F> {
    ops: Vec<Op<F>>,
    peak: usize,
    n_slots: usize,
    source: String,
}

impl<F: Real> Program<F> {
    /// Compile `expr` against `table`. Every free variable must already
    /// have a slot; unbound variables error here rather than at run time.
    pub fn compile(expr: &Expr, table: &VarTable) -> Result<Self, EvalError> {
        let mut ops = Vec::new();
        emit(expr, table, &mut ops)?;
        let mut depth = 0usize;
        let mut peak = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::AddN(n) | Op::MulN(n) => depth = depth - *n as usize + 1,
                Op::Div => depth -= 1,
                Op::Neg | Op::PowInt(_) | Op::PowBig(_) | Op::Func(_) => {}
            }
            peak = peak.max(depth);
        }
        debug_assert_eq!(depth, 1);
        Ok(Program {
            ops,
            peak,
            n_slots: table.len(),
            source: expr.to_string(),
        })
    }

    /// Evaluate against `slots`; `slots[i]` is the value of the symbol the
    /// table assigned slot `i`. Domain errors name the whole source
    /// expression since the offending subtree is gone after compilation.
    pub fn run(&self, slots: &[F]) -> Result<F, EvalError> {
        let mut stack: Vec<F> = Vec::with_capacity(self.peak);
        self.run_with(slots, &mut stack)
    }

    /// Like [`run`](Self::run) but reusing a caller-owned stack buffer, for
    /// callers evaluating many programs in a loop.
    pub fn run_with(&self, slots: &[F], stack: &mut Vec<F>) -> Result<F, EvalError> {
        assert!(
            slots.len() >= self.n_slots,
            "slot buffer holds {} values but the program needs {}",
            slots.len(),
            self.n_slots
        );
        stack.clear();
        stack.reserve(self.peak);
        for op in &self.ops {
            match op {
                Op::Const(c) => stack.push(*c),
                Op::Load(i) => stack.push(slots[*i as usize]),
                Op::AddN(n) => {
                    let start = stack.len() - *n as usize;
                    let mut acc = stack[start];
                    for v in &stack[start + 1..] {
                        acc = acc + *v;
                    }
                    stack.truncate(start);
                    stack.push(acc);
                }
                Op::MulN(n) => {
                    let start = stack.len() - *n as usize;
                    let mut acc = stack[start];
                    for v in &stack[start + 1..] {
                        acc = acc * *v;
                    }
                    stack.truncate(start);
                    stack.push(acc);
                }
                Op::Neg => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = -*v;
                }
                Op::Div => {
                    let den = stack.pop().expect("stack underflow");
                    let num = stack.last_mut().expect("stack underflow");
                    if den.is_zero() {
                        return Err(EvalError::Domain {
                            reason: "division by zero".to_owned(),
                            subexpr: self.source.clone(),
                        });
                    }
                    *num = *num / den;
                }
                Op::PowInt(k) => {
                    let v = stack.last_mut().expect("stack underflow");
                    if v.is_zero() && *k < 0 {
                        return Err(EvalError::Domain {
                            reason: "zero raised to a negative power".to_owned(),
                            subexpr: self.source.clone(),
                        });
                    }
                    *v = v.powi(*k);
                }
                Op::PowBig(exp) => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = apply_pow(*v, exp, || self.source.clone())?;
                }
                Op::Func(f) => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = apply_func(*f, *v, || self.source.clone())?;
                }
            }
        }
        debug_assert_eq!(stack.len(), 1);
        Ok(stack[0])
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }
}

fn emit<F: Real>(expr: &Expr, table: &VarTable, ops: &mut Vec<Op<F>>) -> Result<(), EvalError> {
    match expr {
        Expr::Const(c) => ops.push(Op::Const(rational_to(c))),
        Expr::Var(v) => {
            let slot = table
                .get(v)
                .ok_or_else(|| EvalError::Unbound(v.as_str().to_owned()))?;
            ops.push(Op::Load(slot));
        }
        Expr::Sum(ts) => {
            for t in ts {
                emit(t, table, ops)?;
            }
            ops.push(Op::AddN(ts.len() as u32));
        }
        Expr::Product(fs) => {
            for f in fs {
                emit(f, table, ops)?;
            }
            ops.push(Op::MulN(fs.len() as u32));
        }
        Expr::Pow(base, exp) => {
            emit(base, table, ops)?;
            // same dispatch as tree evaluation: i32 integer exponents take
            // powi, everything else goes through the exact-rational path
            let as_i32 = exp
                .is_integer()
                .then(|| exp.to_integer().to_i64())
                .flatten()
                .and_then(|k| i32::try_from(k).ok());
            match as_i32 {
                Some(k) => ops.push(Op::PowInt(k)),
                None => ops.push(Op::PowBig(Box::new(exp.clone()))),
            }
        }
        Expr::Neg(inner) => {
            emit(inner, table, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Div(a, b) => {
            emit(a, table, ops)?;
            emit(b, table, ops)?;
            ops.push(Op::Div);
        }
        Expr::Call(f, arg) => {
            emit(arg, table, ops)?;
            ops.push(Op::Func(*f));
        }
    }
    Ok(())
}
