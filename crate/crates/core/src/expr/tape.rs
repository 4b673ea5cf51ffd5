//! Postfix compilation of expression trees for repeated evaluation.
//!
//! The prover evaluates the same goal over millions of boxes; walking the
//! `Arc` tree each time is slow, so hot paths compile once and reuse a
//! caller-owned stack.

use super::{EvalError, Expr, Node};
use crate::interval::{Interval, IntervalBox};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(u32),
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
}

#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    depth: usize,
}

impl Tape {
    pub fn compile(e: &Expr) -> Tape {
        let mut ops = Vec::new();
        emit(e, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Tape {
            ops,
            depth: max_depth,
        }
    }

    /// Maximum stack depth needed by the evaluators.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.eval_with(x, &mut Vec::with_capacity(self.depth))
    }

    pub fn eval_with(&self, x: &[f64], stack: &mut Vec<f64>) -> Result<f64, EvalError> {
        stack.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Var(i) => *x.get(i).ok_or(EvalError::Dimension)?,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => {
                            if b == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            a / b
                        }
                        Op::Min => a.min(b),
                        _ => a.max(b),
                    }
                }
                _ => {
                    let a = stack.pop().unwrap();
                    match *op {
                        Op::Neg => -a,
                        Op::Pow(n) => a.powi(n as i32),
                        Op::Sin => a.sin(),
                        Op::Cos => a.cos(),
                        Op::Tanh => a.tanh(),
                        Op::Exp => a.exp(),
                        Op::Sqrt => {
                            if a < 0.0 {
                                return Err(EvalError::SqrtOfNegative);
                            }
                            a.sqrt()
                        }
                        _ => a.abs(),
                    }
                }
            };
            stack.push(v);
        }
        let r = stack.pop().unwrap();
        if r.is_finite() {
            Ok(r)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn eval_interval(&self, b: &IntervalBox) -> Result<Interval, EvalError> {
        self.eval_interval_with(b, &mut Vec::with_capacity(self.depth))
    }

    pub fn eval_interval_with(
        &self,
        bx: &IntervalBox,
        stack: &mut Vec<Interval>,
    ) -> Result<Interval, EvalError> {
        stack.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => Interval::point(c),
                Op::Var(i) => *bx.0.get(i).ok_or(EvalError::Dimension)?,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    match *op {
                        Op::Add => a.try_add(b)?,
                        Op::Sub => a.try_sub(b)?,
                        Op::Mul => a.try_mul(b)?,
                        Op::Div => a.try_div(b)?,
                        Op::Min => a.min(b),
                        _ => a.max(b),
                    }
                }
                _ => {
                    let a = stack.pop().unwrap();
                    match *op {
                        Op::Neg => -a,
                        Op::Pow(n) => a.powi(n)?,
                        Op::Sin => a.sin(),
                        Op::Cos => a.cos(),
                        Op::Tanh => a.tanh(),
                        Op::Exp => a.exp()?,
                        Op::Sqrt => a.sqrt()?,
                        _ => a.abs(),
                    }
                }
            };
            stack.push(v);
        }
        Ok(stack.pop().unwrap())
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    let bin = |a: &Expr, b: &Expr, op: Op, ops: &mut Vec<Op>| {
        emit(a, ops);
        emit(b, ops);
        ops.push(op);
    };
    match e.node() {
        Node::Const(c) => ops.push(Op::Const(*c)),
        Node::Var(i) => ops.push(Op::Var(*i)),
        Node::Add(a, b) => bin(a, b, Op::Add, ops),
        Node::Sub(a, b) => bin(a, b, Op::Sub, ops),
        Node::Mul(a, b) => bin(a, b, Op::Mul, ops),
        Node::Div(a, b) => bin(a, b, Op::Div, ops),
        Node::Min(a, b) => bin(a, b, Op::Min, ops),
        Node::Max(a, b) => bin(a, b, Op::Max, ops),
        Node::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Node::Pow(a, n) => {
            emit(a, ops);
            ops.push(Op::Pow(*n));
        }
        Node::Sin(a) => {
            emit(a, ops);
            ops.push(Op::Sin);
        }
        Node::Cos(a) => {
            emit(a, ops);
            ops.push(Op::Cos);
        }
        Node::Tanh(a) => {
            emit(a, ops);
            ops.push(Op::Tanh);
        }
        Node::Exp(a) => {
            emit(a, ops);
            ops.push(Op::Exp);
        }
        Node::Sqrt(a) => {
            emit(a, ops);
            ops.push(Op::Sqrt);
        }
        Node::Abs(a) => {
            emit(a, ops);
            ops.push(Op::Abs);
        }
    }
}
