use super::tape::{Tape, TapeBuilder, Var};
use crate::error::{Error, Result};

/// A scalar expression tree over indexed inputs.
///
/// `Func` lets callers name arbitrary functions; only the supported set is
/// accepted by [`record`], so an unknown name fails before any tape exists.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Input(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Func(String, Vec<Expr>),
}

impl Expr {
    pub fn input(k: usize) -> Self {
        Expr::Input(k)
    }

    pub fn func(name: &str, args: Vec<Expr>) -> Self {
        Expr::Func(name.to_string(), args)
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Expr::Input(k) if *k >= n => Err(Error::Dimension(format!(
                "expression refers to input {k} but only {n} are given"
            ))),
            Expr::Input(_) | Expr::Const(_) => Ok(()),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.check(n)?;
                b.check(n)
            }
            Expr::Neg(a) => a.check(n),
            Expr::Func(name, args) => {
                let arity = match name.as_str() {
                    "exp" | "log" | "sqrt" | "square" => 1,
                    "min" | "max" => 2,
                    _ => return Err(Error::UnsupportedOp(name.clone())),
                };
                if args.len() != arity {
                    return Err(Error::UnsupportedOp(format!(
                        "{name} with {} arguments",
                        args.len()
                    )));
                }
                args.iter().try_for_each(|a| a.check(n))
            }
        }
    }

    fn emit(&self, b: &mut TapeBuilder) -> Var {
        match self {
            Expr::Input(k) => b.input(*k),
            Expr::Const(c) => b.constant(*c),
            Expr::Add(x, y) => {
                let (x, y) = (x.emit(b), y.emit(b));
                b.add(x, y)
            }
            Expr::Sub(x, y) => {
                let (x, y) = (x.emit(b), y.emit(b));
                b.sub(x, y)
            }
            Expr::Mul(x, y) => {
                let (x, y) = (x.emit(b), y.emit(b));
                b.mul(x, y)
            }
            Expr::Div(x, y) => {
                let (x, y) = (x.emit(b), y.emit(b));
                b.div(x, y)
            }
            Expr::Pow(x, y) => {
                if let Expr::Const(c) = **y {
                    let x = x.emit(b);
                    return b.powf(x, c);
                }
                let (x, y) = (x.emit(b), y.emit(b));
                b.pow(x, y)
            }
            Expr::Neg(x) => {
                let x = x.emit(b);
                b.neg(x)
            }
            Expr::Func(name, args) => {
                let a: Vec<Var> = args.iter().map(|e| e.emit(b)).collect();
                match name.as_str() {
                    "exp" => b.exp(a[0]),
                    "log" => b.ln(a[0]),
                    "sqrt" => b.powf(a[0], 0.5),
                    "square" => b.mul(a[0], a[0]),
                    "min" => b.min(a[0], a[1]),
                    "max" => b.max(a[0], a[1]),
                    _ => unreachable!("names validated in check"),
                }
            }
        }
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $v:ident) => {
        impl std::ops::$tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$v(Box::new(self), Box::new(rhs))
            }
        }
    };
}
binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// Records `f` at `x0`. Unsupported function names are rejected by name.
pub fn record(f: &Expr, x0: &[f64]) -> Result<Tape> {
    f.check(x0.len())?;
    let mut b = TapeBuilder::new(x0);
    let out = f.emit(&mut b);
    Ok(b.finish(out))
}
