use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Abs,
    Sqrt,
    Min,
    Max,
    Sign,
    Pow,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            "sign" => Func::Sign,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sign => "sign",
            Func::Pow => "pow",
        }
    }

    /// Accepted argument counts as `(min, max)`.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Func::Min | Func::Max => (2, usize::MAX),
            Func::Pow => (2, 2),
            _ => (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    E,
    Pi,
}

impl Constant {
    pub fn value(self) -> f64 {
        match self {
            Constant::E => std::f64::consts::E,
            Constant::Pi => std::f64::consts::PI,
        }
    }
}

/// A variable reference. Indices are zero-based; printed names are one-based
/// (`x1` is `Var::X(0)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
    D(usize),
    U(usize),
    Aux { index: usize, name: Arc<str> },
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => f.write_str("t"),
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::D(i) => write!(f, "d{}", i + 1),
            Var::U(i) => write!(f, "u{}", i + 1),
            Var::Aux { name, .. } => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Const(Constant),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

// Tree constructors; `Expr::add(a, b)` builds a node rather than adding values.
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Pow, a, b)
    }

    pub fn call(func: Func, args: Vec<Expr>) -> Expr {
        Expr::Call(func, args)
    }

    /// Replaces variables in a single simultaneous pass. Replacement
    /// expressions are inserted as-is and never re-substituted.
    pub fn substitute(&self, map: &dyn Fn(&Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Num(_) | Expr::Const(_) => self.clone(),
            Expr::Var(v) => map(v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(map))),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.substitute(map), b.substitute(map)),
            Expr::Call(func, args) => {
                Expr::Call(*func, args.iter().map(|a| a.substitute(map)).collect())
            }
        }
    }

    /// Visits every variable occurrence.
    pub fn for_each_var(&self, visit: &mut dyn FnMut(&Var)) {
        match self {
            Expr::Num(_) | Expr::Const(_) => {}
            Expr::Var(v) => visit(v),
            Expr::Neg(a) => a.for_each_var(visit),
            Expr::Bin(_, a, b) => {
                a.for_each_var(visit);
                b.for_each_var(visit);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_var(visit)),
        }
    }

    pub fn depends_on(&self, pred: &dyn Fn(&Var) -> bool) -> bool {
        let mut hit = false;
        self.for_each_var(&mut |v| hit |= pred(v));
        hit
    }

    // Binding strength used by the printer: 1 = additive, 2 = multiplicative,
    // 3 = unary minus, 4 = power, 5 = atom.
    fn level(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            _ => 5,
        }
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    let a = v.abs();
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        f.write_str("-")?;
    }
    // Shortest round-trip digits; plain notation in the everyday range.
    if a == 0.0 || (1e-4..1e16).contains(&a) {
        write!(f, "{a}")
    } else {
        write!(f, "{a:?}")
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write_num(f, *v),
            Expr::Const(Constant::E) => f.write_str("e"),
            Expr::Const(Constant::Pi) => f.write_str("pi"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_wrapped(f, a, a.level() < 3)
            }
            Expr::Bin(op, a, b) => {
                let (wrap_a, wrap_b) = match op {
                    // right operands of equal precedence keep their parentheses so
                    // the printed text parses back to the same tree
                    BinOp::Add | BinOp::Sub => (false, b.level() <= 1),
                    BinOp::Mul => (a.level() < 2, b.level() <= 2),
                    BinOp::Div => (a.level() < 2, b.level() <= 2),
                    // the base must be an atom; the exponent is a unary operand
                    BinOp::Pow => (a.level() < 5, b.level() < 3),
                };
                write_wrapped(f, a, wrap_a)?;
                f.write_str(op.symbol())?;
                write_wrapped(f, b, wrap_b)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
