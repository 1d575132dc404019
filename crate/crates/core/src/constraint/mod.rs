//! Arithmetic comparison constraints over option names: parsing, evaluation
//! and repair of violated configurations.

mod expr;
mod solve;

pub use expr::{
    parse_constraint, ArithOp, Comparison, ConstraintExpr, EvalError, Expr, ParseError,
};
pub use solve::{check, find_completion, repair, RepairError};

pub(crate) use solve::repair_at;
