//! Constraint grammar:
//!
//! ```text
//! constraint := expr cmp expr
//! expr       := term (('+' | '-') term)*
//! term       := factor (('*' | '/') factor)*
//! factor     := INT | IDENT | '(' expr ')'
//! cmp        := '<' | '<=' | '>' | '>=' | '==' | '!='
//! ```

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
            Comparison::Eq => "==",
            Comparison::Ne => "!=",
        }
    }

    pub fn apply(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
            Comparison::Eq => lhs == rhs,
            Comparison::Ne => lhs != rhs,
        }
    }
}

/// Arithmetic expression tree. Identifiers carry the option slot once bound
/// against a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Ident {
        name: String,
        slot: Option<usize>,
    },
    Binary {
        op: ArithOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("missing comparison operator")]
    MissingComparison,
    #[error("more than one comparison operator (second at column {column})")]
    ChainedComparison { column: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unresolvable identifier `{0}`")]
    Unresolved(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

impl Expr {
    pub fn eval(
        &self,
        lookup: &impl Fn(&str, Option<usize>) -> Option<i64>,
    ) -> Result<i64, EvalError> {
        match self {
            Expr::Int(v) => Ok(*v),
            Expr::Ident { name, slot } => {
                lookup(name, *slot).ok_or_else(|| EvalError::Unresolved(name.clone()))
            }
            Expr::Binary { op, lhs, rhs } => {
                let a = lhs.eval(lookup)?;
                let b = rhs.eval(lookup)?;
                let out = match op {
                    ArithOp::Add => a.checked_add(b),
                    ArithOp::Sub => a.checked_sub(b),
                    ArithOp::Mul => a.checked_mul(b),
                    ArithOp::Div => {
                        if b == 0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a.checked_div(b)
                    }
                };
                out.ok_or(EvalError::Overflow)
            }
        }
    }

    fn visit_idents<'a>(&'a self, out: &mut Vec<(&'a str, Option<usize>)>) {
        match self {
            Expr::Int(_) => {}
            Expr::Ident { name, slot } => out.push((name, *slot)),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.visit_idents(out);
                rhs.visit_idents(out);
            }
        }
    }

    fn bind(&mut self, index: &HashMap<String, usize>) -> Result<(), String> {
        match self {
            Expr::Int(_) => Ok(()),
            Expr::Ident { name, slot } => {
                *slot = Some(*index.get(name.as_str()).ok_or_else(|| name.clone())?);
                Ok(())
            }
            Expr::Binary { lhs, rhs, .. } => {
                lhs.bind(index)?;
                rhs.bind(index)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            _ => u8::MAX,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Ident { name, .. } => f.write_str(name),
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // Left associativity: an equal-precedence right operand needs parens.
                if rhs.precedence() <= p {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

/// A single comparison between two arithmetic expressions, in satisfied form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintExpr {
    pub lhs: Expr,
    pub cmp: Comparison,
    pub rhs: Expr,
}

impl ConstraintExpr {
    pub fn eval_with(
        &self,
        lookup: &impl Fn(&str, Option<usize>) -> Option<i64>,
    ) -> Result<bool, EvalError> {
        Ok(self
            .cmp
            .apply(self.lhs.eval(lookup)?, self.rhs.eval(lookup)?))
    }

    /// Evaluates against a slot-indexed integer assignment. Requires bound identifiers.
    pub fn holds(&self, values: &[i64]) -> Result<bool, EvalError> {
        self.eval_with(&|_, slot| slot.and_then(|s| values.get(s).copied()))
    }

    /// Identifier names in order of appearance (duplicates kept).
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.lhs.visit_idents(&mut out);
        self.rhs.visit_idents(&mut out);
        out.into_iter().map(|(n, _)| n).collect()
    }

    /// Distinct bound slots, ascending.
    pub fn slots(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.lhs.visit_idents(&mut out);
        self.rhs.visit_idents(&mut out);
        let mut slots: Vec<usize> = out.into_iter().filter_map(|(_, s)| s).collect();
        slots.sort_unstable();
        slots.dedup();
        slots
    }

    /// Resolves identifiers to option slots. Returns the first unknown name.
    pub fn bind(&mut self, index: &HashMap<String, usize>) -> Result<(), String> {
        self.lhs.bind(index)?;
        self.rhs.bind(index)
    }
}

impl fmt::Display for ConstraintExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.cmp.symbol(), self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Int(i64),
    Ident(String),
    Op(ArithOp),
    Cmp(Comparison),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let column = i + 1;
        let syntax = |message: String| ParseError::Syntax { column, message };
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let lit = &text[start..i];
                let v = lit
                    .parse::<i64>()
                    .map_err(|_| syntax(format!("integer literal `{lit}` out of range")))?;
                tokens.push((Token::Int(v), column));
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((Token::Ident(text[start..i].to_string()), column));
            }
            b'+' | b'-' | b'*' | b'/' => {
                let op = match c {
                    b'+' => ArithOp::Add,
                    b'-' => ArithOp::Sub,
                    b'*' => ArithOp::Mul,
                    _ => ArithOp::Div,
                };
                tokens.push((Token::Op(op), column));
                i += 1;
            }
            b'(' => {
                tokens.push((Token::LParen, column));
                i += 1;
            }
            b')' => {
                tokens.push((Token::RParen, column));
                i += 1;
            }
            b'<' | b'>' | b'=' | b'!' => {
                let eq_next = bytes.get(i + 1) == Some(&b'=');
                let cmp = match (c, eq_next) {
                    (b'<', true) => Comparison::Le,
                    (b'<', false) => Comparison::Lt,
                    (b'>', true) => Comparison::Ge,
                    (b'>', false) => Comparison::Gt,
                    (b'=', true) => Comparison::Eq,
                    (b'!', true) => Comparison::Ne,
                    _ => return Err(syntax(format!("unexpected `{}`", c as char))),
                };
                tokens.push((Token::Cmp(cmp), column));
                i += if eq_next { 2 } else { 1 };
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(format!("unexpected character `{ch}`")));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end_column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.end_column)
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            column: self.column(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ (ArithOp::Add | ArithOp::Sub))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(Token::Op(op @ (ArithOp::Mul | ArithOp::Div))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Token::Int(v)) => {
                self.pos += 1;
                Ok(Expr::Int(v))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                Ok(Expr::Ident { name, slot: None })
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.error("expected `)`")),
                }
            }
            Some(_) => Err(self.error("expected a number, identifier or `(`")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

/// Parses `expr cmp expr` with standard precedence and left associativity.
pub fn parse_constraint(text: &str) -> Result<ConstraintExpr, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end_column: text.len() + 1,
    };
    if !parser
        .tokens
        .iter()
        .any(|(t, _)| matches!(t, Token::Cmp(_)))
    {
        return Err(ParseError::MissingComparison);
    }
    let lhs = parser.expr()?;
    let cmp = match parser.peek() {
        Some(Token::Cmp(c)) => *c,
        _ => return Err(parser.error("expected a comparison operator")),
    };
    parser.pos += 1;
    let rhs = parser.expr()?;
    match parser.peek() {
        None => Ok(ConstraintExpr { lhs, cmp, rhs }),
        Some(Token::Cmp(_)) => Err(ParseError::ChainedComparison {
            column: parser.column(),
        }),
        Some(_) => Err(parser.error("unexpected trailing input")),
    }
}
