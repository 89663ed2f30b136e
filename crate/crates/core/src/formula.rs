//! Fuzzy transfer formulas.
//!
//! Text syntax: `0.8 & (!In | !0.7)`. Precedence is `!` over `&` over `|`;
//! both binary connectives associate to the left.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::fuzzy::{LogicFamily, Truth, TruthInterval, TruthValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Var(String),
    Const(TruthValue),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

/// Point valuation: property name to degree.
pub type Valuation = BTreeMap<String, TruthValue>;
/// Interval valuation: property name to interval degree.
pub type IntervalValuation = BTreeMap<String, TruthInterval>;

impl Formula {
    pub fn var(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "variable names must be nonempty");
        Formula::Var(name)
    }

    pub fn constant(value: TruthValue) -> Self {
        Formula::Const(value)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    /// Left fold of `&`; `None` for an empty list.
    pub fn and_all<I: IntoIterator<Item = Formula>>(items: I) -> Option<Self> {
        items.into_iter().reduce(Formula::and)
    }

    /// Left fold of `|`; `None` for an empty list.
    pub fn or_all<I: IntoIterator<Item = Formula>>(items: I) -> Option<Self> {
        items.into_iter().reduce(Formula::or)
    }

    pub fn parse(src: &str) -> Result<Self, FormulaError> {
        Parser::new(src).parse_formula()
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::Var(name) => {
                out.insert(name.clone());
            }
            Formula::Const(_) => {}
            Formula::Not(f) => f.collect_vars(out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Number of occurrences of each variable.
    pub fn occurrences(&self) -> BTreeMap<String, usize> {
        fn walk(f: &Formula, out: &mut BTreeMap<String, usize>) {
            match f {
                Formula::Var(name) => *out.entry(name.clone()).or_default() += 1,
                Formula::Const(_) => {}
                Formula::Not(g) => walk(g, out),
                Formula::And(a, b) | Formula::Or(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(self, &mut out);
        out
    }

    /// True when every variable occurs at most once. Read-once formulas over
    /// a 1-Lipschitz logic are 1-Lipschitz in l1; a variable used `k` times
    /// can scale a perturbation by up to `k` (e.g. `x & x` under product).
    pub fn is_read_once(&self) -> bool {
        self.occurrences().values().all(|&n| n <= 1)
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Var(_) | Formula::Const(_) => 1,
            Formula::Not(f) => 1 + f.depth(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// True when no `Not` occurs; such formulas are monotone in every variable.
    pub fn is_negation_free(&self) -> bool {
        match self {
            Formula::Var(_) | Formula::Const(_) => true,
            Formula::Not(_) => false,
            Formula::And(a, b) | Formula::Or(a, b) => a.is_negation_free() && b.is_negation_free(),
        }
    }

    /// Interprets the formula over any truth domain, looking variables up
    /// through `lookup`.
    pub fn eval_with<V, F>(&self, family: LogicFamily, lookup: &F) -> Result<V, FormulaError>
    where
        V: Truth,
        F: Fn(&str) -> Option<V>,
    {
        Ok(match self {
            Formula::Var(name) => {
                lookup(name).ok_or_else(|| FormulaError::UnboundVariable(name.clone()))?
            }
            Formula::Const(c) => V::lift(*c),
            Formula::Not(f) => f.eval_with(family, lookup)?.not(),
            Formula::And(a, b) => a
                .eval_with(family, lookup)?
                .and(b.eval_with(family, lookup)?, family),
            Formula::Or(a, b) => a
                .eval_with(family, lookup)?
                .or(b.eval_with(family, lookup)?, family),
        })
    }

    pub fn eval(&self, family: LogicFamily, valuation: &Valuation) -> Result<TruthValue, FormulaError> {
        self.eval_with(family, &|name: &str| valuation.get(name).copied())
    }

    pub fn eval_interval(
        &self,
        family: LogicFamily,
        valuation: &IntervalValuation,
    ) -> Result<TruthInterval, FormulaError> {
        self.eval_with(family, &|name: &str| valuation.get(name).copied())
    }

    /// Resolves every variable to a slot index or an inlined constant.
    pub fn compile<V, R>(&self, resolve: &R) -> Result<Program<V>, FormulaError>
    where
        V: Truth,
        R: Fn(&str) -> Option<Operand<V>>,
    {
        let mut ops = Vec::new();
        self.emit(resolve, &mut ops)?;
        Ok(Program { ops })
    }

    fn emit<V, R>(&self, resolve: &R, ops: &mut Vec<Op<V>>) -> Result<(), FormulaError>
    where
        V: Truth,
        R: Fn(&str) -> Option<Operand<V>>,
    {
        match self {
            Formula::Var(name) => match resolve(name) {
                Some(Operand::Slot(i)) => ops.push(Op::Load(i)),
                Some(Operand::Const(v)) => ops.push(Op::Push(v)),
                None => return Err(FormulaError::UnboundVariable(name.clone())),
            },
            Formula::Const(c) => ops.push(Op::Push(V::lift(*c))),
            Formula::Not(f) => {
                f.emit(resolve, ops)?;
                ops.push(Op::Not);
            }
            Formula::And(a, b) => {
                a.emit(resolve, ops)?;
                b.emit(resolve, ops)?;
                ops.push(Op::And);
            }
            Formula::Or(a, b) => {
                a.emit(resolve, ops)?;
                b.emit(resolve, ops)?;
                ops.push(Op::Or);
            }
        }
        Ok(())
    }
}

/// What a variable resolves to when compiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand<V> {
    Slot(usize),
    Const(V),
}

#[derive(Debug, Clone, PartialEq)]
enum Op<V> {
    Load(usize),
    Push(V),
    Not,
    And,
    Or,
}

/// A formula flattened to postfix with variables bound to slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Program<V> {
    ops: Vec<Op<V>>,
}

impl<V: Truth> Program<V> {
    /// Evaluates against `slots`. Panics if a slot index is out of range,
    /// which compile-time resolution rules out for well-formed callers.
    pub fn eval(&self, family: LogicFamily, slots: &[V]) -> V {
        let mut stack: Vec<V> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            match op {
                Op::Load(i) => stack.push(slots[*i]),
                Op::Push(v) => stack.push(*v),
                Op::Not => {
                    let a = stack.pop().expect("operand");
                    stack.push(a.not());
                }
                Op::And | Op::Or => {
                    let b = stack.pop().expect("operand");
                    let a = stack.pop().expect("operand");
                    stack.push(if matches!(op, Op::And) {
                        a.and(b, family)
                    } else {
                        a.or(b, family)
                    });
                }
            }
        }
        stack.pop().expect("empty program")
    }
}

// Printing mirrors the parser's precedence so that parse(print(f)) == f.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prec(self, 0, f)
    }
}

fn precedence(f: &Formula) -> u8 {
    match f {
        Formula::Or(..) => 1,
        Formula::And(..) => 2,
        Formula::Not(_) | Formula::Var(_) | Formula::Const(_) => 3,
    }
}

fn write_prec(node: &Formula, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let prec = precedence(node);
    let paren = prec < min;
    if paren {
        f.write_str("(")?;
    }
    match node {
        Formula::Var(name) => f.write_str(name)?,
        Formula::Const(c) => write!(f, "{:?}", c.get())?,
        Formula::Not(inner) => {
            f.write_str("!")?;
            write_prec(inner, 3, f)?;
        }
        Formula::And(a, b) => {
            write_prec(a, 2, f)?;
            f.write_str(" & ")?;
            write_prec(b, 3, f)?;
        }
        Formula::Or(a, b) => {
            write_prec(a, 1, f)?;
            f.write_str(" | ")?;
            write_prec(b, 2, f)?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

impl FromStr for Formula {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Formula::parse(s)
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Formula::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Not,
    And,
    Or,
    LParen,
    RParen,
    End,
}

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    column: usize,
    peeked: Option<(Token, usize, usize)>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            chars: src.char_indices().peekable(),
            src,
            line: 1,
            column: 1,
            peeked: None,
        }
    }

    fn error(line: usize, column: usize, message: impl Into<String>) -> FormulaError {
        FormulaError::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<(usize, char)> {
        let next = self.chars.next();
        if let Some((_, c)) = next {
            if c == '\n' {
                self.line += 1;
                self.column = 1;
            } else {
                self.column += 1;
            }
        }
        next
    }

    fn lex(&mut self) -> Result<(Token, usize, usize), FormulaError> {
        while let Some(&(_, c)) = self.chars.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
        let (line, column) = (self.line, self.column);
        let Some((start, c)) = self.bump() else {
            return Ok((Token::End, line, column));
        };
        let tok = match c {
            '!' => Token::Not,
            '&' => Token::And,
            '|' => Token::Or,
            '(' => Token::LParen,
            ')' => Token::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                let mut end = start + c.len_utf8();
                let mut prev = c;
                while let Some(&(i, d)) = self.chars.peek() {
                    let exponent_sign = (d == '+' || d == '-') && (prev == 'e' || prev == 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exponent_sign {
                        end = i + d.len_utf8();
                        prev = d;
                        self.bump();
                    } else {
                        break;
                    }
                }
                let text = &self.src[start..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| Self::error(line, column, format!("malformed number `{text}`")))?;
                Token::Number(value)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut end = start + c.len_utf8();
                while let Some(&(i, d)) = self.chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        end = i + d.len_utf8();
                        self.bump();
                    } else {
                        break;
                    }
                }
                Token::Ident(self.src[start..end].to_string())
            }
            other => return Err(Self::error(line, column, format!("unexpected character `{other}`"))),
        };
        Ok((tok, line, column))
    }

    fn peek(&mut self) -> Result<&(Token, usize, usize), FormulaError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lex()?);
        }
        Ok(self.peeked.as_ref().expect("just filled"))
    }

    fn next(&mut self) -> Result<(Token, usize, usize), FormulaError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn parse_formula(&mut self) -> Result<Formula, FormulaError> {
        let f = self.parse_or()?;
        match self.next()? {
            (Token::End, ..) => Ok(f),
            (tok, line, column) => Err(Self::error(line, column, format!("unexpected {}", describe(&tok)))),
        }
    }

    fn parse_or(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.parse_and()?;
        while self.peek()?.0 == Token::Or {
            self.next()?;
            lhs = Formula::or(lhs, self.parse_and()?);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.parse_unary()?;
        while self.peek()?.0 == Token::And {
            self.next()?;
            lhs = Formula::and(lhs, self.parse_unary()?);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Formula, FormulaError> {
        let (tok, line, column) = self.next()?;
        match tok {
            Token::Not => Ok(Formula::not(self.parse_unary()?)),
            Token::LParen => {
                let inner = self.parse_or()?;
                match self.next()? {
                    (Token::RParen, ..) => Ok(inner),
                    (tok, l, c) => Err(Self::error(l, c, format!("expected `)`, found {}", describe(&tok)))),
                }
            }
            Token::Ident(name) => Ok(Formula::Var(name)),
            Token::Number(v) => TruthValue::new(v)
                .map(Formula::Const)
                .map_err(|e| Self::error(line, column, e.to_string())),
            other => Err(Self::error(line, column, format!("expected an operand, found {}", describe(&other)))),
        }
    }
}

fn describe(tok: &Token) -> String {
    match tok {
        Token::Ident(name) => format!("identifier `{name}`"),
        Token::Number(v) => format!("number `{v}`"),
        Token::Not => "`!`".into(),
        Token::And => "`&`".into(),
        Token::Or => "`|`".into(),
        Token::LParen => "`(`".into(),
        Token::RParen => "`)`".into(),
        Token::End => "end of input".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(x: f64) -> TruthValue {
        TruthValue::new(x).unwrap()
    }

    fn vals(pairs: &[(&str, f64)]) -> Valuation {
        pairs.iter().map(|(k, v)| (k.to_string(), t(*v))).collect()
    }

    #[test]
    fn fig1_node_formula() {
        let f = Formula::parse("0.8 & (!In | !0.7)").unwrap();
        let out = f.eval(LogicFamily::MinMax, &vals(&[("In", 0.0)])).unwrap();
        assert_eq!(out.get(), 0.8);
    }

    #[test]
    fn identity_and_excluded_middle() {
        let x = Formula::var("x");
        for fam in [LogicFamily::MinMax, LogicFamily::Product, LogicFamily::Lukasiewicz] {
            assert_eq!(x.eval(fam, &vals(&[("x", 0.37)])).unwrap().get(), 0.37);
        }
        let lem = Formula::parse("x | !x").unwrap();
        assert_abs_diff_eq!(lem.eval(LogicFamily::MinMax, &vals(&[("x", 0.4)])).unwrap().get(), 0.6);
    }

    #[test]
    fn unbound_variable() {
        let f = Formula::parse("a & b").unwrap();
        assert_eq!(
            f.eval(LogicFamily::MinMax, &vals(&[("a", 0.5)])),
            Err(FormulaError::UnboundVariable("b".into()))
        );
    }

    #[test]
    fn interval_examples() {
        let iv = |lo, hi| TruthInterval::from_bounds(lo, hi).unwrap();
        let v: IntervalValuation = [("x".to_string(), iv(0.2, 0.9)), ("y".to_string(), TruthInterval::TOP)]
            .into_iter()
            .collect();
        let mm = LogicFamily::MinMax;
        assert_eq!(Formula::var("x").eval_interval(mm, &v).unwrap(), iv(0.2, 0.9));
        let neg = Formula::parse("!x").unwrap().eval_interval(mm, &v).unwrap();
        assert_abs_diff_eq!(neg.lo().get(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(neg.hi().get(), 0.8, epsilon = 1e-15);
        let w: IntervalValuation = [("x".to_string(), TruthInterval::UNKNOWN), ("y".to_string(), TruthInterval::TOP)]
            .into_iter()
            .collect();
        assert_eq!(Formula::parse("x | y").unwrap().eval_interval(mm, &w).unwrap(), TruthInterval::TOP);
    }

    #[test]
    fn free_vars_examples() {
        assert!(Formula::constant(t(0.5)).free_vars().is_empty());
        let f = Formula::parse("a & !b").unwrap();
        assert_eq!(f.free_vars(), ["a", "b"].iter().map(|s| s.to_string()).collect());
        let g = Formula::parse("a | a").unwrap();
        assert_eq!(g.free_vars().len(), 1);
    }

    #[test]
    fn precedence_and_associativity() {
        let f = Formula::parse("a | b & !c").unwrap();
        assert_eq!(
            f,
            Formula::or(
                Formula::var("a"),
                Formula::and(Formula::var("b"), Formula::not(Formula::var("c")))
            )
        );
        let g = Formula::parse("a & b & c").unwrap();
        assert_eq!(
            g,
            Formula::and(Formula::and(Formula::var("a"), Formula::var("b")), Formula::var("c"))
        );
        assert_eq!(Formula::and_all(["a", "b", "c"].map(Formula::var)), Some(g));
        assert_eq!(Formula::or_all(Vec::new()), None);
    }

    #[test]
    fn printing_round_trips() {
        for src in [
            "0.8 & (!In | !0.7)",
            "a | b & !c",
            "(a | b) & c",
            "a & (b & c)",
            "!(a & b) | 1.0",
            "!!x",
            "a | (b | c)",
            "1e-3 & x",
        ] {
            let f = Formula::parse(src).unwrap();
            let printed = f.to_string();
            assert_eq!(Formula::parse(&printed).unwrap(), f, "{src} -> {printed}");
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match Formula::parse("a &\n  (b | )") {
            Err(FormulaError::Parse { line, column, .. }) => assert_eq!((line, column), (2, 8)),
            other => panic!("unexpected {other:?}"),
        }
        match Formula::parse("a $ b") {
            Err(FormulaError::Parse { line, column, .. }) => assert_eq!((line, column), (1, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Formula::parse("1.5"), Err(FormulaError::Parse { .. })));
        assert!(matches!(Formula::parse("(a"), Err(FormulaError::Parse { .. })));
        assert!(matches!(Formula::parse(""), Err(FormulaError::Parse { .. })));
        assert!(matches!(Formula::parse("a b"), Err(FormulaError::Parse { .. })));
    }

    #[test]
    fn compiled_program_matches_tree_walk() {
        let f = Formula::parse("0.8 & (!In | !k) | In & 0.3").unwrap();
        let prog: Program<TruthValue> = f
            .compile(&|name: &str| match name {
                "In" => Some(Operand::Slot(0)),
                "k" => Some(Operand::Const(t(0.7))),
                _ => None,
            })
            .unwrap();
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            let tree = f.eval(LogicFamily::Product, &vals(&[("In", x), ("k", 0.7)])).unwrap();
            assert_eq!(prog.eval(LogicFamily::Product, &[t(x)]), tree);
        }
        let missing = f.compile::<TruthValue, _>(&|_: &str| None);
        assert_eq!(missing, Err(FormulaError::UnboundVariable("In".into())));
    }
}
