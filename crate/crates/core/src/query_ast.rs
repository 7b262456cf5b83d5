//! Query trees, their token-sequence linearizations, delinearization back to
//! trees, canonicalization and order-insensitive equality.
//!
//! A query tree is one SELECT (aggregator + column) plus an unordered set of
//! WHERE conditions. Because the conditions are unordered, a tree admits
//! several equally valid linearizations; [`OrderPolicy`] picks one.

use std::fmt;

use nl2sql_tensor::Rng;
use serde::{Deserialize, Serialize};

use crate::table_store::{ColType, TableSchema};

pub const NUM_AGGREGATORS: usize = 6;
pub const NUM_OPERATORS: usize = 3;

/// Aggregator applied to the selected column. Id 0 is the dummy
/// "no aggregator".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Agg {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl Agg {
    pub fn id(self) -> usize {
        match self {
            Agg::None => 0,
            Agg::Max => 1,
            Agg::Min => 2,
            Agg::Count => 3,
            Agg::Sum => 4,
            Agg::Avg => 5,
        }
    }

    pub fn from_id(id: usize) -> Option<Agg> {
        Some(match id {
            0 => Agg::None,
            1 => Agg::Max,
            2 => Agg::Min,
            3 => Agg::Count,
            4 => Agg::Sum,
            5 => Agg::Avg,
            _ => return None,
        })
    }

    /// Only the dummy aggregator and COUNT make sense on text columns.
    pub fn legal_for(self, col_type: ColType) -> bool {
        match col_type {
            ColType::Float => true,
            ColType::Text => matches!(self, Agg::None | Agg::Count),
        }
    }

    pub fn all() -> [Agg; NUM_AGGREGATORS] {
        [Agg::None, Agg::Max, Agg::Min, Agg::Count, Agg::Sum, Agg::Avg]
    }
}

/// Condition operator. Id 0 is equality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Gt,
    Lt,
}

impl CmpOp {
    pub fn id(self) -> usize {
        match self {
            CmpOp::Eq => 0,
            CmpOp::Gt => 1,
            CmpOp::Lt => 2,
        }
    }

    pub fn from_id(id: usize) -> Option<CmpOp> {
        Some(match id {
            0 => CmpOp::Eq,
            1 => CmpOp::Gt,
            2 => CmpOp::Lt,
            _ => return None,
        })
    }

    /// Comparisons other than equality only apply to float columns.
    pub fn legal_for(self, col_type: ColType) -> bool {
        match col_type {
            ColType::Float => true,
            ColType::Text => matches!(self, CmpOp::Eq),
        }
    }

    pub fn all() -> [CmpOp; NUM_OPERATORS] {
        [CmpOp::Eq, CmpOp::Gt, CmpOp::Lt]
    }
}

/// One WHERE condition: `column <op> value`, the value being a sequence of
/// words copied from the question.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub column: usize,
    pub op: CmpOp,
    pub value: Vec<String>,
}

/// The target logical form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTree {
    pub select_agg: Agg,
    pub select_col: usize,
    pub conditions: Vec<Condition>,
}

/// Why a tree fails validation against a schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvalidTree {
    SelectColOutOfRange { col: usize, n_cols: usize },
    AggIllegalForTextColumn { agg: Agg, col: usize },
    CondColOutOfRange { col: usize, n_cols: usize },
    OpIllegalForTextColumn { op: CmpOp, col: usize },
    EmptyValue { col: usize },
    DuplicateCondition,
}

impl fmt::Display for InvalidTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidTree::SelectColOutOfRange { col, n_cols } => {
                write!(f, "select column {col} out of range ({n_cols} columns)")
            }
            InvalidTree::AggIllegalForTextColumn { agg, col } => {
                write!(f, "aggregator {agg:?} not allowed on text column {col}")
            }
            InvalidTree::CondColOutOfRange { col, n_cols } => {
                write!(f, "condition column {col} out of range ({n_cols} columns)")
            }
            InvalidTree::OpIllegalForTextColumn { op, col } => {
                write!(f, "operator {op:?} not allowed on text column {col}")
            }
            InvalidTree::EmptyValue { col } => {
                write!(f, "condition on column {col} has an empty value")
            }
            InvalidTree::DuplicateCondition => write!(f, "duplicate condition"),
        }
    }
}

impl std::error::Error for InvalidTree {}

impl QueryTree {
    pub fn new(select_agg: Agg, select_col: usize, conditions: Vec<Condition>) -> Self {
        QueryTree {
            select_agg,
            select_col,
            conditions,
        }
    }

    pub fn validate(&self, schema: &TableSchema) -> Result<(), InvalidTree> {
        let n_cols = schema.num_columns();
        if self.select_col >= n_cols {
            return Err(InvalidTree::SelectColOutOfRange {
                col: self.select_col,
                n_cols,
            });
        }
        if !self.select_agg.legal_for(schema.column_type(self.select_col)) {
            return Err(InvalidTree::AggIllegalForTextColumn {
                agg: self.select_agg,
                col: self.select_col,
            });
        }
        for cond in &self.conditions {
            if cond.column >= n_cols {
                return Err(InvalidTree::CondColOutOfRange {
                    col: cond.column,
                    n_cols,
                });
            }
            if cond.value.is_empty() {
                return Err(InvalidTree::EmptyValue { col: cond.column });
            }
            if !cond.op.legal_for(schema.column_type(cond.column)) {
                return Err(InvalidTree::OpIllegalForTextColumn {
                    op: cond.op,
                    col: cond.column,
                });
            }
        }
        for (i, a) in self.conditions.iter().enumerate() {
            if self.conditions[i + 1..].contains(a) {
                return Err(InvalidTree::DuplicateCondition);
            }
        }
        Ok(())
    }

    /// Conditions sorted by (column, op, value); idempotent, and invariant
    /// under any permutation of the condition list.
    pub fn canonicalize(&self) -> QueryTree {
        let mut tree = self.clone();
        tree.conditions
            .sort_by(|a, b| (a.column, a.op, &a.value).cmp(&(b.column, b.op, &b.value)));
        tree
    }
}

/// Order-insensitive tree equality (query match).
pub fn query_equal(a: &QueryTree, b: &QueryTree) -> bool {
    a.canonicalize() == b.canonicalize()
}

/// Fixed SQL tokens of the output language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SqlTok {
    Select,
    Where,
    Cond,
    Val,
    EndVal,
    End,
    Agg(u8),
    Op(u8),
}

/// Number of fixed SQL tokens (6 structural + aggregators + operators).
pub const SQL_VOCAB: usize = 6 + NUM_AGGREGATORS + NUM_OPERATORS;

impl SqlTok {
    /// Dense index in `0..SQL_VOCAB`.
    pub fn index(self) -> usize {
        match self {
            SqlTok::Select => 0,
            SqlTok::Where => 1,
            SqlTok::Cond => 2,
            SqlTok::Val => 3,
            SqlTok::EndVal => 4,
            SqlTok::End => 5,
            SqlTok::Agg(a) => 6 + a as usize,
            SqlTok::Op(o) => 6 + NUM_AGGREGATORS + o as usize,
        }
    }

    pub fn from_index(i: usize) -> Option<SqlTok> {
        Some(match i {
            0 => SqlTok::Select,
            1 => SqlTok::Where,
            2 => SqlTok::Cond,
            3 => SqlTok::Val,
            4 => SqlTok::EndVal,
            5 => SqlTok::End,
            _ if i < 6 + NUM_AGGREGATORS => SqlTok::Agg((i - 6) as u8),
            _ if i < SQL_VOCAB => SqlTok::Op((i - 6 - NUM_AGGREGATORS) as u8),
            _ => return None,
        })
    }
}

impl fmt::Display for SqlTok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlTok::Select => write!(f, "SELECT"),
            SqlTok::Where => write!(f, "WHERE"),
            SqlTok::Cond => write!(f, "COND"),
            SqlTok::Val => write!(f, "VAL"),
            SqlTok::EndVal => write!(f, "ENDVAL"),
            SqlTok::End => write!(f, "END"),
            SqlTok::Agg(a) => write!(f, "AGG{a}"),
            SqlTok::Op(o) => write!(f, "OP{o}"),
        }
    }
}

/// A token of the output vocabulary: fixed SQL token, per-example column id,
/// or a word copied from the question.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Sql(SqlTok),
    Col(usize),
    Word(String),
}

impl Token {
    pub fn agg(a: Agg) -> Token {
        Token::Sql(SqlTok::Agg(a.id() as u8))
    }

    pub fn op(o: CmpOp) -> Token {
        Token::Sql(SqlTok::Op(o.id() as u8))
    }
}

/// A linearized query: the token sequence
/// `SELECT <col> <agg> [WHERE (COND <col> <op> VAL <word>+ ENDVAL)+]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearQuery {
    pub tokens: Vec<Token>,
}

impl LinearQuery {
    /// Human-readable rendering; column ids print their names when the
    /// schema is given.
    pub fn render(&self, schema: Option<&TableSchema>) -> String {
        self.tokens
            .iter()
            .map(|t| match t {
                Token::Sql(s) => s.to_string(),
                Token::Col(c) => match schema {
                    Some(sc) if *c < sc.num_columns() => sc.column_name_joined(*c, "_"),
                    _ => format!("col{c}"),
                },
                Token::Word(w) => w.clone(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// How to order the unordered WHERE conditions when linearizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderPolicy {
    /// As given in the data set ("original linearization").
    Original,
    /// Original order reversed.
    Reversed,
    /// A seeded random permutation; the trainer varies the seed per epoch so
    /// conditions are reordered every trial, deterministically per run.
    ArbitraryPerTrial { seed: u64 },
}

impl OrderPolicy {
    fn order(&self, n: usize) -> Vec<usize> {
        match self {
            OrderPolicy::Original => (0..n).collect(),
            OrderPolicy::Reversed => (0..n).rev().collect(),
            OrderPolicy::ArbitraryPerTrial { seed } => {
                let mut idx: Vec<usize> = (0..n).collect();
                Rng::seeded(*seed).shuffle(&mut idx);
                idx
            }
        }
    }
}

/// Serialize a tree into its token sequence under the given condition order.
/// An empty WHERE clause is omitted entirely.
pub fn linearize(
    tree: &QueryTree,
    schema: &TableSchema,
    policy: OrderPolicy,
) -> Result<LinearQuery, InvalidTree> {
    tree.validate(schema)?;
    let mut tokens = vec![
        Token::Sql(SqlTok::Select),
        Token::Col(tree.select_col),
        Token::agg(tree.select_agg),
    ];
    if !tree.conditions.is_empty() {
        tokens.push(Token::Sql(SqlTok::Where));
        for i in policy.order(tree.conditions.len()) {
            let cond = &tree.conditions[i];
            tokens.push(Token::Sql(SqlTok::Cond));
            tokens.push(Token::Col(cond.column));
            tokens.push(Token::op(cond.op));
            tokens.push(Token::Sql(SqlTok::Val));
            for w in &cond.value {
                tokens.push(Token::Word(w.clone()));
            }
            tokens.push(Token::Sql(SqlTok::EndVal));
        }
    }
    Ok(LinearQuery { tokens })
}

/// Kinds of token a parser position can expect, for error reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Select,
    Where,
    Cond,
    Val,
    EndVal,
    End,
    Aggregator,
    Operator,
    ColumnId,
    Word,
    EndOfSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub position: usize,
    pub expected: Vec<TokenKind>,
    pub found: Option<Token>,
    pub reason: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parse error at position {}: {} (expected one of {:?}, found {:?})",
            self.position, self.reason, self.expected, self.found
        )
    }
}

impl std::error::Error for ParseError {}

fn parse_err(
    position: usize,
    expected: Vec<TokenKind>,
    found: Option<&Token>,
    reason: &str,
) -> ParseError {
    ParseError {
        position,
        expected,
        found: found.cloned(),
        reason: reason.to_string(),
    }
}

/// Strict inverse of [`linearize`]: rejects any sequence that is not a valid
/// linearization of some tree (a trailing END token is tolerated, since
/// decoded sequences terminate with one). Enforces structure, column bounds,
/// column-type rules and the no-duplicate-condition rule.
pub fn delinearize(tokens: &[Token], schema: &TableSchema) -> Result<QueryTree, ParseError> {
    let mut toks = tokens;
    if let Some(Token::Sql(SqlTok::End)) = toks.last() {
        toks = &toks[..toks.len() - 1];
    }
    let n_cols = schema.num_columns();
    let mut pos = 0;
    let next = |pos: &mut usize| -> Option<&Token> {
        let t = toks.get(*pos);
        *pos += 1;
        t
    };

    match next(&mut pos) {
        Some(Token::Sql(SqlTok::Select)) => {}
        t => return Err(parse_err(0, vec![TokenKind::Select], t, "sequence must begin with SELECT")),
    }
    let select_col = match next(&mut pos) {
        Some(Token::Col(c)) if *c < n_cols => *c,
        t => {
            return Err(parse_err(
                1,
                vec![TokenKind::ColumnId],
                t,
                "SELECT must name a column of the schema",
            ))
        }
    };
    let select_agg = match next(&mut pos) {
        Some(Token::Sql(SqlTok::Agg(a))) => match Agg::from_id(*a as usize) {
            Some(agg) if agg.legal_for(schema.column_type(select_col)) => agg,
            Some(_) => {
                return Err(parse_err(
                    2,
                    vec![TokenKind::Aggregator],
                    toks.get(2),
                    "aggregator not allowed for text column",
                ))
            }
            None => {
                return Err(parse_err(
                    2,
                    vec![TokenKind::Aggregator],
                    toks.get(2),
                    "unknown aggregator id",
                ))
            }
        },
        t => {
            return Err(parse_err(
                2,
                vec![TokenKind::Aggregator],
                t,
                "operator cannot follow SELECT column outside WHERE"
            ))
        }
    };

    let mut conditions = Vec::new();
    match next(&mut pos) {
        None => {}
        Some(Token::Sql(SqlTok::Where)) => loop {
            let at = pos;
            match next(&mut pos) {
                Some(Token::Sql(SqlTok::Cond)) => {}
                None if !conditions.is_empty() => break,
                t => {
                    return Err(parse_err(
                        at,
                        vec![TokenKind::Cond],
                        t,
                        "WHERE must contain at least one COND block",
                    ))
                }
            }
            let at = pos;
            let column = match next(&mut pos) {
                Some(Token::Col(c)) if *c < n_cols => *c,
                t => {
                    return Err(parse_err(
                        at,
                        vec![TokenKind::ColumnId],
                        t,
                        "COND must be followed by a column id",
                    ))
                }
            };
            let at = pos;
            let op = match next(&mut pos) {
                Some(Token::Sql(SqlTok::Op(o))) => match CmpOp::from_id(*o as usize) {
                    Some(op) if op.legal_for(schema.column_type(column)) => op,
                    Some(_) => {
                        return Err(parse_err(
                            at,
                            vec![TokenKind::Operator],
                            toks.get(at),
                            "operator not allowed for text column",
                        ))
                    }
                    None => {
                        return Err(parse_err(
                            at,
                            vec![TokenKind::Operator],
                            toks.get(at),
                            "unknown operator id",
                        ))
                    }
                },
                t => {
                    return Err(parse_err(
                        at,
                        vec![TokenKind::Operator],
                        t,
                        "condition column must be followed by an operator",
                    ))
                }
            };
            let at = pos;
            match next(&mut pos) {
                Some(Token::Sql(SqlTok::Val)) => {}
                t => {
                    return Err(parse_err(
                        at,
                        vec![TokenKind::Val],
                        t,
                        "operator must be followed by VAL",
                    ))
                }
            }
            let mut value = Vec::new();
            loop {
                let at = pos;
                match next(&mut pos) {
                    Some(Token::Word(w)) => value.push(w.clone()),
                    Some(Token::Sql(SqlTok::EndVal)) if !value.is_empty() => break,
                    t => {
                        let mut expected = vec![TokenKind::Word];
                        if !value.is_empty() {
                            expected.push(TokenKind::EndVal);
                        }
                        return Err(parse_err(at, expected, t, "unterminated or empty VAL span"));
                    }
                }
            }
            let cond = Condition { column, op, value };
            if conditions.contains(&cond) {
                return Err(parse_err(
                    pos - 1,
                    vec![TokenKind::Cond, TokenKind::EndOfSequence],
                    None,
                    "duplicate condition",
                ));
            }
            conditions.push(cond);
            if pos >= toks.len() {
                break;
            }
        },
        t => {
            return Err(parse_err(
                3,
                vec![TokenKind::Where, TokenKind::EndOfSequence],
                t,
                "only WHERE (or nothing) may follow the SELECT clause",
            ))
        }
    }

    Ok(QueryTree {
        select_agg,
        select_col,
        conditions,
    })
}
