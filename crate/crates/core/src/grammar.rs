//! The constrained-decoding automaton. Tracks decoder state and yields the
//! set of valid next tokens, enforcing syntax (clause structure), column
//! types (aggregators and comparison operators only on float columns), and
//! span consistency while copying value words.
//!
//! In oracle mode the automaton additionally restricts each step to tokens
//! from which the gold tree remains reachable: where the tree has unordered
//! children (the WHERE conditions) every not-yet-emitted condition is
//! allowed; elsewhere the single gold token is.

use std::fmt;
use std::rc::Rc;

use crate::query_ast::{Agg, CmpOp, Condition, QueryTree, SqlTok, Token};
use crate::table_store::{find_subsequence, TableSchema};
use crate::vocab::TokenSpace;

/// Boolean mask over one example's token space.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMask {
    allowed: Vec<bool>,
}

impl TokenMask {
    fn none(len: usize) -> TokenMask {
        TokenMask {
            allowed: vec![false; len],
        }
    }

    pub fn allows(&self, idx: usize) -> bool {
        self.allowed[idx]
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&b| b).count()
    }

    pub fn allowed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.allowed
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn as_bools(&self) -> &[bool] {
        &self.allowed
    }

    pub fn to_rc(&self) -> Rc<Vec<bool>> {
        Rc::new(self.allowed.clone())
    }

    /// Keep only entries allowed by both.
    pub fn intersect(&self, other: &TokenMask) -> TokenMask {
        assert_eq!(self.allowed.len(), other.allowed.len());
        TokenMask {
            allowed: self
                .allowed
                .iter()
                .zip(&other.allowed)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GrammarError {
    /// A gold condition value is not a contiguous subsequence of the question.
    NotCopyable { cond_index: usize },
    /// The gold tree violates the schema.
    InvalidGold { detail: String },
    /// `advance` received a token outside `valid_next` — a programming error
    /// in the caller, surfaced instead of corrupting state.
    IllegalToken { token: Token },
}

impl fmt::Display for GrammarError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarError::NotCopyable { cond_index } => {
                write!(f, "gold condition {cond_index} value cannot be copied from the question")
            }
            GrammarError::InvalidGold { detail } => write!(f, "invalid gold tree: {detail}"),
            GrammarError::IllegalToken { token } => {
                write!(f, "token {token:?} is not valid in the current state")
            }
        }
    }
}

impl std::error::Error for GrammarError {}

#[derive(Clone, Debug)]
pub enum Mode {
    Free,
    Oracle(QueryTree),
}

/// Knobs that change what the automaton admits.
#[derive(Clone, Copy, Debug)]
pub struct GrammarConfig {
    /// Permit the same column in more than one condition. Off by default:
    /// gold queries never repeat a column and forbidding repeats shrinks the
    /// search space.
    pub allow_repeated_columns: bool,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            allow_repeated_columns: false,
        }
    }
}

#[derive(Debug)]
struct Ctx {
    schema: TableSchema,
    space: Rc<TokenSpace>,
    config: GrammarConfig,
    oracle: bool,
}

/// Which token kind the automaton expects next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Clause {
    Start,
    SelectCol,
    SelectAgg,
    /// After the aggregator: WHERE opens conditions, END closes the query.
    WhereOrEnd,
    /// Right after WHERE: at least one COND must follow.
    CondKeyword,
    /// After a finished condition: another COND or END.
    CondOrEnd,
    CondCol,
    CondOp,
    /// Expect the VAL keyword opening a value span.
    ValKeyword,
    /// Inside a value span (`words` tokens emitted so far).
    ValWords,
    Done,
}

#[derive(Clone, Debug)]
pub struct GrammarState {
    ctx: Rc<Ctx>,
    clause: Clause,
    used_columns: Vec<bool>,
    cur_col: Option<usize>,
    /// Candidate start positions: question positions `s` such that
    /// `question[s .. s + n_value_words]` equals the emitted value words.
    /// Tracking all candidates (not just the leftmost) keeps every
    /// contiguous span reachable.
    span_candidates: Vec<usize>,
    n_value_words: usize,
    /// Oracle mode: conditions not yet emitted.
    gold_remaining: Vec<Condition>,
    /// Oracle mode: the condition being emitted.
    cur_gold: Option<Condition>,
    /// Oracle mode: SELECT fields of the gold tree.
    gold_select: Option<(Agg, usize)>,
}

impl GrammarState {
    /// Start state. In oracle mode the gold tree must be valid against the
    /// schema and every condition value copyable from the question.
    pub fn init(
        schema: &TableSchema,
        mode: Mode,
        space: Rc<TokenSpace>,
        config: GrammarConfig,
    ) -> Result<GrammarState, GrammarError> {
        let n_cols = schema.num_columns();
        assert_eq!(space.num_cols(), n_cols, "token space does not match schema");
        let (oracle, gold_remaining, gold_select) = match mode {
            Mode::Free => (false, Vec::new(), None),
            Mode::Oracle(gold) => {
                gold.validate(schema).map_err(|e| GrammarError::InvalidGold {
                    detail: e.to_string(),
                })?;
                for (i, cond) in gold.conditions.iter().enumerate() {
                    if find_subsequence(space.question(), &cond.value).is_none() {
                        return Err(GrammarError::NotCopyable { cond_index: i });
                    }
                }
                (
                    true,
                    gold.conditions.clone(),
                    Some((gold.select_agg, gold.select_col)),
                )
            }
        };
        Ok(GrammarState {
            ctx: Rc::new(Ctx {
                schema: schema.clone(),
                space,
                config,
                oracle,
            }),
            clause: Clause::Start,
            used_columns: vec![false; n_cols],
            cur_col: None,
            span_candidates: Vec::new(),
            n_value_words: 0,
            gold_remaining,
            cur_gold: None,
            gold_select,
        })
    }

    pub fn space(&self) -> &TokenSpace {
        &self.ctx.space
    }

    pub fn space_rc(&self) -> Rc<TokenSpace> {
        Rc::clone(&self.ctx.space)
    }

    pub fn is_done(&self) -> bool {
        self.clause == Clause::Done
    }

    /// True in states where the emitted prefix is a complete linearization
    /// (delinearizable even without a trailing END).
    pub fn is_accepting(&self) -> bool {
        matches!(
            self.clause,
            Clause::WhereOrEnd | Clause::CondOrEnd | Clause::Done
        )
    }

    fn has_free_column(&self) -> bool {
        self.ctx.config.allow_repeated_columns || self.used_columns.iter().any(|&u| !u)
    }

    /// The valid-next-token mask for the current state. Non-empty for every
    /// reachable non-Done state.
    pub fn valid_next(&self) -> TokenMask {
        let space = &self.ctx.space;
        let schema = &self.ctx.schema;
        let mut mask = TokenMask::none(space.len());
        if self.ctx.oracle {
            self.fill_oracle(&mut mask);
        } else {
            self.fill_free(&mut mask, space, schema);
        }
        debug_assert!(
            self.clause == Clause::Done || mask.count() > 0,
            "dead end in clause {:?}",
            self.clause
        );
        mask
    }

    fn fill_free(&self, mask: &mut TokenMask, space: &TokenSpace, schema: &TableSchema) {
        match self.clause {
            Clause::Start => mask.allowed[space.sql_index(SqlTok::Select)] = true,
            Clause::SelectCol => {
                for c in 0..schema.num_columns() {
                    mask.allowed[space.col_index(c)] = true;
                }
            }
            Clause::SelectAgg => {
                let ty = schema.column_type(self.cur_col.expect("select column set"));
                for agg in Agg::all() {
                    if agg.legal_for(ty) {
                        mask.allowed[space.sql_index(SqlTok::Agg(agg.id() as u8))] = true;
                    }
                }
            }
            Clause::WhereOrEnd => {
                if self.has_free_column() {
                    mask.allowed[space.sql_index(SqlTok::Where)] = true;
                }
                mask.allowed[space.sql_index(SqlTok::End)] = true;
            }
            Clause::CondKeyword => mask.allowed[space.sql_index(SqlTok::Cond)] = true,
            Clause::CondOrEnd => {
                if self.has_free_column() {
                    mask.allowed[space.sql_index(SqlTok::Cond)] = true;
                }
                mask.allowed[space.sql_index(SqlTok::End)] = true;
            }
            Clause::CondCol => {
                for c in 0..schema.num_columns() {
                    if self.ctx.config.allow_repeated_columns || !self.used_columns[c] {
                        mask.allowed[space.col_index(c)] = true;
                    }
                }
            }
            Clause::CondOp => {
                let ty = schema.column_type(self.cur_col.expect("condition column set"));
                for op in CmpOp::all() {
                    if op.legal_for(ty) {
                        mask.allowed[space.sql_index(SqlTok::Op(op.id() as u8))] = true;
                    }
                }
            }
            Clause::ValKeyword => mask.allowed[space.sql_index(SqlTok::Val)] = true,
            Clause::ValWords => {
                if self.n_value_words == 0 {
                    // first copied word may be any question word
                    for w in 0..space.distinct_words().len() {
                        mask.allowed[crate::query_ast::SQL_VOCAB + space.num_cols() + w] = true;
                    }
                } else {
                    // span consistency: continue some contiguous occurrence
                    // of the emitted words, or terminate
                    let q = space.question();
                    for &s in &self.span_candidates {
                        let next = s + self.n_value_words;
                        if next < q.len() {
                            if let Some(idx) = space.word_index(&q[next]) {
                                mask.allowed[idx] = true;
                            }
                        }
                    }
                    mask.allowed[space.sql_index(SqlTok::EndVal)] = true;
                }
            }
            Clause::Done => {}
        }
    }

    fn fill_oracle(&self, mask: &mut TokenMask) {
        let space = &self.ctx.space;
        match self.clause {
            Clause::Start => mask.allowed[space.sql_index(SqlTok::Select)] = true,
            Clause::SelectCol => {
                let (_, col) = self.gold_select.expect("oracle has gold");
                mask.allowed[space.col_index(col)] = true;
            }
            Clause::SelectAgg => {
                let (agg, _) = self.gold_select.expect("oracle has gold");
                mask.allowed[space.sql_index(SqlTok::Agg(agg.id() as u8))] = true;
            }
            Clause::WhereOrEnd | Clause::CondOrEnd => {
                if self.gold_remaining.is_empty() {
                    mask.allowed[space.sql_index(SqlTok::End)] = true;
                } else if self.clause == Clause::WhereOrEnd {
                    mask.allowed[space.sql_index(SqlTok::Where)] = true;
                } else {
                    mask.allowed[space.sql_index(SqlTok::Cond)] = true;
                }
            }
            Clause::CondKeyword => mask.allowed[space.sql_index(SqlTok::Cond)] = true,
            Clause::CondCol => {
                // unordered children: every remaining condition's column
                for cond in &self.gold_remaining {
                    mask.allowed[space.col_index(cond.column)] = true;
                }
            }
            Clause::CondOp => {
                let gold = self.cur_gold.as_ref().expect("condition chosen");
                mask.allowed[space.sql_index(SqlTok::Op(gold.op.id() as u8))] = true;
            }
            Clause::ValKeyword => mask.allowed[space.sql_index(SqlTok::Val)] = true,
            Clause::ValWords => {
                let gold = self.cur_gold.as_ref().expect("condition chosen");
                if self.n_value_words < gold.value.len() {
                    let idx = space
                        .word_index(&gold.value[self.n_value_words])
                        .expect("gold value copyable");
                    mask.allowed[idx] = true;
                } else {
                    mask.allowed[space.sql_index(SqlTok::EndVal)] = true;
                }
            }
            Clause::Done => {}
        }
    }

    /// Deterministic transition on a token allowed by `valid_next`.
    pub fn advance(&self, token: &Token) -> Result<GrammarState, GrammarError> {
        let space = &self.ctx.space;
        let idx = space.token_index(token).ok_or_else(|| GrammarError::IllegalToken {
            token: token.clone(),
        })?;
        if !self.valid_next().allows(idx) {
            return Err(GrammarError::IllegalToken {
                token: token.clone(),
            });
        }
        let mut next = self.clone();
        match (self.clause, token) {
            (Clause::Start, _) => next.clause = Clause::SelectCol,
            (Clause::SelectCol, Token::Col(c)) => {
                next.cur_col = Some(*c);
                next.clause = Clause::SelectAgg;
            }
            (Clause::SelectAgg, _) => {
                next.cur_col = None;
                next.clause = Clause::WhereOrEnd;
            }
            (Clause::WhereOrEnd, Token::Sql(SqlTok::Where)) => next.clause = Clause::CondKeyword,
            (Clause::WhereOrEnd, Token::Sql(SqlTok::End)) => next.clause = Clause::Done,
            (Clause::CondKeyword, _) | (Clause::CondOrEnd, Token::Sql(SqlTok::Cond)) => {
                next.clause = Clause::CondCol;
            }
            (Clause::CondOrEnd, Token::Sql(SqlTok::End)) => next.clause = Clause::Done,
            (Clause::CondCol, Token::Col(c)) => {
                next.cur_col = Some(*c);
                next.used_columns[*c] = true;
                if self.ctx.oracle {
                    let at = next
                        .gold_remaining
                        .iter()
                        .position(|cond| cond.column == *c)
                        .expect("mask allowed a gold column");
                    next.cur_gold = Some(next.gold_remaining.remove(at));
                }
                next.clause = Clause::CondOp;
            }
            (Clause::CondOp, _) => next.clause = Clause::ValKeyword,
            (Clause::ValKeyword, _) => {
                next.n_value_words = 0;
                next.span_candidates.clear();
                next.clause = Clause::ValWords;
            }
            (Clause::ValWords, Token::Word(w)) => {
                let q = space.question();
                if self.n_value_words == 0 {
                    next.span_candidates =
                        (0..q.len()).filter(|&p| &q[p] == w).collect();
                } else {
                    next.span_candidates.retain(|&s| {
                        let p = s + self.n_value_words;
                        p < q.len() && &q[p] == w
                    });
                }
                debug_assert!(!next.span_candidates.is_empty());
                next.n_value_words += 1;
            }
            (Clause::ValWords, Token::Sql(SqlTok::EndVal)) => {
                next.cur_col = None;
                next.cur_gold = None;
                next.n_value_words = 0;
                next.span_candidates.clear();
                next.clause = Clause::CondOrEnd;
            }
            (clause, tok) => unreachable!("mask admitted {tok:?} in {clause:?}"),
        }
        Ok(next)
    }
}
