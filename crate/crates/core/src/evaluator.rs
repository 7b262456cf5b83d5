//! Sequence-match, query-match and execution accuracies, plus the error
//! breakdown by clause. Sequence match accepts only the requested
//! linearization order; query and execution match accept all orderings.

use std::collections::HashMap;
use std::fmt;

use nl2sql_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::grammar::GrammarConfig;
use crate::model::{Model, Prediction};
use crate::query_ast::{linearize, query_equal, OrderPolicy, QueryTree, SqlTok, Token};
use crate::table_store::{execute, Example, Table};

pub const EXECUTION_REL_TOL: f64 = 1e-6;

/// Error counts. Sub-categories are relative to their parent: `select_*`
/// counts within SELECT-clause errors, clause flags within whole-query
/// errors. Both components of a clause can be wrong at once.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub whole_query: usize,
    pub select: usize,
    pub select_agg: usize,
    pub select_col: usize,
    pub select_both: usize,
    pub where_clause: usize,
    pub both_clauses: usize,
}

/// Per-example error flags.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorFlags {
    pub whole_query: bool,
    pub select: bool,
    pub select_agg: bool,
    pub select_col: bool,
    pub select_both: bool,
    pub where_clause: bool,
    pub both_clauses: bool,
}

/// Compare a predicted tree (None = unparseable) against gold. An
/// unparseable prediction fires every flag.
pub fn error_flags(pred: Option<&QueryTree>, gold: &QueryTree) -> ErrorFlags {
    let Some(pred) = pred else {
        return ErrorFlags {
            whole_query: true,
            select: true,
            select_agg: true,
            select_col: true,
            select_both: true,
            where_clause: true,
            both_clauses: true,
        };
    };
    let select_agg = pred.select_agg != gold.select_agg;
    let select_col = pred.select_col != gold.select_col;
    let select = select_agg || select_col;
    let where_clause =
        pred.canonicalize().conditions != gold.canonicalize().conditions;
    ErrorFlags {
        whole_query: !query_equal(pred, gold),
        select,
        select_agg,
        select_col,
        select_both: select_agg && select_col,
        where_clause,
        both_clauses: select && where_clause,
    }
}

impl ErrorBreakdown {
    fn add(&mut self, f: ErrorFlags) {
        self.whole_query += f.whole_query as usize;
        self.select += f.select as usize;
        self.select_agg += f.select_agg as usize;
        self.select_col += f.select_col as usize;
        self.select_both += f.select_both as usize;
        self.where_clause += f.where_clause as usize;
        self.both_clauses += f.both_clauses as usize;
    }

    /// Percentages relative to the parent category, in table order:
    /// whole query (of all), select / where / both (of whole-query errors),
    /// aggregator / column / both (of select errors).
    pub fn percentages(&self, total: usize) -> Vec<(String, f64)> {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        vec![
            ("whole_query".into(), pct(self.whole_query, total)),
            ("select".into(), pct(self.select, self.whole_query)),
            ("select_agg".into(), pct(self.select_agg, self.select)),
            ("select_col".into(), pct(self.select_col, self.select)),
            ("select_both".into(), pct(self.select_both, self.select)),
            ("where".into(), pct(self.where_clause, self.whole_query)),
            ("both_clauses".into(), pct(self.both_clauses, self.whole_query)),
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub acc_lf: f64,
    pub acc_qm: f64,
    pub acc_ex: f64,
    pub breakdown: ErrorBreakdown,
}

impl EvalReport {
    /// Plain-text rendering in the style of the accuracy/error tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "n = {}\nAcc_LF = {:.4}\nAcc_QM = {:.4}\nAcc_EX = {:.4}\n",
            self.n, self.acc_lf, self.acc_qm, self.acc_ex
        ));
        out.push_str("error breakdown (% of parent category):\n");
        for (name, pct) in self.breakdown.percentages(self.n) {
            out.push_str(&format!("  {name:<12} {pct:6.1}\n"));
        }
        out
    }
}

#[derive(Debug)]
pub enum EvalError {
    MissingTable(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::MissingTable(id) => write!(f, "table {id:?} not found"),
        }
    }
}

impl std::error::Error for EvalError {}

fn strip_end(tokens: &[Token]) -> &[Token] {
    match tokens.last() {
        Some(Token::Sql(SqlTok::End)) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Score predictions against gold. `policy` fixes the linearization that
/// sequence match accepts.
pub fn evaluate(
    preds: &[Prediction],
    examples: &[Example],
    tables: &HashMap<String, Table>,
    policy: OrderPolicy,
) -> Result<EvalReport, EvalError> {
    assert_eq!(preds.len(), examples.len(), "one prediction per example");
    let mut lf = 0usize;
    let mut qm = 0usize;
    let mut ex_ok = 0usize;
    let mut breakdown = ErrorBreakdown::default();

    for (pred, example) in preds.iter().zip(examples) {
        let table = tables
            .get(&example.table_id)
            .ok_or_else(|| EvalError::MissingTable(example.table_id.clone()))?;
        let gold = &example.gold;

        let gold_lin = linearize(gold, &table.schema, policy)
            .expect("gold tree valid against its schema");
        if strip_end(&pred.tokens) == gold_lin.tokens.as_slice() {
            lf += 1;
        }

        let tree_equal = pred
            .tree
            .as_ref()
            .is_some_and(|t| query_equal(t, gold));
        if tree_equal {
            qm += 1;
        }

        // query-equal trees execute identically by construction; otherwise
        // compare results, treating execution errors as incorrect
        let exec_equal = tree_equal
            || pred.tree.as_ref().is_some_and(|t| {
                match (execute(t, table), execute(gold, table)) {
                    (Ok(a), Ok(b)) => a.matches(&b, EXECUTION_REL_TOL),
                    _ => false,
                }
            });
        if exec_equal {
            ex_ok += 1;
        }

        breakdown.add(error_flags(pred.tree.as_ref(), gold));
    }

    let n = examples.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(EvalReport {
        n,
        acc_lf: frac(lf),
        acc_qm: frac(qm),
        acc_ex: frac(ex_ok),
        breakdown,
    })
}

/// Greedy-decode every example with the model.
pub fn predict_all<F: Scalar>(
    model: &Model<F>,
    examples: &[Example],
    tables: &HashMap<String, Table>,
    grammar_cfg: GrammarConfig,
    constrained: bool,
) -> Result<Vec<Prediction>, EvalError> {
    examples
        .iter()
        .map(|ex| {
            let table = tables
                .get(&ex.table_id)
                .ok_or_else(|| EvalError::MissingTable(ex.table_id.clone()))?;
            Ok(model.greedy_decode(&ex.question, &table.schema, grammar_cfg, constrained))
        })
        .collect()
}

/// Decode and score in one go.
pub fn evaluate_model<F: Scalar>(
    model: &Model<F>,
    examples: &[Example],
    tables: &HashMap<String, Table>,
    policy: OrderPolicy,
    grammar_cfg: GrammarConfig,
    constrained: bool,
) -> Result<EvalReport, EvalError> {
    let preds = predict_all(model, examples, tables, grammar_cfg, constrained)?;
    evaluate(&preds, examples, tables, policy)
}
