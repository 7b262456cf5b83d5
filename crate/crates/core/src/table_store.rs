//! WikiSQL-style dataset and table loading (JSON Lines), plus in-memory
//! execution of query trees for execution accuracy.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::query_ast::{Agg, CmpOp, Condition, QueryTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColType {
    Text,
    Float,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table_id: String,
    /// Column names as word sequences (headers are tokenized on load).
    pub column_names: Vec<Vec<String>>,
    pub column_types: Vec<ColType>,
}

impl TableSchema {
    pub fn num_columns(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_type(&self, col: usize) -> ColType {
        self.column_types[col]
    }

    pub fn column_name(&self, col: usize) -> &[String] {
        &self.column_names[col]
    }

    pub fn column_name_joined(&self, col: usize, sep: &str) -> String {
        self.column_names[col].join(sep)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Float(f64),
    Text(String),
}

impl Cell {
    fn sort_key(&self) -> (u8, String) {
        match self {
            Cell::Text(s) => (0, s.clone()),
            Cell::Float(x) => (1, format!("{:e}", x)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Cell>>,
}

/// One dataset entry: a tokenized question, the table it runs against, and
/// the gold tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub question: Vec<String>,
    pub table_id: String,
    pub gold: QueryTree,
}

/// Execution output: a multiset of cells for the dummy aggregator, a scalar
/// otherwise. MAX/MIN/SUM/AVG over an empty selection yield `Empty`.
#[derive(Clone, Debug, PartialEq)]
pub enum ResultSet {
    Cells(Vec<Cell>),
    Scalar(f64),
    Empty,
}

impl ResultSet {
    /// Equality as used by execution accuracy: multiset equality for cells,
    /// relative tolerance for scalars.
    pub fn matches(&self, other: &ResultSet, rel_tol: f64) -> bool {
        match (self, other) {
            (ResultSet::Empty, ResultSet::Empty) => true,
            (ResultSet::Scalar(a), ResultSet::Scalar(b)) => {
                a == b || (a - b).abs() <= rel_tol * a.abs().max(b.abs())
            }
            (ResultSet::Cells(a), ResultSet::Cells(b)) => {
                if a.len() != b.len() {
                    return false;
                }
                let mut xa: Vec<_> = a.iter().map(Cell::sort_key).collect();
                let mut xb: Vec<_> = b.iter().map(Cell::sort_key).collect();
                xa.sort();
                xb.sort();
                xa == xb
            }
            _ => false,
        }
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(std::io::Error),
    Format { line: usize, message: String },
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(e) => write!(f, "io error: {e}"),
            LoadError::Format { line, message } => {
                write!(f, "format error at line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for LoadError {}

impl From<std::io::Error> for LoadError {
    fn from(e: std::io::Error) -> Self {
        LoadError::Io(e)
    }
}

fn format_err(line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Format {
        line,
        message: message.into(),
    }
}

/// Why an example was set aside instead of loaded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// A condition value does not occur contiguously in the question.
    NotCopyable { cond_index: usize },
    /// A condition value tokenized to nothing.
    EmptyValue { cond_index: usize },
    /// The referenced table is unknown.
    MissingTable,
    /// The gold tree violates the schema's bounds or type rules.
    InvalidGold { detail: String },
}

#[derive(Clone, Debug)]
pub struct RejectedExample {
    pub line: usize,
    pub example: Example,
    pub reason: RejectReason,
}

/// Lowercase, split on whitespace and punctuation, keep numbers (including
/// an internal decimal point) as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if c == '.'
            && !cur.is_empty()
            && cur.chars().all(|d| d.is_ascii_digit())
            && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())
        {
            cur.push('.');
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
        i += 1;
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Position of `needle` as a contiguous subsequence of `haystack`.
pub fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).find(|&s| haystack[s..s + needle.len()] == *needle)
}

#[derive(Deserialize)]
struct RawExample {
    question: String,
    table_id: String,
    sql: RawSql,
}

#[derive(Deserialize)]
struct RawSql {
    sel: usize,
    agg: usize,
    conds: Vec<(usize, usize, serde_json::Value)>,
}

fn value_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Load a JSON Lines dataset. Examples whose condition values cannot be
/// copied from the question go to the rejects list with a reason; they are
/// never silently dropped.
pub fn load_dataset(path: &Path) -> Result<(Vec<Example>, Vec<RejectedExample>), LoadError> {
    let file = File::open(path)?;
    let mut examples = Vec::new();
    let mut rejects = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(&line)
            .map_err(|e| format_err(lineno, format!("bad example record: {e}")))?;
        let question = tokenize(&raw.question);
        if question.is_empty() {
            return Err(format_err(lineno, "question tokenized to nothing"));
        }
        let agg = Agg::from_id(raw.sql.agg)
            .ok_or_else(|| format_err(lineno, format!("unknown aggregator id {}", raw.sql.agg)))?;
        let mut conditions = Vec::with_capacity(raw.sql.conds.len());
        let mut reject: Option<RejectReason> = None;
        for (ci, (col, op_id, value)) in raw.sql.conds.iter().enumerate() {
            let op = CmpOp::from_id(*op_id)
                .ok_or_else(|| format_err(lineno, format!("unknown operator id {op_id}")))?;
            let value_str = value_to_string(value)
                .ok_or_else(|| format_err(lineno, "condition value must be string or number"))?;
            let value_tokens = tokenize(&value_str);
            if value_tokens.is_empty() {
                reject.get_or_insert(RejectReason::EmptyValue { cond_index: ci });
            } else if find_subsequence(&question, &value_tokens).is_none() {
                reject.get_or_insert(RejectReason::NotCopyable { cond_index: ci });
            }
            conditions.push(Condition {
                column: *col,
                op,
                value: value_tokens,
            });
        }
        let example = Example {
            question,
            table_id: raw.table_id,
            gold: QueryTree::new(agg, raw.sql.sel, conditions),
        };
        match reject {
            Some(reason) => rejects.push(RejectedExample {
                line: lineno,
                example,
                reason,
            }),
            None => examples.push(example),
        }
    }
    Ok((examples, rejects))
}

/// Lenient loader for prediction inputs: `sql` is optional.
pub fn load_questions(path: &Path) -> Result<Vec<(Vec<String>, String)>, LoadError> {
    #[derive(Deserialize)]
    struct RawQuestion {
        question: String,
        table_id: String,
    }
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(&line)
            .map_err(|e| format_err(i + 1, format!("bad question record: {e}")))?;
        out.push((tokenize(&raw.question), raw.table_id));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawTable {
    id: String,
    header: Vec<String>,
    types: Vec<String>,
    rows: Vec<Vec<serde_json::Value>>,
}

/// Load a JSON Lines tables file into a map keyed by table id.
pub fn load_tables(path: &Path) -> Result<HashMap<String, Table>, LoadError> {
    let file = File::open(path)?;
    let mut tables = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTable = serde_json::from_str(&line)
            .map_err(|e| format_err(lineno, format!("bad table record: {e}")))?;
        if raw.header.is_empty() {
            return Err(format_err(lineno, "table has no columns"));
        }
        if raw.header.len() != raw.types.len() {
            return Err(format_err(lineno, "header and types lengths differ"));
        }
        let mut column_types = Vec::with_capacity(raw.types.len());
        for t in &raw.types {
            column_types.push(match t.as_str() {
                "text" => ColType::Text,
                "real" => ColType::Float,
                other => return Err(format_err(lineno, format!("unknown column type {other:?}"))),
            });
        }
        let column_names: Vec<Vec<String>> = raw.header.iter().map(|h| tokenize(h)).collect();
        if column_names.iter().any(|n| n.is_empty()) {
            return Err(format_err(lineno, "column header tokenized to nothing"));
        }
        let mut rows = Vec::with_capacity(raw.rows.len());
        for (ri, raw_row) in raw.rows.iter().enumerate() {
            if raw_row.len() != column_types.len() {
                return Err(format_err(
                    lineno,
                    format!("row {ri} has {} cells, expected {}", raw_row.len(), column_types.len()),
                ));
            }
            let mut row = Vec::with_capacity(raw_row.len());
            for (ci, cell) in raw_row.iter().enumerate() {
                row.push(match column_types[ci] {
                    ColType::Text => match cell {
                        serde_json::Value::String(s) => Cell::Text(s.clone()),
                        serde_json::Value::Number(n) => Cell::Text(n.to_string()),
                        other => {
                            return Err(format_err(
                                lineno,
                                format!("row {ri} col {ci}: unsupported text cell {other}"),
                            ))
                        }
                    },
                    ColType::Float => {
                        let parsed = match cell {
                            serde_json::Value::Number(n) => n.as_f64(),
                            serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
                            _ => None,
                        };
                        match parsed {
                            Some(x) if x.is_finite() => Cell::Float(x),
                            _ => {
                                return Err(format_err(
                                    lineno,
                                    format!("row {ri} col {ci}: cell {cell} is not a finite number"),
                                ))
                            }
                        }
                    }
                });
            }
            rows.push(row);
        }
        let table = Table {
            schema: TableSchema {
                table_id: raw.id.clone(),
                column_names,
                column_types,
            },
            rows,
        };
        if tables.insert(raw.id.clone(), table).is_some() {
            return Err(format_err(lineno, format!("duplicate table id {:?}", raw.id)));
        }
    }
    Ok(tables)
}

/// Cross-check loaded examples against their tables: table must exist and
/// the gold tree must satisfy its invariants against the schema.
pub fn validate_against_tables(
    examples: Vec<Example>,
    tables: &HashMap<String, Table>,
) -> (Vec<Example>, Vec<RejectedExample>) {
    let mut kept = Vec::with_capacity(examples.len());
    let mut rejects = Vec::new();
    for (i, ex) in examples.into_iter().enumerate() {
        let reason = match tables.get(&ex.table_id) {
            None => Some(RejectReason::MissingTable),
            Some(table) => ex
                .gold
                .validate(&table.schema)
                .err()
                .map(|e| RejectReason::InvalidGold {
                    detail: e.to_string(),
                }),
        };
        match reason {
            Some(reason) => rejects.push(RejectedExample {
                line: i + 1,
                example: ex,
                reason,
            }),
            None => kept.push(ex),
        }
    }
    (kept, rejects)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExecError {
    /// A float-column condition value does not parse as a number; callers
    /// score such predictions as incorrect rather than crashing.
    ValueParse { column: usize, value: String },
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::ValueParse { column, value } => {
                write!(f, "value {value:?} for float column {column} is not numeric")
            }
        }
    }
}

impl std::error::Error for ExecError {}

/// Normalize a text cell the same way condition values are normalized, so
/// copied values compare case-insensitively with single-space separation.
fn normalize_text(s: &str) -> String {
    tokenize(s).join(" ")
}

fn parse_value_tokens(tokens: &[String]) -> Option<f64> {
    let spaced = tokens.join(" ");
    if let Ok(x) = spaced.trim().parse::<f64>() {
        return Some(x);
    }
    let fused = tokens.concat();
    fused.trim().parse::<f64>().ok()
}

enum CompiledCond {
    Text { column: usize, want: String },
    Float { column: usize, op: CmpOp, lit: f64 },
}

/// Execute a query tree: filter rows on all conditions, project the selected
/// column, apply the aggregator. COUNT of an empty selection is 0; the other
/// aggregators yield `Empty`. Condition literals are parsed up front so the
/// result (including errors) never depends on condition order.
pub fn execute(tree: &QueryTree, table: &Table) -> Result<ResultSet, ExecError> {
    let schema = &table.schema;
    debug_assert!(tree.validate(schema).is_ok(), "execute on invalid tree");

    let compiled: Vec<CompiledCond> = tree
        .conditions
        .iter()
        .map(|cond| match schema.column_type(cond.column) {
            ColType::Text => Ok(CompiledCond::Text {
                column: cond.column,
                want: cond.value.join(" "),
            }),
            ColType::Float => parse_value_tokens(&cond.value)
                .map(|lit| CompiledCond::Float {
                    column: cond.column,
                    op: cond.op,
                    lit,
                })
                .ok_or(ExecError::ValueParse {
                    column: cond.column,
                    value: cond.value.join(" "),
                }),
        })
        .collect::<Result<_, _>>()?;

    let mut selected: Vec<&Cell> = Vec::new();
    'rows: for row in &table.rows {
        for cond in &compiled {
            let holds = match cond {
                CompiledCond::Text { column, want } => match &row[*column] {
                    Cell::Text(s) => normalize_text(s) == *want,
                    Cell::Float(_) => false,
                },
                CompiledCond::Float { column, op, lit } => match &row[*column] {
                    Cell::Float(x) => match op {
                        CmpOp::Eq => x == lit,
                        CmpOp::Gt => x > lit,
                        CmpOp::Lt => x < lit,
                    },
                    Cell::Text(_) => false,
                },
            };
            if !holds {
                continue 'rows;
            }
        }
        selected.push(&row[tree.select_col]);
    }

    let floats = || -> Vec<f64> {
        selected
            .iter()
            .filter_map(|c| match c {
                Cell::Float(x) => Some(*x),
                Cell::Text(_) => None,
            })
            .collect()
    };

    Ok(match tree.select_agg {
        Agg::None => ResultSet::Cells(selected.into_iter().cloned().collect()),
        Agg::Count => ResultSet::Scalar(selected.len() as f64),
        Agg::Max | Agg::Min | Agg::Sum | Agg::Avg => {
            let xs = floats();
            if xs.is_empty() {
                ResultSet::Empty
            } else {
                ResultSet::Scalar(match tree.select_agg {
                    Agg::Max => xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    Agg::Min => xs.iter().cloned().fold(f64::INFINITY, f64::min),
                    Agg::Sum => xs.iter().sum(),
                    Agg::Avg => xs.iter().sum::<f64>() / xs.len() as f64,
                    _ => unreachable!(),
                })
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(dir: &tempfile::TempDir, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    #[test]
    fn tokenizer_lowercases_splits_punctuation_keeps_numbers() {
        assert_eq!(
            tokenize("How much L1-Cache with FSB of 800MHz and 1.0 GHz?"),
            ["how", "much", "l1", "cache", "with", "fsb", "of", "800mhz", "and", "1.0", "ghz"]
        );
        assert_eq!(tokenize("A.B. 3.14. x."), ["a", "b", "3.14", "x"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn load_dataset_worked_example_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "data.jsonl",
            &[
                r#"{"question": "How much L1 Cache with an FSB speed of 800 and a clock speed of 1.0?", "table_id": "t1", "sql": {"sel": 0, "agg": 0, "conds": [[1, 0, "800"], [2, 0, "1.0"]]}}"#,
                r#"{"question": "rows with speed 700", "table_id": "t1", "sql": {"sel": 0, "agg": 0, "conds": [[1, 0, "900"]]}}"#,
            ],
        );
        let (examples, rejects) = load_dataset(&path).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].gold.conditions.len(), 2);
        assert_eq!(examples[0].gold.conditions[1].value, vec!["1.0"]);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].line, 2);
        assert_eq!(rejects[0].reason, RejectReason::NotCopyable { cond_index: 0 });
    }

    #[test]
    fn load_dataset_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(&dir, "empty.jsonl", &[]);
        let (examples, rejects) = load_dataset(&path).unwrap();
        assert!(examples.is_empty());
        assert!(rejects.is_empty());
    }

    #[test]
    fn load_dataset_bad_record_is_format_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "bad.jsonl",
            &[r#"{"question": "q", "table_id": "t"}"#],
        );
        match load_dataset(&path) {
            Err(LoadError::Format { line: 1, .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    fn table_line() -> &'static str {
        r#"{"id": "t1", "header": ["Name", "Speed", "Year"], "types": ["text", "real", "real"], "rows": [["alpha", 800, 2001], ["beta", "1.2", 2002]]}"#
    }

    #[test]
    fn load_tables_parses_types_and_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(&dir, "tables.jsonl", &[table_line()]);
        let tables = load_tables(&path).unwrap();
        assert_eq!(tables.len(), 1);
        let t = &tables["t1"];
        assert_eq!(t.schema.column_types, vec![ColType::Text, ColType::Float, ColType::Float]);
        assert_eq!(t.schema.column_names[0], vec!["name"]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1][1], Cell::Float(1.2));
    }

    #[test]
    fn duplicate_table_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(&dir, "dup.jsonl", &[table_line(), table_line()]);
        match load_tables(&path) {
            Err(LoadError::Format { line: 2, message }) => {
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_float_cell_is_type_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "badcell.jsonl",
            &[r#"{"id": "t", "header": ["X"], "types": ["real"], "rows": [["not-a-number"]]}"#],
        );
        assert!(matches!(load_tables(&path), Err(LoadError::Format { .. })));
    }

    fn processor_table() -> Table {
        Table {
            schema: TableSchema {
                table_id: "t1".into(),
                column_names: vec![
                    vec!["l1".into(), "cache".into()],
                    vec!["fsb".into(), "speed".into()],
                    vec!["clock".into(), "speed".into()],
                ],
                column_types: vec![ColType::Text, ColType::Float, ColType::Float],
            },
            rows: vec![
                vec![Cell::Text("64KB".into()), Cell::Float(800.0), Cell::Float(1.0)],
                vec![Cell::Text("128KB".into()), Cell::Float(800.0), Cell::Float(2.0)],
                vec![Cell::Text("256KB".into()), Cell::Float(400.0), Cell::Float(1.0)],
            ],
        }
    }

    fn worked_example_tree() -> QueryTree {
        QueryTree::new(
            Agg::None,
            0,
            vec![
                Condition { column: 1, op: CmpOp::Eq, value: vec!["800".into()] },
                Condition { column: 2, op: CmpOp::Eq, value: vec!["1.0".into()] },
            ],
        )
    }

    #[test]
    fn execute_worked_example_retrieves_the_matching_row() {
        let table = processor_table();
        let result = execute(&worked_example_tree(), &table).unwrap();
        assert_eq!(result, ResultSet::Cells(vec![Cell::Text("64KB".into())]));
    }

    #[test]
    fn execute_is_invariant_under_condition_permutation() {
        let table = processor_table();
        let tree = worked_example_tree();
        let mut flipped = tree.clone();
        flipped.conditions.reverse();
        assert_eq!(execute(&tree, &table).unwrap(), execute(&flipped, &table).unwrap());
    }

    #[test]
    fn count_of_empty_selection_is_zero_scalar() {
        let table = processor_table();
        let tree = QueryTree::new(
            Agg::Count,
            1,
            vec![Condition { column: 1, op: CmpOp::Gt, value: vec!["9000".into()] }],
        );
        assert_eq!(execute(&tree, &table).unwrap(), ResultSet::Scalar(0.0));
    }

    #[test]
    fn float_aggregates_over_empty_selection_yield_empty() {
        let table = processor_table();
        for agg in [Agg::Max, Agg::Min, Agg::Sum, Agg::Avg] {
            let tree = QueryTree::new(
                agg,
                1,
                vec![Condition { column: 1, op: CmpOp::Gt, value: vec!["9000".into()] }],
            );
            assert_eq!(execute(&tree, &table).unwrap(), ResultSet::Empty);
        }
    }

    #[test]
    fn aggregates_match_independent_fold() {
        let table = processor_table();
        let speeds = [800.0, 800.0, 400.0];
        let cases = [
            (Agg::Max, speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
            (Agg::Min, speeds.iter().cloned().fold(f64::INFINITY, f64::min)),
            (Agg::Sum, speeds.iter().sum::<f64>()),
            (Agg::Avg, speeds.iter().sum::<f64>() / speeds.len() as f64),
            (Agg::Count, speeds.len() as f64),
        ];
        for (agg, want) in cases {
            let tree = QueryTree::new(agg, 1, vec![]);
            assert_eq!(execute(&tree, &table).unwrap(), ResultSet::Scalar(want));
        }
    }

    #[test]
    fn text_match_is_case_insensitive_and_space_normalized() {
        let table = processor_table();
        let tree = QueryTree::new(
            Agg::Count,
            1,
            vec![Condition { column: 0, op: CmpOp::Eq, value: vec!["64kb".into()] }],
        );
        assert_eq!(execute(&tree, &table).unwrap(), ResultSet::Scalar(1.0));
    }

    #[test]
    fn unparseable_float_value_surfaces_value_parse_error() {
        let table = processor_table();
        let tree = QueryTree::new(
            Agg::None,
            0,
            vec![Condition { column: 1, op: CmpOp::Eq, value: vec!["fast".into()] }],
        );
        assert!(matches!(
            execute(&tree, &table),
            Err(ExecError::ValueParse { column: 1, .. })
        ));
    }

    #[test]
    fn validate_against_tables_flags_missing_and_invalid() {
        let mut tables = HashMap::new();
        tables.insert("t1".to_string(), processor_table());
        let good = Example {
            question: tokenize("how many rows have fsb speed of 800"),
            table_id: "t1".into(),
            gold: QueryTree::new(Agg::Count, 1, vec![]),
        };
        let missing = Example {
            question: tokenize("q"),
            table_id: "nope".into(),
            gold: QueryTree::new(Agg::None, 0, vec![]),
        };
        let invalid = Example {
            question: tokenize("q"),
            table_id: "t1".into(),
            gold: QueryTree::new(Agg::Sum, 0, vec![]), // SUM over text column
        };
        let (kept, rejects) = validate_against_tables(vec![good, missing, invalid], &tables);
        assert_eq!(kept.len(), 1);
        assert_eq!(rejects.len(), 2);
        assert_eq!(rejects[0].reason, RejectReason::MissingTable);
        assert!(matches!(rejects[1].reason, RejectReason::InvalidGold { .. }));
    }

    #[test]
    fn result_set_scalar_tolerance() {
        let a = ResultSet::Scalar(1.0);
        let b = ResultSet::Scalar(1.0 + 5e-7);
        assert!(a.matches(&b, 1e-6));
        let c = ResultSet::Scalar(1.01);
        assert!(!a.matches(&c, 1e-6));
        assert!(!a.matches(&ResultSet::Empty, 1e-6));
    }
}
