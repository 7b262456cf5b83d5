//! Synthetic corpus generator: random tables with mixed text/float columns
//! and template-based questions that embed every condition value verbatim,
//! so copy supervision always applies. By default all splits draw questions
//! from one table pool (dev/test still ask unseen queries); an option makes
//! the table sets disjoint instead. Deterministic per seed, byte-for-byte.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nl2sql_tensor::Rng;

use crate::query_ast::{Agg, CmpOp, Condition, QueryTree};
use crate::table_store::{Cell, ColType, Example, Table, TableSchema};

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_tables: usize,
    pub vocab_size: usize,
    pub max_conditions: usize,
    pub seed: u64,
    /// Share the table pool across splits (dev/test still see unseen
    /// question/query combinations). With `false`, splits get disjoint
    /// tables; zero-shot schema transfer at this scale needs pretrained
    /// embeddings, which are an optional input here.
    pub shared_tables: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_train: 2000,
            n_dev: 300,
            n_test: 300,
            n_tables: 50,
            vocab_size: 300,
            max_conditions: 3,
            seed: 1,
            shared_tables: true,
        }
    }
}

pub struct SynthData {
    pub tables: Vec<Table>,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl SynthData {
    pub fn tables_map(&self) -> HashMap<String, Table> {
        self.tables
            .iter()
            .map(|t| (t.schema.table_id.clone(), t.clone()))
            .collect()
    }
}

const SYLLABLES: [&str; 20] = [
    "ba", "den", "ri", "mo", "ka", "lu", "ter", "san", "vel", "por", "ne", "gi", "fa", "zu",
    "chi", "wor", "hel", "tam", "os", "pli",
];

/// Deterministic pronounceable pseudo-word for pool index `i`.
fn pseudo_word(i: usize) -> String {
    let k = SYLLABLES.len();
    let mut s = String::new();
    s.push_str(SYLLABLES[i % k]);
    s.push_str(SYLLABLES[(i / k) % k]);
    if i >= k * k {
        s.push_str(SYLLABLES[(i / (k * k)) % k]);
    }
    s
}

struct Pools {
    col_words: Vec<String>,
    text_words: Vec<String>,
    numbers: Vec<String>,
}

fn build_pools(vocab_size: usize, rng: &mut Rng) -> Pools {
    // filler words in the templates account for ~30 distinct words
    let base = vocab_size.saturating_sub(30).max(30);
    let n_col = (base / 5).max(8);
    let n_text = (2 * base / 5).max(10);
    let n_num = base.saturating_sub(n_col + n_text).max(10);

    let col_words = (0..n_col).map(pseudo_word).collect();
    let text_words = (n_col..n_col + n_text).map(pseudo_word).collect();
    let mut numbers = Vec::with_capacity(n_num);
    let mut seen = std::collections::HashSet::new();
    while numbers.len() < n_num {
        let num = if rng.bernoulli(0.5) {
            format!("{}", 10 + rng.gen_range(990))
        } else {
            format!("{}.{}", rng.gen_range(100), rng.gen_range(10))
        };
        if seen.insert(num.clone()) {
            numbers.push(num);
        }
    }
    Pools {
        col_words,
        text_words,
        numbers,
    }
}

/// Per-column pool of cell values (as value-token sequences).
enum ColValues {
    Text(Vec<Vec<String>>),
    Float(Vec<String>),
}

struct SynthTable {
    table: Table,
    values: Vec<ColValues>,
}

fn gen_table(id: usize, pools: &Pools, rng: &mut Rng) -> SynthTable {
    let n_cols = 3 + rng.gen_range(3);
    let mut names: Vec<Vec<String>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while names.len() < n_cols {
        let n_words = 1 + rng.gen_range(2);
        let name: Vec<String> = (0..n_words)
            .map(|_| pools.col_words[rng.gen_range(pools.col_words.len())].clone())
            .collect();
        if seen.insert(name.join(" ")) {
            names.push(name);
        }
    }
    // at least one text and one float column
    let mut types: Vec<ColType> = (0..n_cols)
        .map(|_| {
            if rng.bernoulli(0.5) {
                ColType::Float
            } else {
                ColType::Text
            }
        })
        .collect();
    if !types.contains(&ColType::Text) {
        types[0] = ColType::Text;
    }
    if !types.contains(&ColType::Float) {
        types[n_cols - 1] = ColType::Float;
    }

    // small per-column value pools so equality conditions can match rows
    let values: Vec<ColValues> = types
        .iter()
        .map(|ty| match ty {
            ColType::Text => {
                let k = 4 + rng.gen_range(4);
                ColValues::Text(
                    (0..k)
                        .map(|_| {
                            let w = 1 + rng.gen_range(2);
                            (0..w)
                                .map(|_| {
                                    pools.text_words[rng.gen_range(pools.text_words.len())].clone()
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            ColType::Float => {
                let k = 5 + rng.gen_range(5);
                ColValues::Float(
                    (0..k)
                        .map(|_| pools.numbers[rng.gen_range(pools.numbers.len())].clone())
                        .collect(),
                )
            }
        })
        .collect();

    let n_rows = 8 + rng.gen_range(9);
    let rows: Vec<Vec<Cell>> = (0..n_rows)
        .map(|_| {
            values
                .iter()
                .map(|v| match v {
                    ColValues::Text(pool) => {
                        Cell::Text(pool[rng.gen_range(pool.len())].join(" "))
                    }
                    ColValues::Float(pool) => {
                        Cell::Float(pool[rng.gen_range(pool.len())].parse().unwrap())
                    }
                })
                .collect()
        })
        .collect();

    SynthTable {
        table: Table {
            schema: TableSchema {
                table_id: format!("t{id}"),
                column_names: names,
                column_types: types,
            },
            rows,
        },
        values,
    }
}

fn agg_phrase(agg: Agg, rng: &mut Rng) -> &'static str {
    match agg {
        Agg::None => "the",
        Agg::Max => *rng.choose(&["the highest", "the maximum"]),
        Agg::Min => *rng.choose(&["the lowest", "the minimum"]),
        Agg::Count => "the number of",
        Agg::Sum => "the total",
        Agg::Avg => "the average",
    }
}

fn cond_phrase(cond: &Condition, schema: &TableSchema, rng: &mut Rng) -> String {
    let col = schema.column_name_joined(cond.column, " ");
    let val = cond.value.join(" ");
    match cond.op {
        CmpOp::Eq => match rng.gen_range(2) {
            0 => format!("{col} is {val}"),
            _ => format!("{col} equals {val}"),
        },
        CmpOp::Gt => match rng.gen_range(2) {
            0 => format!("{col} is above {val}"),
            _ => format!("{col} greater than {val}"),
        },
        CmpOp::Lt => match rng.gen_range(2) {
            0 => format!("{col} is below {val}"),
            _ => format!("{col} less than {val}"),
        },
    }
}

/// Three paraphrase templates per condition count; conditions are mentioned
/// in their original (dataset) order.
fn render_question(
    agg: Agg,
    sel: &str,
    conds: &[String],
    rng: &mut Rng,
) -> String {
    let aggw = agg_phrase(agg, rng);
    let t = rng.gen_range(3);
    match conds.len() {
        0 => match t {
            0 => format!("what is {aggw} {sel} in the table"),
            1 => format!("show {aggw} {sel} for all rows"),
            _ => format!("list {aggw} {sel} of every row"),
        },
        1 => match t {
            0 => format!("what is {aggw} {sel} when {}", conds[0]),
            1 => format!("show {aggw} {sel} for rows where {}", conds[0]),
            _ => format!("find {aggw} {sel} with {}", conds[0]),
        },
        2 => match t {
            0 => format!("what is {aggw} {sel} when {} and {}", conds[0], conds[1]),
            1 => format!("show {aggw} {sel} where {} and also {}", conds[0], conds[1]),
            _ => format!("find {aggw} {sel} with {} given {}", conds[0], conds[1]),
        },
        _ => match t {
            0 => format!(
                "what is {aggw} {sel} when {} and {} and {}",
                conds[0], conds[1], conds[2]
            ),
            1 => format!(
                "show {aggw} {sel} where {} and {} and also {}",
                conds[0], conds[1], conds[2]
            ),
            _ => format!(
                "find {aggw} {sel} with {} and {} given {}",
                conds[0], conds[1], conds[2]
            ),
        },
    }
}

fn gen_example(st: &SynthTable, max_conditions: usize, rng: &mut Rng) -> Example {
    let schema = &st.table.schema;
    let n_cols = schema.num_columns();
    let select_col = rng.gen_range(n_cols);
    let select_agg = match schema.column_type(select_col) {
        ColType::Text => {
            if rng.bernoulli(0.75) {
                Agg::None
            } else {
                Agg::Count
            }
        }
        ColType::Float => {
            if rng.bernoulli(0.55) {
                Agg::None
            } else {
                *rng.choose(&[Agg::Max, Agg::Min, Agg::Count, Agg::Sum, Agg::Avg])
            }
        }
    };

    let cap = max_conditions.min(n_cols);
    let weights: Vec<f64> = [0.15, 0.35, 0.30, 0.20][..=cap].to_vec();
    let n_conds = rng.sample_weighted(&weights);

    let mut cols: Vec<usize> = (0..n_cols).collect();
    rng.shuffle(&mut cols);
    let conditions: Vec<Condition> = cols[..n_conds]
        .iter()
        .map(|&column| {
            let (op, value) = match &st.values[column] {
                ColValues::Text(pool) => (CmpOp::Eq, pool[rng.gen_range(pool.len())].clone()),
                ColValues::Float(pool) => {
                    let op = match rng.gen_range(5) {
                        0 => CmpOp::Gt,
                        1 => CmpOp::Lt,
                        _ => CmpOp::Eq,
                    };
                    (op, vec![pool[rng.gen_range(pool.len())].clone()])
                }
            };
            Condition { column, op, value }
        })
        .collect();

    let gold = QueryTree::new(select_agg, select_col, conditions);
    debug_assert!(gold.validate(schema).is_ok());

    let rendered: Vec<String> = gold
        .conditions
        .iter()
        .map(|c| cond_phrase(c, schema, rng))
        .collect();
    let sel = schema.column_name_joined(select_col, " ");
    let question = render_question(select_agg, &sel, &rendered, rng);

    Example {
        question: crate::table_store::tokenize(&question),
        table_id: schema.table_id.clone(),
        gold,
    }
}

/// Generate tables and the three example splits over disjoint table sets.
pub fn generate(cfg: &GenConfig) -> SynthData {
    assert!(cfg.n_tables >= 3, "need at least one table per split");
    assert!(cfg.n_train > 0 && cfg.n_dev > 0 && cfg.n_test > 0);
    let mut rng = Rng::seeded(cfg.seed).split(0x5717);
    let pools = build_pools(cfg.vocab_size, &mut rng);
    let synth_tables: Vec<SynthTable> = (0..cfg.n_tables)
        .map(|i| gen_table(i, &pools, &mut rng))
        .collect();

    let (train_tabs, dev_tabs, test_tabs) = if cfg.shared_tables {
        let all: &[SynthTable] = &synth_tables;
        (all, all, all)
    } else {
        // disjoint table ranges: ~70% train, ~15% dev, rest test
        let n_dev_tables = (cfg.n_tables * 3 / 20).max(1);
        let n_test_tables = (cfg.n_tables * 3 / 20).max(1);
        let n_train_tables = cfg.n_tables - n_dev_tables - n_test_tables;
        let (train_tabs, rest) = synth_tables.split_at(n_train_tables);
        let (dev_tabs, test_tabs) = rest.split_at(n_dev_tables);
        (train_tabs, dev_tabs, test_tabs)
    };

    let gen_split = |tabs: &[SynthTable], n: usize, rng: &mut Rng| -> Vec<Example> {
        (0..n)
            .map(|_| gen_example(&tabs[rng.gen_range(tabs.len())], cfg.max_conditions, rng))
            .collect()
    };
    let train = gen_split(train_tabs, cfg.n_train, &mut rng);
    let dev = gen_split(dev_tabs, cfg.n_dev, &mut rng);
    let test = gen_split(test_tabs, cfg.n_test, &mut rng);

    SynthData {
        tables: synth_tables.into_iter().map(|s| s.table).collect(),
        train,
        dev,
        test,
    }
}

fn write_tables(path: &Path, tables: &[Table]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tables {
        let header: Vec<String> = t
            .schema
            .column_names
            .iter()
            .map(|n| n.join(" "))
            .collect();
        let types: Vec<&str> = t
            .schema
            .column_types
            .iter()
            .map(|ty| match ty {
                ColType::Text => "text",
                ColType::Float => "real",
            })
            .collect();
        let rows: Vec<Vec<serde_json::Value>> = t
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| match c {
                        Cell::Text(s) => serde_json::Value::String(s.clone()),
                        Cell::Float(x) => serde_json::json!(x),
                    })
                    .collect()
            })
            .collect();
        let line = serde_json::json!({
            "id": t.schema.table_id,
            "header": header,
            "types": types,
            "rows": rows,
        });
        writeln!(w, "{line}")?;
    }
    w.flush()
}

fn write_examples(path: &Path, examples: &[Example]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        let conds: Vec<serde_json::Value> = ex
            .gold
            .conditions
            .iter()
            .map(|c| {
                serde_json::json!([c.column, c.op.id(), c.value.join(" ")])
            })
            .collect();
        let line = serde_json::json!({
            "question": ex.question.join(" "),
            "table_id": ex.table_id,
            "sql": {"sel": ex.gold.select_col, "agg": ex.gold.select_agg.id(), "conds": conds},
        });
        writeln!(w, "{line}")?;
    }
    w.flush()
}

/// Paths of the four files a generation run writes.
pub struct SynthPaths {
    pub tables: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

pub fn write_files(data: &SynthData, out_dir: &Path) -> io::Result<SynthPaths> {
    std::fs::create_dir_all(out_dir)?;
    let paths = SynthPaths {
        tables: out_dir.join("tables.jsonl"),
        train: out_dir.join("train.jsonl"),
        dev: out_dir.join("dev.jsonl"),
        test: out_dir.join("test.jsonl"),
    };
    write_tables(&paths.tables, &data.tables)?;
    write_examples(&paths.train, &data.train)?;
    write_examples(&paths.dev, &data.dev)?;
    write_examples(&paths.test, &data.test)?;
    Ok(paths)
}
