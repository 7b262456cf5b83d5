//! Command-line pipeline: generate synthetic corpora, train models, evaluate
//! and predict, and reproduce the condition-order comparison at toy scale.

mod settings;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nl2sql_core::evaluator::{evaluate, evaluate_model};
use nl2sql_core::grammar::GrammarConfig;
use nl2sql_core::model::{load_checkpoint, read_pretrained, save_checkpoint, Model};
use nl2sql_core::query_ast::{linearize, LinearQuery, OrderPolicy};
use nl2sql_core::synth::{generate, write_files, GenConfig};
use nl2sql_core::table_store::{
    load_dataset, load_tables, validate_against_tables, Example, Table,
};
use nl2sql_core::trainer::{train, Regime, TrainConfig};
use settings::Settings;

#[derive(Parser)]
#[command(name = "nl2sql", version, about = "Question-to-SQL semantic parsing over single tables")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default, Clone)]
struct CommonFlags {
    /// Experiment config file (key = value lines); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training regime: tf | oracle | rl
    #[arg(long)]
    regime: Option<String>,
    /// Condition order for teacher forcing: original | reversed | arbitrary
    #[arg(long)]
    order: Option<String>,
    /// Copy head: shared | porg
    #[arg(long)]
    copy_head: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Teacher-forcing warm-start epochs before REINFORCE
    #[arg(long)]
    rl_warm_start: Option<usize>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    d_dec: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    decoder_layers: Option<usize>,
    #[arg(long)]
    input_dropout: Option<f64>,
    #[arg(long)]
    recurrent_dropout: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// Apply grammar constraints to the loss during training too
    #[arg(long)]
    constraints_in_training: bool,
    /// Allow the same column in several conditions
    #[arg(long)]
    allow_repeated_columns: bool,
    /// Optional pretrained embedding file ("word v1 ... v_demb" lines)
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl CommonFlags {
    fn to_settings(&self) -> Settings {
        Settings {
            regime: self.regime.clone(),
            order: self.order.clone(),
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            patience: self.patience,
            seed: self.seed,
            rl_warm_start_epochs: self.rl_warm_start,
            d_emb: self.d_emb,
            d_dec: self.d_dec,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            input_dropout: self.input_dropout,
            recurrent_dropout: self.recurrent_dropout,
            label_smoothing: self.label_smoothing,
            copy_head: self.copy_head.clone(),
            constraints_in_training: self.constraints_in_training.then_some(true),
            allow_repeated_columns: self.allow_repeated_columns.then_some(true),
            embeddings: self.embeddings.clone(),
        }
    }

    fn settings(&self) -> Result<Settings, String> {
        let base = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        Ok(base.overlay(&self.to_settings()))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus (tables + train/dev/test JSON Lines)
    GenData {
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 300)]
        n_dev: usize,
        #[arg(long, default_value_t = 300)]
        n_test: usize,
        #[arg(long, default_value_t = 50)]
        n_tables: usize,
        #[arg(long, default_value_t = 300)]
        vocab_size: usize,
        #[arg(long, default_value_t = 3)]
        max_conditions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Give each split its own disjoint table set
        #[arg(long)]
        disjoint_tables: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint and per-epoch metrics
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Evaluate a checkpoint (or gold itself) on a dataset
    Eval {
        #[arg(long, required_unless_present = "use_gold")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        /// Score the gold trees as predictions (pipeline sanity check)
        #[arg(long)]
        use_gold: bool,
        /// Decode without grammar constraints
        #[arg(long)]
        no_constraints: bool,
        /// Linearization order that sequence match accepts
        #[arg(long, default_value = "original")]
        order: String,
        /// Also write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Decode questions into linearized queries and trees
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_constraints: bool,
    },
    /// Train {original, reversed, arbitrary, oracle, rl} on one synthetic
    /// corpus and print the order-comparison table
    ReproOrder {
        #[arg(long, default_value_t = 600)]
        n_train: usize,
        #[arg(long, default_value_t = 150)]
        n_dev: usize,
        #[arg(long, default_value_t = 150)]
        n_test: usize,
        #[arg(long, default_value_t = 20)]
        n_tables: usize,
        #[arg(long, default_value_t = 220)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Where to write the comparison as JSON (printed regardless)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
}

fn order_from_str(s: &str, seed: u64) -> Result<OrderPolicy, String> {
    Ok(match s {
        "original" => OrderPolicy::Original,
        "reversed" => OrderPolicy::Reversed,
        "arbitrary" => OrderPolicy::ArbitraryPerTrial { seed },
        other => return Err(format!("unknown order {other:?}")),
    })
}

fn load_split(
    path: &Path,
    tables: &HashMap<String, Table>,
    name: &str,
) -> Result<Vec<Example>, String> {
    let (examples, rejects) = load_dataset(path).map_err(|e| format!("{name}: {e}"))?;
    if !rejects.is_empty() {
        eprintln!(
            "{name}: {} example(s) rejected at load (first: line {} {:?})",
            rejects.len(),
            rejects[0].line,
            rejects[0].reason
        );
    }
    let (kept, bad) = validate_against_tables(examples, tables);
    if !bad.is_empty() {
        eprintln!("{name}: {} example(s) rejected against tables", bad.len());
    }
    if kept.is_empty() {
        return Err(format!("{name}: no usable examples"));
    }
    Ok(kept)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::GenData {
            n_train,
            n_dev,
            n_test,
            n_tables,
            vocab_size,
            max_conditions,
            seed,
            disjoint_tables,
            out,
        } => {
            let cfg = GenConfig {
                n_train,
                n_dev,
                n_test,
                n_tables,
                vocab_size,
                max_conditions,
                seed,
                shared_tables: !disjoint_tables,
            };
            let data = generate(&cfg);
            let paths = write_files(&data, &out).map_err(|e| format!("write failed: {e}"))?;
            println!(
                "wrote {} tables, {}/{}/{} examples under {}",
                data.tables.len(),
                data.train.len(),
                data.dev.len(),
                data.test.len(),
                out.display()
            );
            println!(
                "  {}\n  {}\n  {}\n  {}",
                paths.tables.display(),
                paths.train.display(),
                paths.dev.display(),
                paths.test.display()
            );
            Ok(())
        }

        Cmd::Train {
            train: train_path,
            dev,
            tables,
            out,
            common,
        } => {
            let settings = common.settings()?;
            let train_cfg = settings.train_config()?;
            let model_cfg = settings.model_config()?;
            let grammar_cfg = settings.grammar_config();

            let tables = load_tables(&tables).map_err(|e| format!("tables: {e}"))?;
            let train_set = load_split(&train_path, &tables, "train")?;
            let dev_set = load_split(&dev, &tables, "dev")?;

            let pretrained = match &settings.embeddings {
                Some(path) => Some(read_pretrained(path, model_cfg.d_emb)?),
                None => None,
            };

            std::fs::create_dir_all(&out).map_err(|e| format!("cannot create out dir: {e}"))?;
            let mut log = std::fs::File::create(out.join("metrics.jsonl"))
                .map_err(|e| format!("cannot create metrics log: {e}"))?;

            let outcome = train::<f32>(
                &train_set,
                &dev_set,
                &tables,
                &train_cfg,
                &model_cfg,
                grammar_cfg,
                pretrained.as_ref(),
                Some(&mut log),
            )
            .map_err(|e| format!("training failed: {e}"))?;

            save_checkpoint(&outcome.model, grammar_cfg, &out)
                .map_err(|e| format!("checkpoint write failed: {e}"))?;
            println!(
                "trained {} epoch(s); best dev Acc_QM {:.4} at epoch {}; checkpoint in {}",
                outcome.history.len(),
                outcome.best_dev_acc_qm,
                outcome.best_epoch,
                out.display()
            );
            Ok(())
        }

        Cmd::Eval {
            model,
            data,
            tables,
            use_gold,
            no_constraints,
            order,
            json,
        } => {
            let tables = load_tables(&tables).map_err(|e| format!("tables: {e}"))?;
            let examples = load_split(&data, &tables, "eval")?;
            let policy = order_from_str(&order, 1)?;

            let report = if use_gold {
                let preds = examples
                    .iter()
                    .map(|ex| {
                        let schema = &tables[&ex.table_id].schema;
                        let tokens = linearize(&ex.gold, schema, policy)
                            .expect("gold valid")
                            .tokens;
                        nl2sql_core::model::Prediction {
                            tokens,
                            tree: Some(ex.gold.clone()),
                        }
                    })
                    .collect::<Vec<_>>();
                evaluate(&preds, &examples, &tables, policy).map_err(|e| e.to_string())?
            } else {
                let dir = model.expect("clap enforces model or --use-gold");
                let (model, grammar_cfg): (Model<f32>, GrammarConfig) = load_checkpoint(&dir)?;
                evaluate_model(
                    &model,
                    &examples,
                    &tables,
                    policy,
                    grammar_cfg,
                    !no_constraints,
                )
                .map_err(|e| e.to_string())?
            };

            print!("{}", report.render_text());
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
                    .map_err(|e| format!("cannot write report: {e}"))?;
            }
            Ok(())
        }

        Cmd::Predict {
            model,
            input,
            tables,
            out,
            no_constraints,
        } => {
            let (model, grammar_cfg): (Model<f32>, GrammarConfig) = load_checkpoint(&model)?;
            let tables = load_tables(&tables).map_err(|e| format!("tables: {e}"))?;
            let questions =
                nl2sql_core::table_store::load_questions(&input).map_err(|e| e.to_string())?;

            let mut lines = Vec::with_capacity(questions.len());
            for (question, table_id) in &questions {
                let table = tables
                    .get(table_id)
                    .ok_or_else(|| format!("table {table_id:?} not found"))?;
                let pred =
                    model.greedy_decode(question, &table.schema, grammar_cfg, !no_constraints);
                let rendered = LinearQuery {
                    tokens: pred.tokens.clone(),
                }
                .render(Some(&table.schema));
                lines.push(serde_json::json!({
                    "question": question.join(" "),
                    "table_id": table_id,
                    "query": rendered,
                    "tree": pred.tree,
                }));
            }
            let text = lines
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join("\n");
            std::fs::write(&out, text + "\n").map_err(|e| format!("cannot write: {e}"))?;
            println!("wrote {} prediction(s) to {}", questions.len(), out.display());
            Ok(())
        }

        Cmd::ReproOrder {
            n_train,
            n_dev,
            n_test,
            n_tables,
            vocab_size,
            seeds,
            out,
            common,
        } => {
            let settings = common.settings()?;
            let base_train = settings.train_config()?;
            let model_cfg = {
                // toy-scale defaults unless overridden
                let mut m = settings.model_config()?;
                if settings.d_emb.is_none() {
                    m.d_emb = 32;
                }
                if settings.d_dec.is_none() {
                    m.d_dec = 64;
                }
                if settings.encoder_layers.is_none() {
                    m.encoder_layers = 1;
                }
                if settings.decoder_layers.is_none() {
                    m.decoder_layers = 1;
                }
                m
            };
            let grammar_cfg = settings.grammar_config();
            let data = generate(&GenConfig {
                n_train,
                n_dev,
                n_test,
                n_tables,
                vocab_size,
                max_conditions: 3,
                seed: base_train.seed,
                shared_tables: true,
            });
            let tables = data.tables_map();

            let regimes: [(&str, Regime); 5] = [
                ("original (tf)", Regime::TeacherForcing(OrderPolicy::Original)),
                ("reversed (tf)", Regime::TeacherForcing(OrderPolicy::Reversed)),
                (
                    "arbitrary (tf)",
                    Regime::TeacherForcing(OrderPolicy::ArbitraryPerTrial { seed: 0 }),
                ),
                ("oracle", Regime::Oracle),
                ("rl", Regime::Reinforce),
            ];

            println!(
                "{:<16} {:>8} {:>8} {:>9} {:>9}",
                "regime", "dev LF", "dev QM", "test LF", "test QM"
            );
            let mut rows = Vec::new();
            for (name, regime) in regimes {
                let mut dev_lf = 0.0;
                let mut dev_qm = 0.0;
                let mut test_lf = 0.0;
                let mut test_qm = 0.0;
                for s in 0..seeds {
                    let cfg = TrainConfig {
                        regime,
                        seed: base_train.seed + s,
                        ..base_train.clone()
                    };
                    let outcome = train::<f32>(
                        &data.train,
                        &data.dev,
                        &tables,
                        &cfg,
                        &model_cfg,
                        grammar_cfg,
                        None,
                        None,
                    )
                    .map_err(|e| format!("{name}: {e}"))?;
                    let dev_report = evaluate_model(
                        &outcome.model,
                        &data.dev,
                        &tables,
                        OrderPolicy::Original,
                        grammar_cfg,
                        true,
                    )
                    .map_err(|e| e.to_string())?;
                    let test_report = evaluate_model(
                        &outcome.model,
                        &data.test,
                        &tables,
                        OrderPolicy::Original,
                        grammar_cfg,
                        true,
                    )
                    .map_err(|e| e.to_string())?;
                    dev_lf += dev_report.acc_lf;
                    dev_qm += dev_report.acc_qm;
                    test_lf += test_report.acc_lf;
                    test_qm += test_report.acc_qm;
                }
                let k = seeds as f64;
                let row = serde_json::json!({
                    "regime": name,
                    "dev_acc_lf": dev_lf / k,
                    "dev_acc_qm": dev_qm / k,
                    "test_acc_lf": test_lf / k,
                    "test_acc_qm": test_qm / k,
                });
                println!(
                    "{:<16} {:>8.4} {:>8.4} {:>9.4} {:>9.4}",
                    name,
                    dev_lf / k,
                    dev_qm / k,
                    test_lf / k,
                    test_qm / k
                );
                rows.push(row);
            }
            if let Some(path) = out {
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&serde_json::Value::Array(rows)).unwrap(),
                )
                .map_err(|e| format!("cannot write: {e}"))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
