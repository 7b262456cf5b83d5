//! Training regimes and the epoch loop.
//!
//! Teacher forcing feeds a fixed linearization of the gold tree as both
//! decoder input and supervision. The dynamic oracle instead supervises, at
//! every step, the best-scored token from which the gold tree is still
//! reachable, and feeds the decoder its own argmax when that is valid (a
//! uniformly sampled valid token otherwise). The REINFORCE variant samples
//! each next token from the grammar-renormalized output distribution and
//! weights the episode's log-likelihood by a 0/1 query-correctness reward.

use std::collections::HashMap;
use std::io::Write;
use std::rc::Rc;

use nl2sql_tensor::graph::{Graph, Value};
use nl2sql_tensor::{AdamState, Arr, Rng, Scalar};
use serde::{Deserialize, Serialize};

use crate::evaluator::{evaluate_model, EvalReport};
use crate::grammar::{GrammarConfig, GrammarError, GrammarState, Mode, TokenMask};
use crate::model::{Model, ModelConfig, Wired, RARE_MIN_FREQ};
use crate::query_ast::{delinearize, linearize, query_equal, InvalidTree, OrderPolicy, SqlTok, Token};
use crate::table_store::{Example, Table, TableSchema};
use crate::vocab::{TokenSpace, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    TeacherForcing(OrderPolicy),
    Oracle,
    Reinforce,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Early-stopping patience, in epochs without dev query-match improvement.
    pub patience: usize,
    pub seed: u64,
    /// Teacher-forcing epochs before switching to REINFORCE.
    pub rl_warm_start_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::TeacherForcing(OrderPolicy::Original),
            batch_size: 100,
            max_epochs: 50,
            learning_rate: 0.001,
            patience: 5,
            seed: 1,
            rl_warm_start_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum TrainError {
    Config(String),
    Grammar(GrammarError),
    Tree(InvalidTree),
    MissingTable(String),
    Io(std::io::Error),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Config(m) => write!(f, "bad configuration: {m}"),
            TrainError::Grammar(e) => write!(f, "grammar: {e}"),
            TrainError::Tree(e) => write!(f, "invalid tree: {e}"),
            TrainError::MissingTable(id) => write!(f, "table {id:?} not found"),
            TrainError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<GrammarError> for TrainError {
    fn from(e: GrammarError) -> Self {
        TrainError::Grammar(e)
    }
}

impl From<InvalidTree> for TrainError {
    fn from(e: InvalidTree) -> Self {
        TrainError::Tree(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

/// What one training episode did: decoder inputs, per-step supervision and
/// valid-next masks, and (for REINFORCE) the episode reward.
pub struct EpisodeTrace {
    /// The emitted/fed token path, including the closing END.
    pub inputs: Vec<Token>,
    /// Flat token-space index supervised at each step.
    pub supervision: Vec<usize>,
    /// The valid-next mask at each step.
    pub masks: Vec<TokenMask>,
    pub reward: Option<f64>,
}

/// Gold sequence of an example under a policy, with the closing END.
pub fn gold_sequence(
    example: &Example,
    schema: &TableSchema,
    policy: OrderPolicy,
) -> Result<Vec<Token>, InvalidTree> {
    let mut toks = linearize(&example.gold, schema, policy)?.tokens;
    toks.push(Token::Sql(SqlTok::End));
    Ok(toks)
}

/// Label-smoothed teacher forcing along one linearization of the gold tree.
pub fn teacher_forcing_episode<F: Scalar>(
    model: &Model<F>,
    g: &mut Graph<F>,
    wired: &Wired<F>,
    example: &Example,
    schema: &TableSchema,
    policy: OrderPolicy,
    grammar_cfg: GrammarConfig,
    rng: &mut Rng,
) -> Result<Value, TrainError> {
    let space = Rc::new(TokenSpace::new(&example.question, schema.num_columns()));
    let gold = gold_sequence(example, schema, policy)?;

    // constraints during training reproduce the ablation row: the output
    // distribution is masked along the gold path
    let masks: Vec<Option<TokenMask>> = if model.cfg.constraints_in_training {
        let mut state = GrammarState::init(schema, Mode::Free, space.clone(), grammar_cfg)?;
        let mut out = Vec::with_capacity(gold.len());
        for tok in &gold {
            out.push(Some(state.valid_next()));
            state = state.advance(tok)?;
        }
        out
    } else {
        vec![None; gold.len()]
    };

    let encoded = model.encode_question(g, wired, &example.question, rng, true);
    let columns = model.encode_columns(g, wired, schema);
    let mut state = model.init_decoder(g, rng, true);

    let mut probs = Vec::with_capacity(gold.len());
    let mut targets = Vec::with_capacity(gold.len());
    let mut prev: Option<&Token> = None;
    for (t, tok) in gold.iter().enumerate() {
        let (step, next) =
            model.decode_step(g, wired, prev, &state, &encoded, &columns, &space, masks[t].as_ref());
        state = next;
        let gold_idx = space
            .token_index(tok)
            .ok_or(GrammarError::NotCopyable { cond_index: 0 })?;
        probs.push(step.probs);
        targets.push(model.smoothed_target(space.len(), gold_idx, masks[t].as_ref()));
        prev = Some(tok);
    }
    Ok(model.sequence_loss(g, &probs, &targets))
}

/// One dynamic-oracle episode. Per step: supervision is the best-scored
/// token within the valid-next set; the next decoder input is the overall
/// argmax when valid, otherwise a uniform sample from the valid set.
pub fn oracle_episode<F: Scalar>(
    model: &Model<F>,
    g: &mut Graph<F>,
    wired: &Wired<F>,
    example: &Example,
    schema: &TableSchema,
    grammar_cfg: GrammarConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<(Value, EpisodeTrace), TrainError> {
    let space = Rc::new(TokenSpace::new(&example.question, schema.num_columns()));
    let mut grammar = GrammarState::init(
        schema,
        Mode::Oracle(example.gold.clone()),
        space.clone(),
        grammar_cfg,
    )?;

    let encoded = model.encode_question(g, wired, &example.question, rng, training);
    let columns = model.encode_columns(g, wired, schema);
    let mut state = model.init_decoder(g, rng, training);

    let mut probs = Vec::new();
    let mut targets = Vec::new();
    let mut trace = EpisodeTrace {
        inputs: Vec::new(),
        supervision: Vec::new(),
        masks: Vec::new(),
        reward: None,
    };
    let mut prev: Option<Token> = None;
    while !grammar.is_done() {
        let vnt = grammar.valid_next();
        // the distribution itself stays unconstrained: constraints are only
        // consulted to pick supervision and to keep the input path valid
        let (step, next) =
            model.decode_step(g, wired, prev.as_ref(), &state, &encoded, &columns, &space, None);
        state = next;
        let p = g.value_data(step.probs).as_slice();

        let overall = argmax(p);
        let best_valid = vnt
            .allowed_indices()
            .max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap())
            .expect("valid-next mask never empty");
        let next_input = if vnt.allows(overall) {
            overall
        } else {
            let allowed: Vec<usize> = vnt.allowed_indices().collect();
            allowed[rng.gen_range(allowed.len())]
        };

        probs.push(step.probs);
        targets.push(model.smoothed_target(space.len(), best_valid, None));

        let token = space.token_at(next_input);
        grammar = grammar.advance(&token)?;
        trace.inputs.push(token.clone());
        trace.supervision.push(best_valid);
        trace.masks.push(vnt);
        prev = Some(token);
    }
    let loss = model.sequence_loss(g, &probs, &targets);
    Ok((loss, trace))
}

/// One REINFORCE episode: sample each token from the output distribution
/// renormalized over the (free-mode) valid-next set, reward 1 when the
/// sampled sequence is query-equal to gold. The returned pseudo-loss is
/// `−A · Σ log p(x)`; `None` when the reward is zero (no gradient).
pub fn reinforce_episode<F: Scalar>(
    model: &Model<F>,
    g: &mut Graph<F>,
    wired: &Wired<F>,
    example: &Example,
    schema: &TableSchema,
    grammar_cfg: GrammarConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<(Option<Value>, EpisodeTrace), TrainError> {
    let space = Rc::new(TokenSpace::new(&example.question, schema.num_columns()));
    // free mode: the sampled sequence always parses, but need not match gold
    let mut grammar = GrammarState::init(schema, Mode::Free, space.clone(), grammar_cfg)?;
    // fail early when gold is not reachable at all (uncopyable values)
    GrammarState::init(
        schema,
        Mode::Oracle(example.gold.clone()),
        space.clone(),
        grammar_cfg,
    )?;

    let encoded = model.encode_question(g, wired, &example.question, rng, training);
    let columns = model.encode_columns(g, wired, schema);
    let mut state = model.init_decoder(g, rng, training);

    let mut log_picks = Vec::new();
    let mut trace = EpisodeTrace {
        inputs: Vec::new(),
        supervision: Vec::new(),
        masks: Vec::new(),
        reward: None,
    };
    let mut prev: Option<Token> = None;
    while !grammar.is_done() {
        let vnt = grammar.valid_next();
        let (step, next) = model.decode_step(
            g,
            wired,
            prev.as_ref(),
            &state,
            &encoded,
            &columns,
            &space,
            Some(&vnt),
        );
        state = next;
        let sampled = {
            let p = g.value_data(step.probs).as_slice();
            rng.sample_weighted(p)
        };
        debug_assert!(vnt.allows(sampled));
        let picked = g.pick(step.probs, sampled);
        log_picks.push(g.ln(picked));

        let token = space.token_at(sampled);
        grammar = grammar.advance(&token)?;
        trace.inputs.push(token.clone());
        trace.supervision.push(sampled);
        trace.masks.push(vnt);
        prev = Some(token);
    }

    let decoded = delinearize(&trace.inputs, schema).expect("constrained sample parses");
    let correct = query_equal(&decoded, &example.gold);
    trace.reward = Some(if correct { 1.0 } else { 0.0 });

    let loss = correct.then(|| {
        let total = g.add_all(&log_picks);
        g.scale(total, -F::one())
    });
    Ok((loss, trace))
}

fn argmax<F: Scalar>(xs: &[F]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc_lf: f64,
    pub dev_acc_qm: f64,
    pub dev_acc_ex: f64,
}

/// Early stopping on a to-be-maximized metric: stop after `patience` epochs
/// without strict improvement; the best epoch's checkpoint is kept.
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    since_improvement: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        assert!(patience >= 1);
        EarlyStopper {
            patience,
            best: None,
            since_improvement: 0,
        }
    }

    /// Record an epoch's metric. Returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = self.best.map_or(true, |(_, acc)| metric > acc);
        if improved {
            self.best = Some((epoch, metric));
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        (improved, self.since_improvement >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

pub struct TrainOutcome<F: Scalar> {
    pub model: Model<F>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_dev_acc_qm: f64,
}

/// Build the word vocabulary from the training questions plus the column
/// names of the training tables (so column words seen in questions share
/// rows with the headers).
pub fn build_vocab(
    train: &[Example],
    tables: &HashMap<String, Table>,
    pretrained: Option<&std::collections::HashSet<String>>,
) -> Vocab {
    let mut corpus: Vec<&str> = Vec::new();
    for ex in train {
        corpus.extend(ex.question.iter().map(String::as_str));
        if let Some(t) = tables.get(&ex.table_id) {
            for name in &t.schema.column_names {
                corpus.extend(name.iter().map(String::as_str));
            }
        }
    }
    Vocab::build(corpus.into_iter(), RARE_MIN_FREQ, pretrained)
}

/// Full training loop: seeded shuffled batches, Adam, per-epoch dev
/// evaluation, early stopping on dev query match, best checkpoint retained.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Scalar>(
    train_set: &[Example],
    dev_set: &[Example],
    tables: &HashMap<String, Table>,
    config: &TrainConfig,
    model_cfg: &ModelConfig,
    grammar_cfg: GrammarConfig,
    pretrained: Option<&HashMap<String, Vec<f64>>>,
    mut epoch_log: Option<&mut dyn Write>,
) -> Result<TrainOutcome<F>, TrainError> {
    config.validate()?;
    model_cfg
        .validate()
        .map_err(TrainError::Config)?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(TrainError::Config("empty train or dev split".into()));
    }
    for ex in train_set.iter().chain(dev_set) {
        if !tables.contains_key(&ex.table_id) {
            return Err(TrainError::MissingTable(ex.table_id.clone()));
        }
    }

    let run_rng = Rng::seeded(config.seed);
    let pre_words = pretrained.map(|p| p.keys().cloned().collect());
    let vocab = build_vocab(train_set, tables, pre_words.as_ref());
    let model: Model<F> = Model::new(model_cfg.clone(), vocab, &mut run_rng.split(0x1217));
    if let Some(vecs) = pretrained {
        model.apply_pretrained(vecs);
    }

    let params = model.params();
    let mut adam = AdamState::new(config.learning_rate, &params);

    let mut history = Vec::new();
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_arrays: Vec<(String, Arr<F>)> = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        run_rng.split2(0x0e0c, epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            for &idx in batch {
                let ex = &train_set[idx];
                let schema = &tables[&ex.table_id].schema;
                // per-example stream keyed by (epoch, example): batch
                // composition cannot perturb it
                let mut ex_rng = run_rng.split2(epoch as u64, idx as u64);

                let mut g = Graph::new();
                let wired = model.wire(&mut g);
                let regime = effective_regime(config, epoch);
                let loss = match regime {
                    Regime::TeacherForcing(policy) => {
                        let policy = per_trial(policy, config.seed, epoch, idx);
                        Some(teacher_forcing_episode(
                            &model, &mut g, &wired, ex, schema, policy, grammar_cfg, &mut ex_rng,
                        )?)
                    }
                    Regime::Oracle => Some(
                        oracle_episode(
                            &model, &mut g, &wired, ex, schema, grammar_cfg, &mut ex_rng, true,
                        )?
                        .0,
                    ),
                    Regime::Reinforce => reinforce_episode(
                        &model, &mut g, &wired, ex, schema, grammar_cfg, &mut ex_rng, true,
                    )?
                    .0,
                };
                if let Some(loss) = loss {
                    g.backward_with(loss, F::from(1.0 / batch.len() as f64).unwrap());
                    loss_sum += g.scalar(loss).to_f64().unwrap();
                    loss_count += 1;
                }
            }
            adam.step(&params);
        }

        let report: EvalReport = evaluate_model(
            &model,
            dev_set,
            tables,
            original_policy(config),
            grammar_cfg,
            true,
        )
        .map_err(|e| TrainError::Config(format!("dev evaluation failed: {e}")))?;

        let metrics = EpochMetrics {
            epoch,
            train_loss: if loss_count > 0 {
                loss_sum / loss_count as f64
            } else {
                0.0
            },
            dev_acc_lf: report.acc_lf,
            dev_acc_qm: report.acc_qm,
            dev_acc_ex: report.acc_ex,
        };
        if let Some(log) = epoch_log.as_deref_mut() {
            writeln!(log, "{}", serde_json::to_string(&metrics).unwrap())?;
        }
        history.push(metrics.clone());

        let (improved, stop) = stopper.observe(epoch, metrics.dev_acc_qm);
        if improved {
            best_arrays = model.named_arrays();
        }
        if stop {
            break;
        }
    }

    let (best_epoch, best_dev_acc_qm) = stopper.best().expect("at least one epoch ran");
    model
        .load_named_arrays(&best_arrays)
        .expect("checkpoint matches model");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_dev_acc_qm,
    })
}

fn effective_regime(config: &TrainConfig, epoch: usize) -> Regime {
    match config.regime {
        Regime::Reinforce if epoch <= config.rl_warm_start_epochs => {
            Regime::TeacherForcing(OrderPolicy::Original)
        }
        r => r,
    }
}

/// The dev metric always scores sequence match against the dataset order.
fn original_policy(_config: &TrainConfig) -> OrderPolicy {
    OrderPolicy::Original
}

/// Arbitrary order re-randomizes per epoch and per example, deterministically
/// in the run seed.
fn per_trial(policy: OrderPolicy, seed: u64, epoch: usize, example_idx: usize) -> OrderPolicy {
    match policy {
        OrderPolicy::ArbitraryPerTrial { seed: base } => OrderPolicy::ArbitraryPerTrial {
            seed: base
                ^ seed.rotate_left(17)
                ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15)
                ^ (example_idx as u64).wrapping_mul(0xc2b2ae3d27d4eb4f),
        },
        p => p,
    }
}
