//! End-to-end exercises of the model/trainer pipeline at tiny scale.

use std::rc::Rc;

use nl2sql_core::evaluator::evaluate_model;
use nl2sql_core::grammar::GrammarConfig;
use nl2sql_core::model::{CopyHead, Model, ModelConfig};
use nl2sql_core::query_ast::{delinearize, query_equal, OrderPolicy};
use nl2sql_core::synth::{generate, GenConfig};
use nl2sql_core::trainer::{
    oracle_episode, reinforce_episode, teacher_forcing_episode, train, Regime, TrainConfig,
};
use nl2sql_core::vocab::TokenSpace;
use nl2sql_tensor::graph::Graph;
use nl2sql_tensor::{AdamState, Rng};

fn tiny_model_cfg(head: CopyHead) -> ModelConfig {
    ModelConfig {
        d_emb: 12,
        d_dec: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        input_dropout: 0.0,
        recurrent_dropout: 0.0,
        label_smoothing_eps: 0.1,
        copy_head: head,
        constraints_in_training: false,
    }
}

fn tiny_corpus() -> nl2sql_core::synth::SynthData {
    generate(&GenConfig {
        n_train: 30,
        n_dev: 8,
        n_test: 8,
        n_tables: 6,
        vocab_size: 100,
        max_conditions: 2,
        seed: 13,
        shared_tables: true,
    })
}

#[test]
fn untrained_constrained_decode_always_parses() {
    let data = tiny_corpus();
    let tables = data.tables_map();
    for head in [CopyHead::SharedSoftmax, CopyHead::PointOrGenerate] {
        let vocab = nl2sql_core::trainer::build_vocab(&data.train, &tables, None);
        let model: Model<f32> =
            Model::new(tiny_model_cfg(head), vocab, &mut Rng::seeded(99));
        for ex in data.train.iter().take(10) {
            let schema = &tables[&ex.table_id].schema;
            let pred = model.greedy_decode(
                &ex.question,
                schema,
                GrammarConfig::default(),
                true,
            );
            assert!(
                pred.tree.is_some(),
                "constrained decode failed to parse: {:?}",
                pred.tokens
            );
        }
    }
}

#[test]
fn teacher_forcing_overfits_one_example() {
    let data = tiny_corpus();
    let tables = data.tables_map();
    let ex = data
        .train
        .iter()
        .find(|e| e.gold.conditions.len() == 1)
        .expect("corpus has single-condition examples");
    let schema = &tables[&ex.table_id].schema;

    let vocab = nl2sql_core::trainer::build_vocab(std::slice::from_ref(ex), &tables, None);
    let model: Model<f32> = Model::new(
        tiny_model_cfg(CopyHead::SharedSoftmax),
        vocab,
        &mut Rng::seeded(5),
    );
    let params = model.params();
    let mut adam = AdamState::new(0.01, &params);

    let mut losses = Vec::new();
    for _ in 0..50 {
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let loss = teacher_forcing_episode(
            &model,
            &mut g,
            &wired,
            ex,
            schema,
            OrderPolicy::Original,
            GrammarConfig::default(),
            &mut Rng::seeded(0),
        )
        .unwrap();
        g.backward(loss);
        losses.push(g.scalar(loss));
        adam.step(&params);
    }
    assert!(
        losses.last().unwrap() < &(losses[0] * 0.5),
        "loss did not shrink: {losses:?}"
    );
    // mostly decreasing: allow a few adaptive-moment wobbles
    let increases = losses.windows(2).filter(|w| w[1] > w[0] + 1e-4).count();
    assert!(increases <= 8, "loss oscillated too much: {losses:?}");

    // the overfit model reproduces its training example
    let pred = model.greedy_decode(&ex.question, schema, GrammarConfig::default(), true);
    assert!(query_equal(pred.tree.as_ref().unwrap(), &ex.gold));
}

#[test]
fn oracle_traces_are_valid_and_reach_gold() {
    let data = tiny_corpus();
    let tables = data.tables_map();
    let vocab = nl2sql_core::trainer::build_vocab(&data.train, &tables, None);
    let model: Model<f32> = Model::new(
        tiny_model_cfg(CopyHead::SharedSoftmax),
        vocab,
        &mut Rng::seeded(77),
    );
    for (i, ex) in data.train.iter().take(20).enumerate() {
        let schema = &tables[&ex.table_id].schema;
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let (_loss, trace) = oracle_episode(
            &model,
            &mut g,
            &wired,
            ex,
            schema,
            GrammarConfig::default(),
            &mut Rng::seeded(i as u64),
            false,
        )
        .unwrap();
        let space = TokenSpace::new(&ex.question, schema.num_columns());
        for (t, tok) in trace.inputs.iter().enumerate() {
            let idx = space.token_index(tok).unwrap();
            assert!(trace.masks[t].allows(idx), "input outside valid-next");
            assert!(trace.masks[t].allows(trace.supervision[t]), "supervision outside valid-next");
        }
        let tree = delinearize(&trace.inputs, schema).unwrap();
        assert!(query_equal(&tree, &ex.gold), "oracle path missed gold");
    }
}

#[test]
fn reinforce_episodes_parse_and_reward_matches_query_equal() {
    let data = tiny_corpus();
    let tables = data.tables_map();
    let vocab = nl2sql_core::trainer::build_vocab(&data.train, &tables, None);
    let model: Model<f32> = Model::new(
        tiny_model_cfg(CopyHead::PointOrGenerate),
        vocab,
        &mut Rng::seeded(3),
    );
    let mut rewards = 0.0;
    for (i, ex) in data.train.iter().take(20).enumerate() {
        let schema = &tables[&ex.table_id].schema;
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let (loss, trace) = reinforce_episode(
            &model,
            &mut g,
            &wired,
            ex,
            schema,
            GrammarConfig::default(),
            &mut Rng::seeded(1000 + i as u64),
            false,
        )
        .unwrap();
        let tree = delinearize(&trace.inputs, schema).unwrap();
        let reward = trace.reward.unwrap();
        assert_eq!(reward == 1.0, query_equal(&tree, &ex.gold));
        assert_eq!(loss.is_some(), reward == 1.0, "loss present iff rewarded");
        rewards += reward;
    }
    // untrained models almost never sample the exact gold query
    assert!(rewards <= 20.0);
}

#[test]
fn train_loop_runs_and_is_deterministic() {
    let data = tiny_corpus();
    let tables = data.tables_map();
    let cfg = TrainConfig {
        regime: Regime::TeacherForcing(OrderPolicy::Original),
        batch_size: 10,
        max_epochs: 2,
        learning_rate: 0.005,
        patience: 5,
        seed: 42,
        rl_warm_start_epochs: 0,
    };
    let mcfg = tiny_model_cfg(CopyHead::SharedSoftmax);
    let run = || {
        train::<f32>(
            &data.train,
            &data.dev,
            &tables,
            &cfg,
            &mcfg,
            GrammarConfig::default(),
            None,
            None,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train_loss, y.train_loss, "same seed, different loss");
        assert_eq!(x.dev_acc_qm, y.dev_acc_qm);
    }
    for ((na, aa), (nb, ab)) in a
        .model
        .named_arrays()
        .iter()
        .zip(b.model.named_arrays().iter())
    {
        assert_eq!(na, nb);
        assert_eq!(aa.as_slice(), ab.as_slice(), "{na} differs across runs");
    }

    let report = evaluate_model(
        &a.model,
        &data.dev,
        &tables,
        OrderPolicy::Original,
        GrammarConfig::default(),
        true,
    )
    .unwrap();
    assert!(report.acc_lf <= report.acc_qm && report.acc_qm <= report.acc_ex);
}

#[test]
fn masked_distribution_is_zero_outside_mask_and_sums_to_one() {
    let data = tiny_corpus();
    let tables = data.tables_map();
    let vocab = nl2sql_core::trainer::build_vocab(&data.train, &tables, None);
    for head in [CopyHead::SharedSoftmax, CopyHead::PointOrGenerate] {
        let model: Model<f64> = Model::new(tiny_model_cfg(head), vocab.clone(), &mut Rng::seeded(8));
        let ex = &data.train[0];
        let schema = &tables[&ex.table_id].schema;
        let space = Rc::new(TokenSpace::new(&ex.question, schema.num_columns()));
        let grammar = nl2sql_core::grammar::GrammarState::init(
            schema,
            nl2sql_core::grammar::Mode::Free,
            space.clone(),
            GrammarConfig::default(),
        )
        .unwrap();

        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let mut rng = Rng::seeded(0);
        let encoded = model.encode_question(&mut g, &wired, &ex.question, &mut rng, false);
        let columns = model.encode_columns(&mut g, &wired, schema);
        let state = model.init_decoder(&mut g, &mut rng, false);
        let mask = grammar.valid_next();
        let (step, _) = model.decode_step(
            &mut g,
            &wired,
            None,
            &state,
            &encoded,
            &columns,
            &space,
            Some(&mask),
        );
        let p = g.value_data(step.probs).as_slice();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5, "sum {sum}");
        for (i, &pi) in p.iter().enumerate() {
            if !mask.allows(i) {
                assert_eq!(pi, 0.0, "mass outside the mask at {i}");
            }
        }
    }
}
