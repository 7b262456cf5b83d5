//! The pointer-generator model: BiLSTM question encoder with skip
//! connections, on-the-fly column encoders for the embedding and output
//! sides, a uni-directional decoder with input feeding, dot-product
//! attention, and two interchangeable copy heads (shared softmax and
//! point-or-generate).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::rc::Rc;

use nl2sql_tensor::graph::{Graph, Value};
use nl2sql_tensor::lstm::{lstm_cell, LstmCellRef, LstmWeights};
use nl2sql_tensor::{dropout_mask, Arr, Param, Rng, Scalar};
use serde::{Deserialize, Serialize};

use crate::grammar::{GrammarConfig, GrammarState, Mode, TokenMask};
use crate::query_ast::{delinearize, QueryTree, SqlTok, Token, SQL_VOCAB};
use crate::table_store::TableSchema;
use crate::vocab::{TokenSpace, Vocab};

/// Words seen fewer times than this (and without a pretrained vector) map
/// to the rare representation.
pub const RARE_MIN_FREQ: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CopyHead {
    SharedSoftmax,
    PointOrGenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_dec: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub input_dropout: f64,
    pub recurrent_dropout: f64,
    pub label_smoothing_eps: f64,
    pub copy_head: CopyHead,
    pub constraints_in_training: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: 300,
            d_dec: 600,
            encoder_layers: 2,
            decoder_layers: 2,
            input_dropout: 0.2,
            recurrent_dropout: 0.1,
            label_smoothing_eps: 0.2,
            copy_head: CopyHead::SharedSoftmax,
            constraints_in_training: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_dec % 2 != 0 {
            return Err("d_dec must be even (bidirectional halves)".into());
        }
        if self.d_emb == 0 || self.d_dec == 0 {
            return Err("dimensions must be positive".into());
        }
        if self.d_emb > self.d_dec {
            return Err("d_emb must not exceed d_dec (skip connections pad up)".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err("need at least one encoder and decoder layer".into());
        }
        for (name, r) in [
            ("input_dropout", self.input_dropout),
            ("recurrent_dropout", self.recurrent_dropout),
            ("label_smoothing_eps", self.label_smoothing_eps),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(format!("{name} must be in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Row index of the start-of-decoding embedding in the SQL embedding matrix.
/// It is an input-only token: never part of the output distribution.
const START_ROW: usize = SQL_VOCAB;

pub struct Model<F: Scalar> {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    // shared word embeddings (questions + copied decoder inputs)
    w_e: Param<F>,
    // column-name word embeddings, embedding side / output side
    w_ct_emb: Param<F>,
    w_ct_out: Param<F>,
    // fixed SQL token embeddings + the start row
    w_sql: Param<F>,
    enc_fwd: Vec<LstmWeights<F>>,
    enc_bwd: Vec<LstmWeights<F>>,
    col_emb_lstm: LstmWeights<F>,
    col_out_lstm: LstmWeights<F>,
    dec: Vec<LstmWeights<F>>,
    u_sql: Param<F>,
    gate_w1: Param<F>,
    gate_b1: Param<F>,
    gate_w2: Param<F>,
    gate_b2: Param<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new(cfg: ModelConfig, vocab: Vocab, rng: &mut Rng) -> Model<F> {
        cfg.validate().expect("invalid model config");
        let v = vocab.len();
        let (de, dd) = (cfg.d_emb, cfg.d_dec);
        let half = dd / 2;
        let d_out = 2 * dd;

        let mut r = rng.split(0x0e0b);
        let enc_fwd = (0..cfg.encoder_layers)
            .map(|l| {
                let input = if l == 0 { de } else { dd };
                LstmWeights::new(&format!("enc.l{l}.fwd"), input, half, &mut r)
            })
            .collect();
        let enc_bwd = (0..cfg.encoder_layers)
            .map(|l| {
                let input = if l == 0 { de } else { dd };
                LstmWeights::new(&format!("enc.l{l}.bwd"), input, half, &mut r)
            })
            .collect();
        let dec = (0..cfg.decoder_layers)
            .map(|l| {
                let input = if l == 0 { de + dd } else { dd };
                LstmWeights::new(&format!("dec.l{l}"), input, dd, &mut r)
            })
            .collect();

        // the three word-embedding matrices start from identical values
        // (as a shared pretrained init would give) so that a word's
        // question-side and column-side vectors are directly matched by the
        // skip connections; they are trained separately afterwards
        let w_e = Param::init_uniform("emb.words", v, de, &mut r);
        let w_ct_emb = Param::new("emb.colwords.emb_side", w_e.value());
        let w_ct_out = Param::new("emb.colwords.out_side", w_e.value());
        Model {
            w_e,
            w_ct_emb,
            w_ct_out,
            w_sql: Param::init_uniform("emb.sql", SQL_VOCAB + 1, de, &mut r),
            enc_fwd,
            enc_bwd,
            col_emb_lstm: LstmWeights::new("col.emb_side", de, de, &mut r),
            col_out_lstm: LstmWeights::new("col.out_side", de, d_out, &mut r),
            dec,
            u_sql: Param::init_uniform("out.sql", SQL_VOCAB, d_out, &mut r),
            gate_w1: Param::init_uniform("gate.w1", half.max(1), d_out, &mut r),
            gate_b1: Param::new("gate.b1", Arr::zeros(half.max(1), 1)),
            gate_w2: Param::init_uniform("gate.w2", 1, half.max(1), &mut r),
            gate_b2: Param::new("gate.b2", Arr::zeros(1, 1)),
            cfg,
            vocab,
        }
    }

    pub fn params(&self) -> Vec<Param<F>> {
        let mut ps = vec![
            self.w_e.clone(),
            self.w_ct_emb.clone(),
            self.w_ct_out.clone(),
            self.w_sql.clone(),
        ];
        for w in self.enc_fwd.iter().chain(&self.enc_bwd).chain(&self.dec) {
            ps.extend(w.params());
        }
        ps.extend(self.col_emb_lstm.params());
        ps.extend(self.col_out_lstm.params());
        ps.push(self.u_sql.clone());
        ps.extend([
            self.gate_w1.clone(),
            self.gate_b1.clone(),
            self.gate_w2.clone(),
            self.gate_b2.clone(),
        ]);
        ps
    }

    pub fn named_arrays(&self) -> Vec<(String, Arr<F>)> {
        self.params().iter().map(|p| (p.name(), p.value())).collect()
    }

    pub fn load_named_arrays(&self, entries: &[(String, Arr<F>)]) -> Result<(), String> {
        let by_name: HashMap<&str, &Arr<F>> =
            entries.iter().map(|(n, a)| (n.as_str(), a)).collect();
        for p in self.params() {
            let name = p.name();
            let arr = by_name
                .get(name.as_str())
                .ok_or_else(|| format!("checkpoint missing array {name:?}"))?;
            if arr.shape() != p.shape() {
                return Err(format!(
                    "checkpoint array {name:?} has shape {:?}, expected {:?}",
                    arr.shape(),
                    p.shape()
                ));
            }
            p.set_value((*arr).clone());
        }
        Ok(())
    }

    /// Overwrite embedding rows of words present in the pretrained table and
    /// freeze them; remaining rows stay trainable. Returns the frozen count.
    pub fn apply_pretrained(&self, vectors: &HashMap<String, Vec<f64>>) -> usize {
        let mut frozen = Vec::new();
        for (word, vec) in vectors {
            if !self.vocab.contains(word) {
                continue;
            }
            let row = self.vocab.id(word);
            let vals: Vec<F> = vec.iter().map(|&x| F::from(x).unwrap()).collect();
            self.w_e.set_row(row, &vals);
            frozen.push(row);
        }
        frozen.sort_unstable();
        let n = frozen.len();
        self.w_e.freeze_rows(frozen);
        n
    }

    pub fn wire(&self, g: &mut Graph<F>) -> Wired<F> {
        Wired {
            w_e: g.param(&self.w_e),
            w_ct_emb: g.param(&self.w_ct_emb),
            w_ct_out: g.param(&self.w_ct_out),
            w_sql: g.param(&self.w_sql),
            enc_fwd: self.enc_fwd.iter().map(|w| w.register(g)).collect(),
            enc_bwd: self.enc_bwd.iter().map(|w| w.register(g)).collect(),
            col_emb: self.col_emb_lstm.register(g),
            col_out: self.col_out_lstm.register(g),
            dec: self.dec.iter().map(|w| w.register(g)).collect(),
            u_sql: g.param(&self.u_sql),
            gate_w1: g.param(&self.gate_w1),
            gate_b1: g.param(&self.gate_b1),
            gate_w2: g.param(&self.gate_w2),
            gate_b2: g.param(&self.gate_b2),
            _marker: std::marker::PhantomData,
        }
    }

    /// Zero-pad a `d_emb` vector up to `width`, into the bottom region so
    /// question-side and column-side skip embeddings align in dot products.
    fn pad_bottom(&self, g: &mut Graph<F>, v: Value, width: usize) -> Value {
        let d = self.cfg.d_emb;
        if width == d {
            return v;
        }
        let zeros = g.zeros(width - d);
        g.concat(&[zeros, v])
    }

    /// Encode a question into one state per token:
    /// `h_i = BiLSTM(q)_i + pad(q_i)`.
    pub fn encode_question(
        &self,
        g: &mut Graph<F>,
        wired: &Wired<F>,
        words: &[String],
        rng: &mut Rng,
        training: bool,
    ) -> Encoded {
        assert!(!words.is_empty(), "cannot encode an empty question");
        let n = words.len();
        let half = self.cfg.d_dec / 2;
        let ids: Vec<usize> = words.iter().map(|w| self.vocab.id(w)).collect();
        let emb = g.embed_rows(wired.w_e, Rc::new(ids));
        let emb_rows: Vec<Value> = (0..n).map(|i| g.row(emb, i)).collect();

        let mut inputs = emb_rows.clone();
        for l in 0..self.cfg.encoder_layers {
            // time-shared masks: one input mask per layer, one recurrent
            // mask per direction
            let in_dim = if l == 0 { self.cfg.d_emb } else { self.cfg.d_dec };
            let in_mask = self.mask_if(in_dim, self.cfg.input_dropout, rng, training);
            let rec_f = self.mask_if(half, self.cfg.recurrent_dropout, rng, training);
            let rec_b = self.mask_if(half, self.cfg.recurrent_dropout, rng, training);

            let dropped: Vec<Value> = inputs
                .iter()
                .map(|&x| self.apply_mask(g, x, &in_mask))
                .collect();

            let mut fwd = Vec::with_capacity(n);
            let mut h = g.zeros(half);
            let mut c = g.zeros(half);
            for &x in &dropped {
                let hd = self.apply_mask(g, h, &rec_f);
                let (h2, c2) = lstm_cell(g, &wired.enc_fwd[l], x, hd, c);
                h = h2;
                c = c2;
                fwd.push(h);
            }
            let mut bwd = vec![fwd[0]; n];
            let mut h = g.zeros(half);
            let mut c = g.zeros(half);
            for t in (0..n).rev() {
                let hd = self.apply_mask(g, h, &rec_b);
                let (h2, c2) = lstm_cell(g, &wired.enc_bwd[l], dropped[t], hd, c);
                h = h2;
                c = c2;
                bwd[t] = h;
            }
            inputs = (0..n).map(|t| g.concat(&[fwd[t], bwd[t]])).collect();
        }

        // skip connection: add zero-padded word embeddings
        let states: Vec<Value> = (0..n)
            .map(|t| {
                let padded = self.pad_bottom(g, emb_rows[t], self.cfg.d_dec);
                g.add(inputs[t], padded)
            })
            .collect();
        Encoded {
            h: g.stack_rows(&states),
            n,
        }
    }

    /// Per-column encodings: embedding side from a single-layer LSTM over the
    /// column-name words; output side `u = u* + pad(mean of word embeddings)`.
    pub fn encode_columns(
        &self,
        g: &mut Graph<F>,
        wired: &Wired<F>,
        schema: &TableSchema,
    ) -> Columns {
        let d_out = 2 * self.cfg.d_dec;
        let mut emb_side = Vec::with_capacity(schema.num_columns());
        let mut out_rows = Vec::with_capacity(schema.num_columns());
        for col in 0..schema.num_columns() {
            let words = schema.column_name(col);
            let ids: Vec<usize> = words.iter().map(|w| self.vocab.id(w)).collect();
            let ids = Rc::new(ids);

            let rows = g.embed_rows(wired.w_ct_emb, ids.clone());
            let mut h = g.zeros(self.cfg.d_emb);
            let mut c = g.zeros(self.cfg.d_emb);
            for i in 0..words.len() {
                let x = g.row(rows, i);
                let (h2, c2) = lstm_cell(g, &wired.col_emb, x, h, c);
                h = h2;
                c = c2;
            }
            emb_side.push(h);

            let rows_out = g.embed_rows(wired.w_ct_out, ids);
            let mut h = g.zeros(d_out);
            let mut c = g.zeros(d_out);
            let mut word_vecs = Vec::with_capacity(words.len());
            for i in 0..words.len() {
                let x = g.row(rows_out, i);
                word_vecs.push(x);
                let (h2, c2) = lstm_cell(g, &wired.col_out, x, h, c);
                h = h2;
                c = c2;
            }
            let sum = g.add_all(&word_vecs);
            let mean = g.scale(sum, F::from(1.0 / words.len() as f64).unwrap());
            let padded = self.pad_bottom(g, mean, d_out);
            out_rows.push(g.add(h, padded));
        }
        Columns {
            emb: emb_side,
            out: g.stack_rows(&out_rows),
        }
    }

    /// Dot-product attention over encoder states.
    pub fn attention(&self, g: &mut Graph<F>, y: Value, encoded: &Encoded) -> Attention {
        let scores = g.matvec(encoded.h, y);
        let alpha = g.softmax(scores);
        let context = g.tmatvec(encoded.h, alpha);
        Attention {
            scores,
            alpha,
            context,
        }
    }

    pub fn init_decoder(&self, g: &mut Graph<F>, rng: &mut Rng, training: bool) -> DecoderState<F> {
        let dd = self.cfg.d_dec;
        let layers = (0..self.cfg.decoder_layers)
            .map(|_| (g.zeros(dd), g.zeros(dd)))
            .collect();
        let in_masks = (0..self.cfg.decoder_layers)
            .map(|l| {
                let in_dim = if l == 0 { self.cfg.d_emb + dd } else { dd };
                self.mask_if(in_dim, self.cfg.input_dropout, rng, training)
            })
            .collect();
        let rec_masks = (0..self.cfg.decoder_layers)
            .map(|_| self.mask_if(dd, self.cfg.recurrent_dropout, rng, training))
            .collect();
        DecoderState {
            layers,
            context: g.zeros(dd),
            in_masks,
            rec_masks,
        }
    }

    fn mask_if(
        &self,
        dim: usize,
        rate: f64,
        rng: &mut Rng,
        training: bool,
    ) -> Option<Rc<Arr<F>>> {
        (training && rate > 0.0).then(|| dropout_mask(dim, rate, rng))
    }

    fn apply_mask(&self, g: &mut Graph<F>, x: Value, mask: &Option<Rc<Arr<F>>>) -> Value {
        match mask {
            Some(m) => g.mul_const(x, m.clone()),
            None => x,
        }
    }

    /// Embedding of the previous output token; `None` is start-of-decoding.
    fn embed_prev(
        &self,
        g: &mut Graph<F>,
        wired: &Wired<F>,
        columns: &Columns,
        prev: Option<&Token>,
    ) -> Value {
        match prev {
            None => g.row(wired.w_sql, START_ROW),
            Some(Token::Sql(s)) => g.row(wired.w_sql, s.index()),
            Some(Token::Col(c)) => columns.emb[*c],
            Some(Token::Word(w)) => g.row(wired.w_e, self.vocab.id(w)),
        }
    }

    /// One decoder step. When a grammar mask is given, disallowed tokens are
    /// removed before normalization (shared softmax: score −∞;
    /// point-or-generate: zero then renormalize).
    #[allow(clippy::too_many_arguments)]
    pub fn decode_step(
        &self,
        g: &mut Graph<F>,
        wired: &Wired<F>,
        prev: Option<&Token>,
        state: &DecoderState<F>,
        encoded: &Encoded,
        columns: &Columns,
        space: &TokenSpace,
        grammar_mask: Option<&TokenMask>,
    ) -> (StepOutput, DecoderState<F>) {
        let emb = self.embed_prev(g, wired, columns, prev);
        let x0 = g.concat(&[emb, state.context]);

        let mut layers = Vec::with_capacity(state.layers.len());
        let mut x = x0;
        for (l, (h, c)) in state.layers.iter().enumerate() {
            let xd = self.apply_mask(g, x, &state.in_masks[l]);
            let hd = self.apply_mask(g, *h, &state.rec_masks[l]);
            let (h2, c2) = lstm_cell(g, &wired.dec[l], xd, hd, *c);
            layers.push((h2, c2));
            x = h2;
        }
        let y = x;

        let att = self.attention(g, y, encoded);
        let yh = g.concat(&[y, att.context]);
        let o_sql = g.matvec(wired.u_sql, yh);
        let o_col = g.matvec(columns.out, yh);
        let segments = Rc::new(space.segments().to_vec());

        let probs = match self.cfg.copy_head {
            CopyHead::SharedSoftmax => {
                // score per distinct question word: max raw attention score
                // over its positions; words absent from the question are
                // simply not part of the softmax (probability exactly 0)
                let o_e = g.segment_max(att.scores, segments);
                let full = g.concat(&[o_sql, o_col, o_e]);
                g.softmax_masked(full, grammar_mask.map(TokenMask::to_rc))
            }
            CopyHead::PointOrGenerate => {
                let gen_scores = g.concat(&[o_sql, o_col]);
                let p_gen = g.softmax(gen_scores);
                let p_ptr = g.segment_sum(att.alpha, segments);
                let hidden0 = g.matvec(wired.gate_w1, yh);
                let hidden1 = g.add(hidden0, wired.gate_b1);
                let hidden = g.tanh(hidden1);
                let logit0 = g.matvec(wired.gate_w2, hidden);
                let logit = g.add(logit0, wired.gate_b2);
                let gamma = g.sigmoid(logit);
                let one_minus = g.affine(gamma, -F::one(), F::one());
                let gen_part = g.scale_by(p_gen, one_minus);
                let ptr_part = g.scale_by(p_ptr, gamma);
                let mixed = g.concat(&[gen_part, ptr_part]);
                match grammar_mask {
                    None => mixed,
                    Some(mask) => {
                        let keep: Vec<F> = mask
                            .as_bools()
                            .iter()
                            .map(|&b| if b { F::one() } else { F::zero() })
                            .collect();
                        let zeroed = g.mul_const(mixed, Rc::new(Arr::vector(keep)));
                        let total = g.sum(zeroed);
                        g.div_by_scalar(zeroed, total)
                    }
                }
            }
        };
        debug_assert_eq!(g.value_data(probs).len(), space.len());

        (
            StepOutput {
                y,
                alpha: att.alpha,
                probs,
            },
            DecoderState {
                layers,
                context: att.context,
                in_masks: state.in_masks.clone(),
                rec_masks: state.rec_masks.clone(),
            },
        )
    }

    /// Label-smoothed target distribution: 1−ε on gold, ε spread uniformly
    /// over the remaining vocabulary (over the remaining *allowed* tokens
    /// when a grammar mask is active during training).
    pub fn smoothed_target(
        &self,
        n: usize,
        gold: usize,
        allowed: Option<&TokenMask>,
    ) -> Rc<Vec<F>> {
        let eps = self.cfg.label_smoothing_eps;
        let mut t = vec![F::zero(); n];
        let others: Vec<usize> = match allowed {
            None => (0..n).filter(|&k| k != gold).collect(),
            Some(m) => {
                debug_assert!(m.allows(gold), "gold token masked out");
                m.allowed_indices().filter(|&k| k != gold).collect()
            }
        };
        if others.is_empty() || eps == 0.0 {
            t[gold] = F::one();
        } else {
            t[gold] = F::from(1.0 - eps).unwrap();
            let share = F::from(eps / others.len() as f64).unwrap();
            for k in others {
                t[k] = share;
            }
        }
        Rc::new(t)
    }

    /// Mean label-smoothed cross-entropy over the steps of one episode.
    pub fn sequence_loss(
        &self,
        g: &mut Graph<F>,
        probs: &[Value],
        targets: &[Rc<Vec<F>>],
    ) -> Value {
        assert_eq!(probs.len(), targets.len(), "probs/targets length mismatch");
        assert!(!probs.is_empty(), "empty episode");
        let steps: Vec<Value> = probs
            .iter()
            .zip(targets)
            .map(|(&p, t)| g.cross_entropy(p, t.clone()))
            .collect();
        let total = g.add_all(&steps);
        g.scale(total, F::from(1.0 / steps.len() as f64).unwrap())
    }

    /// Greedy decode for prediction. With `constrained` the grammar mask is
    /// applied at every step and the result always parses; without it the
    /// raw argmax sequence may fail to parse (`tree` is then None).
    pub fn greedy_decode(
        &self,
        question: &[String],
        schema: &TableSchema,
        grammar_cfg: GrammarConfig,
        constrained: bool,
    ) -> Prediction {
        let space = Rc::new(TokenSpace::new(question, schema.num_columns()));
        let mut g = Graph::new();
        let wired = self.wire(&mut g);
        let mut rng = Rng::seeded(0); // eval mode: rng never consulted
        let encoded = self.encode_question(&mut g, &wired, question, &mut rng, false);
        let columns = self.encode_columns(&mut g, &wired, schema);
        let mut state = self.init_decoder(&mut g, &mut rng, false);
        let mut grammar = GrammarState::init(schema, Mode::Free, space.clone(), grammar_cfg)
            .expect("free init cannot fail");

        // constrained sequences cannot exceed this: SELECT col agg WHERE,
        // per condition COND col op VAL <=q_len words ENDVAL, then END
        let max_len = 5 + schema.num_columns() * (5 + question.len());
        let mut tokens = Vec::new();
        let mut prev: Option<Token> = None;
        for _ in 0..max_len {
            let mask = constrained.then(|| grammar.valid_next());
            let (step, next_state) = self.decode_step(
                &mut g,
                &wired,
                prev.as_ref(),
                &state,
                &encoded,
                &columns,
                &space,
                mask.as_ref(),
            );
            state = next_state;
            let probs = g.value_data(step.probs).as_slice();
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let token = space.token_at(argmax);
            if constrained {
                grammar = grammar.advance(&token).expect("argmax within mask");
            }
            let is_end = token == Token::Sql(SqlTok::End);
            tokens.push(token.clone());
            prev = Some(token);
            if is_end || (constrained && grammar.is_done()) {
                break;
            }
        }

        let tree = delinearize(&tokens, schema).ok();
        Prediction { tokens, tree }
    }
}

/// Per-graph parameter handles; create once per episode with [`Model::wire`].
pub struct Wired<F: Scalar> {
    pub w_e: Value,
    pub w_ct_emb: Value,
    pub w_ct_out: Value,
    pub w_sql: Value,
    pub enc_fwd: Vec<LstmCellRef>,
    pub enc_bwd: Vec<LstmCellRef>,
    pub col_emb: LstmCellRef,
    pub col_out: LstmCellRef,
    pub dec: Vec<LstmCellRef>,
    pub u_sql: Value,
    pub gate_w1: Value,
    pub gate_b1: Value,
    pub gate_w2: Value,
    pub gate_b2: Value,
    _marker: std::marker::PhantomData<F>,
}

/// Encoder output: an (N, d_dec) matrix of per-token states.
pub struct Encoded {
    pub h: Value,
    pub n: usize,
}

pub struct Columns {
    /// Decoder-input embedding per column (d_emb each).
    pub emb: Vec<Value>,
    /// Output-side rows, one per column: (C, 2·d_dec).
    pub out: Value,
}

pub struct Attention {
    pub scores: Value,
    pub alpha: Value,
    pub context: Value,
}

pub struct DecoderState<F: Scalar> {
    layers: Vec<(Value, Value)>,
    pub context: Value,
    in_masks: Vec<Option<Rc<Arr<F>>>>,
    rec_masks: Vec<Option<Rc<Arr<F>>>>,
}

pub struct StepOutput {
    pub y: Value,
    pub alpha: Value,
    pub probs: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tokens: Vec<Token>,
    pub tree: Option<QueryTree>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    model: ModelConfig,
    vocab_words: Vec<String>,
    allow_repeated_columns: bool,
}

pub const PARAMS_FILE: &str = "model.params";
pub const META_FILE: &str = "model.meta.json";

/// Write a checkpoint directory: binary parameter container plus a JSON
/// sidecar with the model config and vocabulary.
pub fn save_checkpoint<F: Scalar>(
    model: &Model<F>,
    grammar_cfg: GrammarConfig,
    dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    nl2sql_tensor::checkpoint::save_arrays(&dir.join(PARAMS_FILE), &model.named_arrays())?;
    let meta = CheckpointMeta {
        format_version: 1,
        model: model.cfg.clone(),
        vocab_words: model.vocab.words().to_vec(),
        allow_repeated_columns: grammar_cfg.allow_repeated_columns,
    };
    std::fs::write(
        dir.join(META_FILE),
        serde_json::to_string_pretty(&meta).unwrap(),
    )
}

pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<(Model<F>, GrammarConfig), String> {
    let meta: CheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(dir.join(META_FILE))
            .map_err(|e| format!("cannot read checkpoint meta: {e}"))?,
    )
    .map_err(|e| format!("bad checkpoint meta: {e}"))?;
    if meta.format_version != 1 {
        return Err(format!(
            "unsupported checkpoint version {}",
            meta.format_version
        ));
    }
    let vocab = Vocab::from_words(meta.vocab_words);
    let model = Model::new(meta.model, vocab, &mut Rng::seeded(0));
    let arrays = nl2sql_tensor::checkpoint::load_arrays(&dir.join(PARAMS_FILE))
        .map_err(|e| format!("cannot read parameters: {e}"))?;
    model.load_named_arrays(&arrays)?;
    Ok((
        model,
        GrammarConfig {
            allow_repeated_columns: meta.allow_repeated_columns,
        },
    ))
}

/// Read a pretrained embedding file: one `word v1 ... v_demb` line per word.
pub fn read_pretrained(path: &Path, d_emb: usize) -> Result<HashMap<String, Vec<f64>>, String> {
    let file = File::open(path).map_err(|e| format!("cannot open embeddings: {e}"))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("read error: {e}"))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().ok_or_else(|| format!("line {}: empty", i + 1))?;
        let vals: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| format!("line {}: bad number: {e}", i + 1))?;
        if vals.len() != d_emb {
            return Err(format!(
                "line {}: vector has {} dims, expected {d_emb}",
                i + 1,
                vals.len()
            ));
        }
        out.insert(word.to_string(), vals);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table_store::ColType;
    use nl2sql_tensor::graph::Graph;

    fn cfg(head: CopyHead) -> ModelConfig {
        ModelConfig {
            d_emb: 6,
            d_dec: 10,
            encoder_layers: 1,
            decoder_layers: 1,
            input_dropout: 0.0,
            recurrent_dropout: 0.0,
            label_smoothing_eps: 0.2,
            copy_head: head,
            constraints_in_training: false,
        }
    }

    fn vocab_for(words: &[&str]) -> Vocab {
        // every word twice so none is rare
        let doubled: Vec<&str> = words.iter().chain(words.iter()).copied().collect();
        Vocab::build(doubled.into_iter(), RARE_MIN_FREQ, None)
    }

    fn schema() -> TableSchema {
        TableSchema {
            table_id: "t".into(),
            column_names: vec![vec!["size".into()], vec!["speed".into()]],
            column_types: vec![ColType::Text, ColType::Float],
        }
    }

    #[test]
    fn single_token_question_gives_one_state_of_d_dec() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["hello", "size", "speed"]),
            &mut Rng::seeded(3),
        );
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let enc = model.encode_question(
            &mut g,
            &wired,
            &["hello".to_string()],
            &mut Rng::seeded(0),
            false,
        );
        assert_eq!(enc.n, 1);
        assert_eq!(g.value_data(enc.h).shape(), (1, 10));
    }

    #[test]
    fn zeroed_recurrent_weights_reduce_states_to_padded_embeddings() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["big", "cache", "size", "speed"]),
            &mut Rng::seeded(5),
        );
        // zero every LSTM weight: h* becomes 0, so h_i = pad(q_i)
        for p in model.params() {
            if p.name().starts_with("enc.") {
                let (r, c) = p.shape();
                p.set_value(Arr::zeros(r, c));
            }
        }
        let q = ["big".to_string(), "cache".to_string()];
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let enc = model.encode_question(&mut g, &wired, &q, &mut Rng::seeded(0), false);
        let states = g.value_data(enc.h).clone();
        let emb = model.w_e.value();
        for (i, word) in q.iter().enumerate() {
            let row = states.row(i);
            // top (d_dec - d_emb) dims are the zero pad
            assert!(row[..4].iter().all(|&x| x == 0.0));
            assert_eq!(&row[4..], emb.row(model.vocab.id(word)));
        }
    }

    #[test]
    fn identical_column_names_get_identical_encodings() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["size", "speed"]),
            &mut Rng::seeded(7),
        );
        let schema = TableSchema {
            table_id: "t".into(),
            column_names: vec![vec!["size".into()], vec!["size".into()]],
            column_types: vec![ColType::Text, ColType::Text],
        };
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let cols = model.encode_columns(&mut g, &wired, &schema);
        assert_eq!(
            g.value_data(cols.emb[0]).as_slice(),
            g.value_data(cols.emb[1]).as_slice()
        );
        let out = g.value_data(cols.out);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn single_word_column_out_side_is_final_state_plus_padded_embedding() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["size", "speed"]),
            &mut Rng::seeded(9),
        );
        // zero the out-side column LSTM so u* = 0 and u = pad(c_1)
        for p in model.col_out_lstm.params() {
            let (r, c) = p.shape();
            p.set_value(Arr::zeros(r, c));
        }
        let schema = TableSchema {
            table_id: "t".into(),
            column_names: vec![vec!["speed".into()]],
            column_types: vec![ColType::Float],
        };
        let mut g = Graph::new();
        let wired = model.wire(&mut g);
        let cols = model.encode_columns(&mut g, &wired, &schema);
        let u = g.value_data(cols.out).row(0).to_vec();
        let emb = model.w_ct_out.value();
        let c1 = emb.row(model.vocab.id("speed"));
        assert!(u[..20 - 6].iter().all(|&x| x == 0.0));
        assert_eq!(&u[20 - 6..], c1);
    }

    #[test]
    fn attention_over_identical_states_is_uniform() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["size", "speed"]),
            &mut Rng::seeded(11),
        );
        let mut g = Graph::new();
        let state = Arr::vector((0..10).map(|i| 0.1 * i as f64).collect());
        let rows = vec![g.input(state.clone()), g.input(state.clone()), g.input(state.clone())];
        let h = g.stack_rows(&rows);
        let enc = Encoded { h, n: 3 };
        let y = g.input(Arr::vector((0..10).map(|i| 0.3 - 0.05 * i as f64).collect()));
        let att = model.attention(&mut g, y, &enc);
        for &a in g.value_data(att.alpha).as_slice() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        for (got, want) in g.value_data(att.context).as_slice().iter().zip(state.as_slice()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    /// Force the mixture gate to each endpoint and check where the mass goes.
    #[test]
    fn point_or_generate_endpoints() {
        let words = ["big", "size", "speed", "800"];
        let model: Model<f64> = Model::new(
            cfg(CopyHead::PointOrGenerate),
            vocab_for(&words),
            &mut Rng::seeded(13),
        );
        let q: Vec<String> = vec!["big".into(), "800".into()];
        let space = TokenSpace::new(&q, 2);
        for (bias, ptr_side) in [(-50.0, false), (50.0, true)] {
            model.gate_b2.set_value(Arr::vector(vec![bias]));
            let mut g = Graph::new();
            let wired = model.wire(&mut g);
            let enc = model.encode_question(&mut g, &wired, &q, &mut Rng::seeded(0), false);
            let cols = model.encode_columns(&mut g, &wired, &schema());
            let state = model.init_decoder(&mut g, &mut Rng::seeded(0), false);
            let (step, _) =
                model.decode_step(&mut g, &wired, None, &state, &enc, &cols, &space, None);
            let p = g.value_data(step.probs).as_slice();
            let gen_mass: f64 = p[..SQL_VOCAB + 2].iter().sum();
            let ptr_mass: f64 = p[SQL_VOCAB + 2..].iter().sum();
            if ptr_side {
                assert!(ptr_mass > 1.0 - 1e-9, "gamma=1 should point: {ptr_mass}");
            } else {
                assert!(gen_mass > 1.0 - 1e-9, "gamma=0 should generate: {gen_mass}");
            }
            let total: f64 = p.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothed_targets_cover_the_spec_cases() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["size", "speed"]),
            &mut Rng::seeded(1),
        );
        // eps = 0.2 over n = 4: 0.8 on gold, 0.2/3 elsewhere
        let t = model.smoothed_target(4, 0, None);
        assert!((t[0] - 0.8).abs() < 1e-12);
        for &x in &t[1..] {
            assert!((x - 0.2 / 3.0).abs() < 1e-12);
        }
        // masked: spread over allowed tokens only
        let mut mask_model = model;
        mask_model.cfg.label_smoothing_eps = 0.2;
        let space = TokenSpace::new(&["a".to_string()], 1);
        let grammar = crate::grammar::GrammarState::init(
            &TableSchema {
                table_id: "t".into(),
                column_names: vec![vec!["c".into()]],
                column_types: vec![ColType::Text],
            },
            crate::grammar::Mode::Free,
            std::rc::Rc::new(space),
            GrammarConfig::default(),
        )
        .unwrap();
        let mask = grammar.valid_next(); // only SELECT allowed
        let t = mask_model.smoothed_target(mask.len(), SqlTok::Select.index(), Some(&mask));
        assert!((t[SqlTok::Select.index()] - 1.0).abs() < 1e-12, "no mass left to spread");
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_loss_is_log_n_regardless_of_gold() {
        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["size", "speed"]),
            &mut Rng::seeded(1),
        );
        let n = 8;
        let mut g = Graph::new();
        let uniform = g.input(Arr::vector(vec![1.0 / n as f64; n]));
        for gold in [0, 3, 7] {
            let t = model.smoothed_target(n, gold, None);
            let loss = g.cross_entropy(uniform, t);
            assert!((g.scalar(loss) - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn pretrained_rows_load_and_freeze() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        std::fs::write(&path, "size 0.1 0.2 0.3 0.4 0.5 0.6\nunknownword 1 2 3 4 5 6\n").unwrap();
        let vectors = read_pretrained(&path, 6).unwrap();
        assert_eq!(vectors.len(), 2);
        assert!(read_pretrained(&path, 5).is_err());

        let model: Model<f64> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["size", "speed"]),
            &mut Rng::seeded(2),
        );
        let frozen = model.apply_pretrained(&vectors);
        assert_eq!(frozen, 1, "only in-vocabulary words load");
        let row = model.vocab.id("size");
        assert_eq!(model.w_e.value().row(row), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);

        // updates leave the frozen row untouched
        let grad = {
            let (r, c) = model.w_e.shape();
            let mut gextra = Arr::zeros(r, c);
            gextra.fill(1.0);
            gextra
        };
        model.w_e.accumulate_grad(&grad);
        let mut adam = nl2sql_tensor::AdamState::new(0.1, &[model.w_e.clone()]);
        adam.step(&[model.w_e.clone()]);
        assert_eq!(model.w_e.value().row(row), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_ne!(model.w_e.value().row(Vocab::RARE), &[0.0; 6]);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let model: Model<f32> = Model::new(
            cfg(CopyHead::SharedSoftmax),
            vocab_for(&["big", "size", "speed", "800"]),
            &mut Rng::seeded(21),
        );
        let q: Vec<String> = vec!["big".into(), "800".into()];
        let before = model.greedy_decode(&q, &schema(), GrammarConfig::default(), true);

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, GrammarConfig::default(), dir.path()).unwrap();
        let (loaded, gcfg): (Model<f32>, GrammarConfig) = load_checkpoint(dir.path()).unwrap();
        let after = loaded.greedy_decode(&q, &schema(), gcfg, true);
        assert_eq!(before, after);
    }
}
