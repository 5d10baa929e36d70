use std::collections::BTreeMap;

use rand::RngCore;

use crate::error::{ensure, Result};
use crate::numcore::{AttentionSpec, Real, Tape, Tensor, Var};

use super::{ModelConfig, ParamStore, BOS_ID, EOS_ID, PAD_ID};

const NORM_EPS: f64 = 1e-5;

/// Padded source/target token ids for one training or evaluation step.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    /// `batch * src_len` source ids, right-padded.
    pub src: Vec<u32>,
    /// Decoder input: `BOS` followed by the target content.
    pub tgt_in: Vec<u32>,
    /// Decoder labels: the target content followed by `EOS`.
    pub tgt_out: Vec<u32>,
}

impl TokenBatch {
    /// Builds a batch from `(source ids, target content ids)` pairs.
    pub fn from_pairs<S: AsRef<[u32]>, U: AsRef<[u32]>>(pairs: &[(S, U)]) -> Result<Self> {
        ensure!(!pairs.is_empty(), InvalidInput, "empty batch");
        let src_len = pairs.iter().map(|(s, _)| s.as_ref().len()).max().unwrap_or(0);
        let tgt_len = pairs.iter().map(|(_, t)| t.as_ref().len() + 1).max().unwrap_or(1);
        ensure!(src_len > 0, InvalidInput, "empty source sequence");
        let batch = pairs.len();
        let mut src = vec![PAD_ID; batch * src_len];
        let mut tgt_in = vec![PAD_ID; batch * tgt_len];
        let mut tgt_out = vec![PAD_ID; batch * tgt_len];
        for (b, (s, t)) in pairs.iter().enumerate() {
            let (s, t) = (s.as_ref(), t.as_ref());
            ensure!(!s.is_empty(), InvalidInput, "empty source sequence");
            src[b * src_len..][..s.len()].copy_from_slice(s);
            tgt_in[b * tgt_len] = BOS_ID;
            tgt_in[b * tgt_len + 1..][..t.len()].copy_from_slice(t);
            tgt_out[b * tgt_len..][..t.len()].copy_from_slice(t);
            tgt_out[b * tgt_len + t.len()] = EOS_ID;
        }
        Ok(Self {
            batch,
            src_len,
            tgt_len,
            src,
            tgt_in,
            tgt_out,
        })
    }

    /// Source-only batch; the decoder input is supplied separately.
    fn sources<S: AsRef<[u32]>>(sources: &[S]) -> Result<(usize, Vec<u32>)> {
        let src_len = sources.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        ensure!(src_len > 0, InvalidInput, "empty source sequence");
        let mut src = vec![PAD_ID; sources.len() * src_len];
        for (b, s) in sources.iter().enumerate() {
            src[b * src_len..][..s.as_ref().len()].copy_from_slice(s.as_ref());
        }
        Ok((src_len, src))
    }

    /// Real (non-pad) label positions.
    pub fn target_count(&self) -> usize {
        self.tgt_out.iter().filter(|&&t| t != PAD_ID).count()
    }

    /// Longest padded side, the unit a token budget is charged in.
    pub fn padded_tokens(&self) -> usize {
        self.batch * self.src_len.max(self.tgt_len)
    }
}

/// Pre-norm encoder-decoder transformer with fixed sinusoidal positions and a
/// token embedding shared by source and target.
#[derive(Clone, Debug)]
pub struct Seq2Seq<T: Real = f32> {
    config: ModelConfig,
    positional: Vec<T>,
}

struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    fn get(&self, name: &str) -> Var {
        self.vars[name]
    }
}

impl<T: Real> Seq2Seq<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut positional = Vec::with_capacity(config.max_seq_len * d);
        for pos in 0..config.max_seq_len {
            for i in 0..d {
                let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                let angle = pos as f64 / rate;
                positional.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
            }
        }
        Ok(Self { config, positional })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn bind(&self, tape: &mut Tape<T>, params: &ParamStore<T>, trainable: bool) -> Bound {
        let vars = params
            .iter()
            .map(|e| {
                let v = if trainable {
                    tape.param(e.name.clone(), e.tensor.clone())
                } else {
                    tape.constant(e.tensor.clone())
                };
                (e.name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    fn check_ids(&self, ids: &[u32], len: usize) -> Result<()> {
        ensure!(
            len <= self.config.max_seq_len,
            InvalidInput,
            "sequence length {len} exceeds max_seq_len {}",
            self.config.max_seq_len
        );
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(crate::Error::InvalidInput(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        ids: &[u32],
        batch: usize,
        len: usize,
        dropout: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let d = self.config.embed_dim;
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let x = tape.embedding(p.get("embed.tokens"), &ids)?;
        let x = tape.scale(x, (d as f64).sqrt())?;
        let mut pe = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            pe.extend_from_slice(&self.positional[..len * d]);
        }
        let pe = tape.constant(Tensor::new(vec![batch * len, d], pe)?);
        let x = tape.add(x, pe)?;
        self.drop(tape, x, dropout)
    }

    fn drop(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        dropout: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        match dropout {
            Some(rng) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, &mut **rng),
            _ => Ok(x),
        }
    }

    fn linear(&self, tape: &mut Tape<T>, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let y = tape.matmul(x, p.get(&format!("{prefix}.weight")))?;
        tape.add_row(y, p.get(&format!("{prefix}.bias")))
    }

    fn norm(&self, tape: &mut Tape<T>, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
        tape.layer_norm(
            x,
            p.get(&format!("{prefix}.gain")),
            p.get(&format!("{prefix}.bias")),
            NORM_EPS,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_block(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        memory: Option<Var>,
        prefix: &str,
        spec: AttentionSpec,
    ) -> Result<Var> {
        let kv = memory.unwrap_or(x);
        let q = self.linear(tape, p, x, &format!("{prefix}.q"))?;
        let k = self.linear(tape, p, kv, &format!("{prefix}.k"))?;
        let v = self.linear(tape, p, kv, &format!("{prefix}.v"))?;
        let a = tape.attention(q, k, v, spec)?;
        self.linear(tape, p, a, &format!("{prefix}.o"))
    }

    fn ffn(&self, tape: &mut Tape<T>, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(tape, p, x, &format!("{prefix}.fc1"))?;
        let h = tape.relu(h)?;
        self.linear(tape, p, h, &format!("{prefix}.fc2"))
    }

    fn encode(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        src: &[u32],
        batch: usize,
        src_len: usize,
        dropout: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_ids(src, src_len)?;
        let key_valid: Vec<bool> = src.iter().map(|&t| t != PAD_ID).collect();
        let mut x = self.embed(tape, p, src, batch, src_len, dropout)?;
        for i in 0..self.config.num_encoder_layers {
            let pre = format!("encoder.layers.{i}");
            let h = self.norm(tape, p, x, &format!("{pre}.self_attn_norm"))?;
            let spec = AttentionSpec {
                batch,
                q_len: src_len,
                k_len: src_len,
                heads: self.config.num_heads,
                causal: false,
                key_valid: Some(key_valid.clone()),
            };
            let h = self.attention_block(tape, p, h, None, &format!("{pre}.self_attn"), spec)?;
            let h = self.drop(tape, h, dropout)?;
            x = tape.add(x, h)?;
            let h = self.norm(tape, p, x, &format!("{pre}.ffn_norm"))?;
            let h = self.ffn(tape, p, h, &format!("{pre}.ffn"))?;
            let h = self.drop(tape, h, dropout)?;
            x = tape.add(x, h)?;
        }
        self.norm(tape, p, x, "encoder.final_norm")
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_logits(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        memory: Var,
        src: &[u32],
        src_len: usize,
        tgt_in: &[u32],
        batch: usize,
        tgt_len: usize,
        dropout: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_ids(tgt_in, tgt_len)?;
        let key_valid: Vec<bool> = src.iter().map(|&t| t != PAD_ID).collect();
        let mut y = self.embed(tape, p, tgt_in, batch, tgt_len, dropout)?;
        for i in 0..self.config.num_decoder_layers {
            let pre = format!("decoder.layers.{i}");
            let h = self.norm(tape, p, y, &format!("{pre}.self_attn_norm"))?;
            let spec = AttentionSpec {
                batch,
                q_len: tgt_len,
                k_len: tgt_len,
                heads: self.config.num_heads,
                causal: true,
                key_valid: None,
            };
            let h = self.attention_block(tape, p, h, None, &format!("{pre}.self_attn"), spec)?;
            let h = self.drop(tape, h, dropout)?;
            y = tape.add(y, h)?;
            let h = self.norm(tape, p, y, &format!("{pre}.cross_attn_norm"))?;
            let spec = AttentionSpec {
                batch,
                q_len: tgt_len,
                k_len: src_len,
                heads: self.config.num_heads,
                causal: false,
                key_valid: Some(key_valid.clone()),
            };
            let h =
                self.attention_block(tape, p, h, Some(memory), &format!("{pre}.cross_attn"), spec)?;
            let h = self.drop(tape, h, dropout)?;
            y = tape.add(y, h)?;
            let h = self.norm(tape, p, y, &format!("{pre}.ffn_norm"))?;
            let h = self.ffn(tape, p, h, &format!("{pre}.ffn"))?;
            let h = self.drop(tape, h, dropout)?;
            y = tape.add(y, h)?;
        }
        let y = self.norm(tape, p, y, "decoder.final_norm")?;
        self.linear(tape, p, y, "output")
    }

    /// Records the full network on `tape` and returns logits of shape
    /// `[batch * tgt_len, vocab]`. Passing a dropout generator switches to
    /// training mode; parameters are recorded as trainable leaves iff `trainable`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        batch: &TokenBatch,
        mut dropout: Option<&mut dyn RngCore>,
        trainable: bool,
    ) -> Result<Var> {
        let p = self.bind(tape, params, trainable);
        let memory = self.encode(tape, &p, &batch.src, batch.batch, batch.src_len, &mut dropout)?;
        self.decode_logits(
            tape,
            &p,
            memory,
            &batch.src,
            batch.src_len,
            &batch.tgt_in,
            batch.batch,
            batch.tgt_len,
            &mut dropout,
        )
    }

    /// Mean label cross-entropy, pads ignored.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        batch: &TokenBatch,
        dropout: Option<&mut dyn RngCore>,
        trainable: bool,
    ) -> Result<Var> {
        let logits = self.forward(tape, params, batch, dropout, trainable)?;
        let targets = label_targets(&batch.tgt_out);
        tape.cross_entropy(logits, &targets)
    }

    /// Deterministic evaluation-mode logits shaped `[batch, tgt_len, vocab]`.
    pub fn logits(&self, params: &ParamStore<T>, batch: &TokenBatch) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let l = self.forward(&mut tape, params, batch, None, false)?;
        tape.value(l)
            .clone()
            .reshape(&[batch.batch, batch.tgt_len, self.config.vocab_size])
    }

    /// Summed label cross-entropy and the number of labels, evaluation mode.
    pub fn loss_sum(&self, params: &ParamStore<T>, batch: &TokenBatch) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let l = self.loss(&mut tape, params, batch, None, false)?;
        let n = batch.target_count();
        Ok((tape.value(l).data()[0].as_f64() * n as f64, n))
    }

    /// Teacher-forced argmax hits and the number of labels.
    pub fn token_hits(&self, params: &ParamStore<T>, batch: &TokenBatch) -> Result<(usize, usize)> {
        let logits = self.logits(params, batch)?;
        let v = self.config.vocab_size;
        let mut hits = 0;
        for (row, &t) in logits.data().chunks(v).zip(&batch.tgt_out) {
            if t != PAD_ID && argmax(row) == t {
                hits += 1;
            }
        }
        Ok((hits, batch.target_count()))
    }

    /// Greedy decoding of a batch of sources (each starting with its control token).
    ///
    /// Each output holds every generated token up to and including `EOS`, or
    /// exactly `max_len` tokens when no `EOS` was produced. Argmax ties go to
    /// the lowest token id.
    pub fn greedy_decode<S: AsRef<[u32]>>(
        &self,
        params: &ParamStore<T>,
        sources: &[S],
        max_len: usize,
    ) -> Result<Vec<Vec<u32>>> {
        ensure!(max_len >= 1, Contract, "max_len must be at least 1");
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let max_len = max_len.min(self.config.max_seq_len);
        let batch = sources.len();
        let (src_len, src) = TokenBatch::sources(sources)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, params, false);
        let memory = self.encode(&mut tape, &p, &src, batch, src_len, &mut None)?;
        let memory = tape.value(memory).clone();

        let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        let v = self.config.vocab_size;
        for step in 0..max_len {
            let live: Vec<usize> = (0..batch).filter(|&b| !done[b]).collect();
            if live.is_empty() {
                break;
            }
            let cur = step + 1;
            let mut tgt_in = vec![PAD_ID; live.len() * cur];
            let mut live_src = Vec::with_capacity(live.len() * src_len);
            let d = self.config.embed_dim;
            let mut live_mem = Vec::with_capacity(live.len() * src_len * d);
            for (r, &b) in live.iter().enumerate() {
                tgt_in[r * cur] = BOS_ID;
                tgt_in[r * cur + 1..][..step].copy_from_slice(&outputs[b]);
                live_src.extend_from_slice(&src[b * src_len..][..src_len]);
                live_mem.extend_from_slice(&memory.data()[b * src_len * d..][..src_len * d]);
            }
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, params, false);
            let mem = tape.constant(Tensor::new(vec![live.len() * src_len, d], live_mem)?);
            let logits = self.decode_logits(
                &mut tape,
                &p,
                mem,
                &live_src,
                src_len,
                &tgt_in,
                live.len(),
                cur,
                &mut None,
            )?;
            let lv = tape.value(logits).data();
            for (r, &b) in live.iter().enumerate() {
                let row = &lv[(r * cur + step) * v..][..v];
                let tok = argmax(row);
                outputs[b].push(tok);
                if tok == EOS_ID {
                    done[b] = true;
                }
            }
        }
        Ok(outputs)
    }
}

/// Lowest index among maximal entries.
pub fn argmax<T: Real>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best as u32
}

fn label_targets(tgt_out: &[u32]) -> Vec<Option<usize>> {
    tgt_out
        .iter()
        .map(|&t| (t != PAD_ID).then_some(t as usize))
        .collect()
}
