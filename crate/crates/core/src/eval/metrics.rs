use crate::corpus::Example;
use crate::error::{ensure, Result};
use crate::model::{ParamStore, Seq2Seq, TokenBatch, EOS_ID};

use super::bleu::{bleu, BleuScore};

/// Examples per evaluation forward pass.
pub const EVAL_BATCH: usize = 128;

fn batches(examples: &[Example]) -> impl Iterator<Item = Result<TokenBatch>> + '_ {
    examples.chunks(EVAL_BATCH).map(|c| {
        let pairs: Vec<(&[u32], &[u32])> = c.iter().map(|e| (e.src.as_slice(), e.tgt.as_slice())).collect();
        TokenBatch::from_pairs(&pairs)
    })
}

/// Token-level mean cross-entropy under teacher forcing.
pub fn mean_loss(model: &Seq2Seq<f32>, params: &ParamStore<f32>, examples: &[Example]) -> Result<f64> {
    ensure!(!examples.is_empty(), InvalidInput, "loss over an empty split");
    let (mut sum, mut count) = (0.0, 0usize);
    for b in batches(examples) {
        let (s, n) = model.loss_sum(params, &b?)?;
        sum += s;
        count += n;
    }
    Ok(sum / count as f64)
}

/// Fraction of label positions where the teacher-forced argmax is the reference.
pub fn token_accuracy(model: &Seq2Seq<f32>, params: &ParamStore<f32>, examples: &[Example]) -> Result<f64> {
    ensure!(!examples.is_empty(), InvalidInput, "accuracy over an empty split");
    let (mut hits, mut count) = (0usize, 0usize);
    for b in batches(examples) {
        let (h, n) = model.token_hits(params, &b?)?;
        hits += h;
        count += n;
    }
    Ok(hits as f64 / count as f64)
}

/// Greedy translations with the end marker removed.
pub fn translate(model: &Seq2Seq<f32>, params: &ParamStore<f32>, examples: &[Example], max_len: usize) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let srcs: Vec<&[u32]> = chunk.iter().map(|e| e.src.as_slice()).collect();
        for mut h in model.greedy_decode(params, &srcs, max_len)? {
            if h.last() == Some(&EOS_ID) {
                h.pop();
            }
            out.push(h);
        }
    }
    Ok(out)
}

/// Corpus BLEU of greedy translations against the example targets.
pub fn decode_bleu(model: &Seq2Seq<f32>, params: &ParamStore<f32>, examples: &[Example], max_len: usize) -> Result<(BleuScore, Vec<Vec<u32>>)> {
    ensure!(!examples.is_empty(), InvalidInput, "BLEU over an empty split");
    let hyps = translate(model, params, examples, max_len)?;
    let refs: Vec<&[u32]> = examples.iter().map(|e| e.tgt.as_slice()).collect();
    Ok((bleu(&hyps, &refs, 4)?, hyps))
}
