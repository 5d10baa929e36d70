use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Direction, ParallelCorpus, Split, ENGLISH};
use crate::error::{ensure, Result};
use crate::model::{ParamStore, Seq2Seq};
use crate::packing::{CapacityReport, FREE, SHARED};
use crate::pipeline::Checkpoint;

use super::bleu::BleuScore;
use super::metrics::{decode_bleu, mean_loss, token_accuracy};
use super::views::{own_fraction, pair_view, zero_shot_view};

/// Scores of one translation direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub pair: String,
    /// `en-xx` or `xx-en`.
    pub direction: String,
    pub src: String,
    pub tgt: String,
    pub bleu: f64,
    pub token_accuracy: f64,
    pub loss: f64,
}

/// All direction scores of one system on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemEval {
    pub system: String,
    pub split: String,
    /// Pair languages in adaptation order, empty for unadapted systems.
    pub order: Vec<String>,
    /// Share of prunable weights each pair owns in this system.
    pub own_fraction: BTreeMap<String, f64>,
    pub rows: Vec<DirectionScore>,
}

impl SystemEval {
    pub fn score(&self, pair: &str, direction: &str) -> Option<&DirectionScore> {
        self.rows.iter().find(|r| r.pair == pair && r.direction == direction)
    }

    /// Mean BLEU over both directions of `pair`.
    pub fn pair_bleu(&self, pair: &str) -> Option<f64> {
        let rows: Vec<f64> = self.rows.iter().filter(|r| r.pair == pair).map(|r| r.bleu).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }

    pub fn pair_loss(&self, pair: &str) -> Option<f64> {
        let rows: Vec<f64> = self.rows.iter().filter(|r| r.pair == pair).map(|r| r.loss).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// Exact per-direction BLEU differences against `baseline`.
    pub fn deltas(&self, baseline: &SystemEval) -> Vec<(String, String, f64)> {
        self.rows
            .iter()
            .filter_map(|r| {
                baseline
                    .score(&r.pair, &r.direction)
                    .map(|b| (r.pair.clone(), r.direction.clone(), r.bleu - b.bleu))
            })
            .collect()
    }
}

/// Scores both directions of pair `k` with `params`.
pub fn evaluate_pair(
    model: &Seq2Seq<f32>,
    params: &ParamStore<f32>,
    corpus: &ParallelCorpus,
    k: usize,
    split: Split,
    max_len: usize,
) -> Result<Vec<DirectionScore>> {
    let lang = &corpus.pairs[k].lang;
    Direction::BOTH
        .iter()
        .map(|&d| {
            let ex = corpus.direction_examples(k, d, split);
            let (direction, src, tgt) = match d {
                Direction::FromEnglish => ("en-xx", ENGLISH, lang.as_str()),
                Direction::IntoEnglish => ("xx-en", lang.as_str(), ENGLISH),
            };
            Ok(DirectionScore {
                pair: lang.clone(),
                direction: direction.into(),
                src: src.into(),
                tgt: tgt.into(),
                bleu: decode_bleu(model, params, &ex, max_len)?.0.value,
                token_accuracy: token_accuracy(model, params, &ex)?,
                loss: mean_loss(model, params, &ex)?,
            })
        })
        .collect()
}

/// Scores every pair of the corpus through the view that serves it.
pub fn evaluate_checkpoint(
    model: &Seq2Seq<f32>,
    ck: &Checkpoint,
    corpus: &ParallelCorpus,
    split: Split,
    system: &str,
    max_len: usize,
) -> Result<SystemEval> {
    let mut rows = Vec::new();
    let mut own = BTreeMap::new();
    for (k, p) in corpus.pairs.iter().enumerate() {
        rows.extend(evaluate_pair(model, &pair_view(ck, &p.lang)?, corpus, k, split, max_len)?);
        own.insert(p.lang.clone(), own_fraction(ck, &p.lang)?);
    }
    Ok(SystemEval {
        system: system.into(),
        split: split.name().into(),
        order: ck.order.clone(),
        own_fraction: own,
        rows,
    })
}

/// Zero-shot translation between two non-English languages through the
/// shared-only view.
pub fn zero_shot_eval(
    model: &Seq2Seq<f32>,
    ck: &Checkpoint,
    corpus: &ParallelCorpus,
    src: &str,
    tgt: &str,
    max_len: usize,
) -> Result<(BleuScore, Vec<Vec<u32>>)> {
    ensure!(
        src != ENGLISH && tgt != ENGLISH && src != tgt,
        InvalidInput,
        "{src}->{tgt} is not a zero-shot direction"
    );
    let ex = corpus.zero_shot_examples(src, tgt)?;
    decode_bleu(model, &zero_shot_view(ck)?, &ex, max_len)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub src: String,
    pub tgt: String,
    pub parent: f64,
    pub pruned: f64,
    pub adapted: f64,
    /// Pruned and adapted decodes agree token for token.
    pub identical: bool,
}

/// All zero-shot directions for the three systems.
pub fn zero_shot_grid(
    model: &Seq2Seq<f32>,
    parent: &Checkpoint,
    pruned: &Checkpoint,
    adapted: &Checkpoint,
    corpus: &ParallelCorpus,
    max_len: usize,
) -> Result<Vec<ZeroShotRow>> {
    corpus
        .zero_shot_directions()
        .into_iter()
        .map(|(s, t)| {
            let (p, _) = zero_shot_eval(model, parent, corpus, &s, &t, max_len)?;
            let (q, qh) = zero_shot_eval(model, pruned, corpus, &s, &t, max_len)?;
            let (a, ah) = zero_shot_eval(model, adapted, corpus, &s, &t, max_len)?;
            Ok(ZeroShotRow {
                src: s,
                tgt: t,
                parent: p.value,
                pruned: q.value,
                adapted: a.value,
                identical: qh == ah,
            })
        })
        .collect()
}

fn points(bleu: f64) -> String {
    format!("{:.4}", 100.0 * bleu)
}

/// Pairs in adaptation order, then the rest in corpus order.
fn pair_sequence(order: &[String], all: &[String]) -> Vec<String> {
    let mut seq = order.to_vec();
    seq.extend(all.iter().filter(|p| !order.contains(p)).cloned());
    seq
}

/// One row per pair, direction and system with BLEU points and the exact
/// difference from `parent`, followed by per-system direction averages.
pub fn interference_tsv(systems: &[SystemEval], parent: &SystemEval, order: &[String]) -> String {
    let mut all: Vec<String> = parent.rows.iter().map(|r| r.pair.clone()).collect();
    all.dedup();
    let seq = pair_sequence(order, &all);
    let mut out = String::from("order\tpair\tdirection\tsystem\tparam_pct\tbleu\tdelta_bleu\ttoken_acc\tloss\n");
    for (i, pair) in seq.iter().enumerate() {
        let pos = order.iter().position(|p| p == pair).map_or("-".to_string(), |t| (t + 1).to_string());
        for dir in ["en-xx", "xx-en"] {
            let Some(base) = parent.score(pair, dir) else { continue };
            for s in systems {
                let Some(r) = s.score(pair, dir) else { continue };
                let pct = s.own_fraction.get(pair).map_or("-".to_string(), |f| format!("{:.4}", 100.0 * f));
                let _ = writeln!(
                    out,
                    "{}\t{pair}\t{dir}\t{}\t{pct}\t{}\t{}\t{:.4}\t{:.6}",
                    if pos == "-" { format!("-{}", i + 1) } else { pos.clone() },
                    s.system,
                    points(r.bleu),
                    points(r.bleu - base.bleu),
                    r.token_accuracy,
                    r.loss
                );
            }
        }
    }
    for s in systems {
        for dir in ["en-xx", "xx-en"] {
            let deltas: Vec<f64> = s
                .deltas(parent)
                .into_iter()
                .filter(|(_, d, _)| d == dir)
                .map(|(_, _, x)| x)
                .collect();
            if deltas.is_empty() {
                continue;
            }
            let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
            let _ = writeln!(out, "avg\t*\t{dir}\t{}\t-\t-\t{}\t-\t-", s.system, points(mean));
        }
    }
    out.push_str("# reference at transformer-base scale: adapted minus parent averages +1.32 (en-xx) and +1.40 (xx-en) BLEU\n");
    out
}

/// Owner shares after adaptation beside their expected values.
pub fn capacity_tsv(report: &CapacityReport, order: &[String], expected: &[f64]) -> String {
    let mut out = String::from("owner\tlabel\tcount\tfraction\texpected\tmax_tensor_dev\n");
    let mut row = |owner: u8, label: &str, exp: Option<f64>| {
        let dev = exp.map_or("-".to_string(), |e| format!("{:.1}", report.max_tensor_deviation(owner, e)));
        let _ = writeln!(
            out,
            "{owner}\t{label}\t{}\t{:.6}\t{}\t{dev}",
            report.count(owner),
            report.fraction(owner),
            exp.map_or("-".to_string(), |e| format!("{e:.6}"))
        );
    };
    row(FREE, "free", None);
    row(SHARED, "shared", None);
    for (t, lang) in order.iter().enumerate() {
        row((t + 2) as u8, lang, expected.get(t).copied());
    }
    let _ = writeln!(out, "*\ttotal\t{}\t1.000000\t-\t-", report.prunable_total);
    out
}

pub fn zero_shot_tsv(rows: &[ZeroShotRow]) -> String {
    let mut out = String::from("src\ttgt\tparent\tpruned\tadapted\tidentical\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.src,
            r.tgt,
            points(r.parent),
            points(r.pruned),
            points(r.adapted),
            r.identical
        );
    }
    out
}

fn mean_delta(s: &SystemEval, parent: &SystemEval, pair: Option<&str>) -> f64 {
    let d: Vec<f64> = s
        .deltas(parent)
        .into_iter()
        .filter(|(p, _, _)| pair.is_none_or(|q| q == p))
        .map(|(_, _, x)| x)
        .collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Delta BLEU against the parent: the parent and pruned systems first, then
/// one row per adapted pair at its position with its parameter share.
pub fn plot_tsv(parent: &SystemEval, pruned: &SystemEval, adapted: Option<&SystemEval>) -> String {
    let mut out = String::from("x\tlabel\tparam_pct\tdelta_bleu\n");
    let _ = writeln!(out, "0\tparent\t100.0000\t{}", points(0.0));
    let shared = pruned.own_fraction.values().next().copied().unwrap_or(1.0);
    let _ = writeln!(
        out,
        "0\tpruned\t{:.4}\t{}",
        100.0 * shared,
        points(mean_delta(pruned, parent, None))
    );
    if let Some(a) = adapted {
        for (t, lang) in a.order.iter().enumerate() {
            let pct = a.own_fraction.get(lang).copied().unwrap_or(0.0);
            let _ = writeln!(
                out,
                "{}\t{lang}\t{:.4}\t{}",
                t + 1,
                100.0 * pct,
                points(mean_delta(a, parent, Some(lang)))
            );
        }
    }
    out
}
