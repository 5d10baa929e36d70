//! Experiment configuration: a preset merged with a user TOML table.
//!
//! Unknown keys are rejected with their dotted path. The effective config
//! serializes back to TOML and re-parses to an equal value.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusConfig, SamplerConfig};
use crate::error::{ensure, Error, Result};
use crate::model::ModelConfig;
use crate::packing::equal_share_ratios;
use crate::pipeline::{EpochPlan, TrainSettings};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("preset: expected desk or paper, got {other:?}"))),
        }
    }
}

/// Order in which pairs are adapted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OrderRepr", into = "OrderRepr")]
pub enum PairOrder {
    /// Largest training set first.
    Descending,
    Ascending,
    Explicit(Vec<String>),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum OrderRepr {
    Keyword(String),
    List(Vec<String>),
}

impl TryFrom<OrderRepr> for PairOrder {
    type Error = String;

    fn try_from(r: OrderRepr) -> std::result::Result<Self, String> {
        match r {
            OrderRepr::Keyword(k) => k.parse().map_err(|e: Error| e.to_string()),
            OrderRepr::List(l) => Ok(PairOrder::Explicit(l)),
        }
    }
}

impl From<PairOrder> for OrderRepr {
    fn from(o: PairOrder) -> Self {
        match o {
            PairOrder::Descending => OrderRepr::Keyword("desc".into()),
            PairOrder::Ascending => OrderRepr::Keyword("asc".into()),
            PairOrder::Explicit(l) => OrderRepr::List(l),
        }
    }
}

impl std::str::FromStr for PairOrder {
    type Err = Error;

    /// `desc`, `asc`, or a comma-separated list of pair languages.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desc" => Ok(PairOrder::Descending),
            "asc" => Ok(PairOrder::Ascending),
            list => {
                let langs: Vec<String> = list.split(',').map(|x| x.trim().to_string()).collect();
                ensure!(
                    langs.iter().all(|l| !l.is_empty()),
                    Config,
                    "plan.order: expected desc, asc or a comma-separated list, got {s:?}"
                );
                Ok(PairOrder::Explicit(langs))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Fraction of each prunable tensor freed after multilingual training.
    pub base_ratio: f64,
    /// Fraction of a pair's trained free weights pruned back to free.
    pub pair_ratio: f64,
    /// Per-pair ratios chosen so every adapted pair owns the same share.
    pub equal_share: bool,
    /// When false the last pair keeps all of its trained free weights.
    pub prune_last: bool,
    pub order: PairOrder,
    /// Pairs to adapt; empty means all.
    pub pairs: Vec<String>,
    pub epochs: EpochPlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Probe sentences per pair stored for stability checks.
    pub probes_per_pair: usize,
    pub max_decode_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub sampler: SamplerConfig,
    pub train: TrainSettings,
    pub plan: PlanConfig,
    pub eval: EvalConfig,
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("config types serialize to a table")
}

/// Overlays `user` onto `base`; keys absent from `base` are errors.
fn merge(base: &mut toml::Table, user: toml::Table, path: &str) -> Result<()> {
    for (k, v) in user {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) => return Err(Error::Config(format!("{here}: unknown key"))),
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &here)?,
            (Some(toml::Value::Table(_)), _) => return Err(Error::Config(format!("{here}: expected a table"))),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let corpus = CorpusConfig::desk();
        let vocab = corpus.vocab_size();
        let (model, train, sampler, epochs) = match p {
            Preset::Desk => (ModelConfig::desk(vocab), TrainSettings::desk(), SamplerConfig::desk(), EpochPlan::desk()),
            Preset::Paper => (ModelConfig::paper(vocab), TrainSettings::paper(), SamplerConfig::paper(), EpochPlan::paper()),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            preset: p,
            seed: 1,
            model,
            corpus,
            sampler,
            train,
            plan: PlanConfig {
                base_ratio: 0.5,
                pair_ratio: 0.75,
                equal_share: false,
                prune_last: true,
                order: PairOrder::Descending,
                pairs: Vec::new(),
                epochs,
            },
            eval: EvalConfig {
                probes_per_pair: 64,
                max_decode_len: 24,
            },
        }
    }

    /// Preset defaults, then the user's TOML, then `overrides` (command-line
    /// flags in the same table shape). The preset comes from `overrides`,
    /// else the user file, else desk.
    pub fn resolve(user: Option<&str>, overrides: toml::Table) -> Result<Self> {
        let user: toml::Table = match user {
            Some(text) => text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        if let Some(v) = user.get("schema_version") {
            ensure!(
                v.as_integer() == Some(SCHEMA_VERSION as i64),
                Config,
                "schema_version: expected {SCHEMA_VERSION}, got {v}"
            );
        }
        let pick = |t: &toml::Table| -> Result<Option<Preset>> {
            match t.get("preset") {
                None => Ok(None),
                Some(toml::Value::String(s)) => s.parse().map(Some),
                Some(v) => Err(Error::Config(format!("preset: expected a string, got {v}"))),
            }
        };
        let preset = pick(&overrides)?.or(pick(&user)?).unwrap_or(Preset::Desk);
        let vocab_given = |t: &toml::Table| {
            t.get("model")
                .and_then(|m| m.as_table())
                .is_some_and(|m| m.contains_key("vocab_size"))
        };
        let explicit_vocab = vocab_given(&user) || vocab_given(&overrides);
        let mut table = to_table(&Self::preset(preset));
        merge(&mut table, user, "")?;
        merge(&mut table, overrides, "")?;
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !explicit_vocab {
            cfg.model.vocab_size = cfg.corpus.vocab_size();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::resolve(Some(text), toml::Table::new())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the effective TOML.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn pair_languages(&self) -> Vec<String> {
        self.corpus.languages()[1..].to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            Config,
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            self.schema_version
        );
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        ensure!(
            self.model.vocab_size == self.corpus.vocab_size(),
            Config,
            "model.vocab_size: {} given but the corpus needs {}",
            self.model.vocab_size,
            self.corpus.vocab_size()
        );
        ensure!(
            self.model.max_seq_len > self.corpus.max_len + 1,
            Config,
            "model.max_seq_len: must exceed corpus.max_len + 1"
        );
        ensure!(
            self.sampler.temperature > 0.0 && self.sampler.temperature.is_finite(),
            Config,
            "sampler.temperature: must be positive"
        );
        ensure!(
            self.sampler.max_tokens > self.corpus.max_len + 1,
            Config,
            "sampler.max_tokens: must fit the longest example"
        );
        let p = &self.plan;
        ensure!((0.0..1.0).contains(&p.base_ratio), Config, "plan.base_ratio: {} outside [0, 1)", p.base_ratio);
        ensure!((0.0..1.0).contains(&p.pair_ratio), Config, "plan.pair_ratio: {} outside [0, 1)", p.pair_ratio);
        let declared = self.pair_languages();
        for l in &p.pairs {
            ensure!(declared.contains(l), Config, "plan.pairs: unknown pair {l:?}");
        }
        let mut uniq = p.pairs.clone();
        uniq.sort();
        uniq.dedup();
        ensure!(uniq.len() == p.pairs.len(), Config, "plan.pairs: duplicate entries");
        if let PairOrder::Explicit(list) = &p.order {
            let mut sorted = list.clone();
            sorted.sort();
            for l in list {
                ensure!(declared.contains(l), Config, "plan.order: unknown pair {l:?}");
            }
            let before = sorted.len();
            sorted.dedup();
            ensure!(sorted.len() == before, Config, "plan.order: duplicate entries");
            if !p.pairs.is_empty() {
                ensure!(sorted == uniq, Config, "plan.order: must list exactly the pairs in plan.pairs");
            }
        }
        ensure!(self.eval.probes_per_pair >= 1, Config, "eval.probes_per_pair: must be positive");
        ensure!(self.eval.max_decode_len >= 1, Config, "eval.max_decode_len: must be positive");
        Ok(())
    }

    /// Pairs to adapt, in adaptation order. Size ties keep corpus order.
    pub fn adaptation_order(&self) -> Vec<String> {
        let declared = self.pair_languages();
        let chosen: Vec<usize> = if self.plan.pairs.is_empty() {
            (0..declared.len()).collect()
        } else {
            (0..declared.len()).filter(|&i| self.plan.pairs.contains(&declared[i])).collect()
        };
        let by_size = |desc: bool| {
            let mut idx = chosen.clone();
            idx.sort_by_key(|&i| {
                let n = self.corpus.pair_sizes[i] as i64;
                if desc {
                    -n
                } else {
                    n
                }
            });
            idx.into_iter().map(|i| declared[i].clone()).collect()
        };
        match &self.plan.order {
            PairOrder::Descending => by_size(true),
            PairOrder::Ascending => by_size(false),
            PairOrder::Explicit(l) => l.clone(),
        }
    }

    /// Second pruning ratio for each pair of `adaptation_order`.
    pub fn pair_ratios(&self) -> Result<Vec<f64>> {
        let n = self.adaptation_order().len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut r = if self.plan.equal_share {
            equal_share_ratios(1.0 - self.plan.base_ratio, n)?
        } else {
            vec![self.plan.pair_ratio; n]
        };
        if !self.plan.prune_last {
            r[n - 1] = 0.0;
        }
        Ok(r)
    }
}
