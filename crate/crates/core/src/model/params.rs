use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::numcore::{Real, Tensor};

use super::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub prunable: bool,
}

/// Every weight of the network in a fixed order, with its prunability flag.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: Vec<ParamEntry<T>>,
    index: BTreeMap<String, usize>,
}

/// Attention, feed-forward and output-projection matrices are prunable;
/// biases, layer-norm parameters and the embedding table are not.
pub fn is_prunable_name(name: &str) -> bool {
    name.ends_with(".weight") && !name.starts_with("embed.")
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        ensure!(
            !self.index.contains_key(&name),
            Contract,
            "parameter {name} registered twice"
        );
        let prunable = is_prunable_name(&name);
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            tensor: tensor.with_name(name.clone()),
            name,
            prunable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].tensor),
            None => Err(Error::Contract(format!("unknown parameter {name}"))),
        }
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<T>> {
        self.entries.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn prunable(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter().filter(|e| e.prunable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    prunable: e.prunable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Fresh weights: Xavier-uniform matrices, zero biases, unit norm gains and
    /// embeddings with variance `1/embed_dim`.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = Self::new();
        for (name, shape) in parameter_layout(config) {
            let numel: usize = shape.iter().product();
            let data: Vec<T> = if name == "embed.tokens" {
                let a = (3.0 / config.embed_dim as f64).sqrt();
                (0..numel).map(|_| T::of(rng.random_range(-a..a))).collect()
            } else if name.ends_with(".weight") {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..numel).map(|_| T::of(rng.random_range(-a..a))).collect()
            } else if name.ends_with(".gain") {
                vec![T::one(); numel]
            } else {
                vec![T::zero(); numel]
            };
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn census(&self) -> Census {
        param_census(self)
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Name and shape of every parameter, in store order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, v) = (config.embed_dim, config.ffn_dim, config.vocab_size);
    let mut out = vec![("embed.tokens".to_string(), vec![v, d])];
    let attn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
        for p in ["q", "k", "v", "o"] {
            out.push((format!("{prefix}.{p}.weight"), vec![d, d]));
            out.push((format!("{prefix}.{p}.bias"), vec![d]));
        }
    };
    let norm = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
        out.push((format!("{prefix}.gain"), vec![d]));
        out.push((format!("{prefix}.bias"), vec![d]));
    };
    let ffn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
        out.push((format!("{prefix}.fc1.weight"), vec![d, f]));
        out.push((format!("{prefix}.fc1.bias"), vec![f]));
        out.push((format!("{prefix}.fc2.weight"), vec![f, d]));
        out.push((format!("{prefix}.fc2.bias"), vec![d]));
    };
    for i in 0..config.num_encoder_layers {
        let p = format!("encoder.layers.{i}");
        norm(&mut out, &format!("{p}.self_attn_norm"));
        attn(&mut out, &format!("{p}.self_attn"));
        norm(&mut out, &format!("{p}.ffn_norm"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    norm(&mut out, "encoder.final_norm");
    for i in 0..config.num_decoder_layers {
        let p = format!("decoder.layers.{i}");
        norm(&mut out, &format!("{p}.self_attn_norm"));
        attn(&mut out, &format!("{p}.self_attn"));
        norm(&mut out, &format!("{p}.cross_attn_norm"));
        attn(&mut out, &format!("{p}.cross_attn"));
        norm(&mut out, &format!("{p}.ffn_norm"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    norm(&mut out, "decoder.final_norm");
    out.push(("output.weight".to_string(), vec![d, v]));
    out.push(("output.bias".to_string(), vec![v]));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    pub prunable: bool,
}

/// Element counts by prunability class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Census {
    pub total: usize,
    pub prunable: usize,
    pub embedding: usize,
    /// Biases and layer-norm parameters.
    pub bias_and_norm: usize,
    pub rows: Vec<CensusRow>,
}

impl Census {
    /// Share of biases and layer-norm parameters among all non-embedding parameters.
    pub fn bias_norm_share(&self) -> f64 {
        self.bias_and_norm as f64 / (self.total - self.embedding) as f64
    }
}

pub fn param_census<T: Real>(params: &ParamStore<T>) -> Census {
    let rows: Vec<CensusRow> = params
        .iter()
        .map(|e| CensusRow {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            count: e.tensor.numel(),
            prunable: e.prunable,
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    let prunable = rows.iter().filter(|r| r.prunable).map(|r| r.count).sum();
    let embedding = rows
        .iter()
        .filter(|r| r.name.starts_with("embed."))
        .map(|r| r.count)
        .sum();
    Census {
        total,
        prunable,
        embedding,
        bias_and_norm: total - prunable - embedding,
        rows,
    }
}
