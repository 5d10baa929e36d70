use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, PhaseRecord};
use super::plan::{EpochPlan, Phase, PhaseKind, PhasePlan};
use crate::corpus::{temperature_weights, BatchSampler, Example, ParallelCorpus, SamplerConfig, Split};
use crate::error::{ensure, Error, Result};
use crate::eval::{mean_loss, pair_view, ProbeSet};
use crate::model::{ModelConfig, ParamStore, Seq2Seq, TokenBatch};
use crate::numcore::{adam_step, AdamState, LrSchedule, Tape};
use crate::packing::{
    claim_survivors, magnitude_prune, masked_view, pair_owner, CapacityReport, IndexSets, OwnerSet, OwnershipMask,
    UpdateRule, FREE, SHARED,
};
use crate::seeds;

/// Optimizer and initialization settings shared by every phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    /// Warmup length, capped at a fifth of each phase's steps.
    pub warmup_steps: u64,
    /// Freed weights restart uniform within this fraction of their
    /// Xavier bound before a pair trains them.
    pub free_init_scale: f64,
    /// Lower bound on the examples a training phase draws, so that small
    /// pairs still get enough updates. Zero disables it.
    #[serde(default)]
    pub min_phase_examples: usize,
}

impl TrainSettings {
    pub fn desk() -> Self {
        Self {
            lr: 4e-3,
            warmup_steps: 400,
            free_init_scale: 0.1,
            min_phase_examples: 24_000,
        }
    }

    pub fn paper() -> Self {
        Self {
            lr: 3e-4,
            warmup_steps: 4500,
            free_init_scale: 0.1,
            min_phase_examples: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), Config, "train.lr: must be positive");
        ensure!(self.warmup_steps >= 1, Config, "train.warmup_steps: must be at least 1");
        ensure!(
            self.free_init_scale > 0.0 && self.free_init_scale.is_finite(),
            Config,
            "train.free_init_scale: must be positive"
        );
        Ok(())
    }
}

struct TrainStats {
    steps: u64,
    examples: u64,
    loss: Option<f64>,
}

/// Runs training phases over one corpus with one seed.
pub struct Trainer<'a> {
    corpus: &'a ParallelCorpus,
    model: Seq2Seq<f32>,
    settings: TrainSettings,
    sampler: SamplerConfig,
    seed: u64,
    progress: Box<dyn Fn(&str) + 'a>,
}

fn owner_of_position(t: usize) -> Result<u8> {
    pair_owner(t).map_err(|_| Error::Capacity(format!("no owner id left for pair number {t}")))
}

/// Copies the elements a phase was allowed to train from `work` into `params`.
fn write_back(params: &mut ParamStore<f32>, work: &ParamStore<f32>, rules: &[UpdateRule]) {
    for ((dst, src), rule) in params.entries_mut().zip(work.iter()).zip(rules) {
        match rule {
            UpdateRule::Nothing => {}
            UpdateRule::All => dst.tensor.data_mut().copy_from_slice(src.tensor.data()),
            UpdateRule::Elements(flags) => {
                for ((d, &s), &f) in dst.tensor.data_mut().iter_mut().zip(src.tensor.data()).zip(flags) {
                    if f {
                        *d = s;
                    }
                }
            }
        }
    }
}

impl<'a> Trainer<'a> {
    pub fn new(
        corpus: &'a ParallelCorpus,
        model: ModelConfig,
        settings: TrainSettings,
        sampler: SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        settings.validate()?;
        ensure!(
            model.vocab_size == corpus.vocab.size(),
            Config,
            "model.vocab_size {} does not match the corpus vocabulary of {}",
            model.vocab_size,
            corpus.vocab.size()
        );
        ensure!(
            model.max_seq_len > corpus.config.max_len,
            Config,
            "model.max_seq_len {} cannot hold sentences of {} tokens plus markers",
            model.max_seq_len,
            corpus.config.max_len
        );
        Ok(Self {
            corpus,
            model: Seq2Seq::new(model)?,
            settings,
            sampler,
            seed,
            progress: Box::new(|_| {}),
        })
    }

    pub fn with_progress(mut self, f: impl Fn(&str) + 'a) -> Self {
        self.progress = Box::new(f);
        self
    }

    pub fn model(&self) -> &Seq2Seq<f32> {
        &self.model
    }

    pub fn corpus(&self) -> &ParallelCorpus {
        self.corpus
    }

    /// Freshly initialized weights with probes drawn for later verification.
    pub fn init_checkpoint(&self, experiment: serde_json::Value, probes_per_pair: usize) -> Result<Checkpoint> {
        let params = ParamStore::init(self.model.config(), &mut seeds::substream(self.seed, seeds::INIT))?;
        Ok(Checkpoint {
            model: self.model.config().clone(),
            vocab: self.corpus.vocab.tokens(),
            experiment,
            params,
            mask: None,
            order: Vec::new(),
            log: Vec::new(),
            probes: ProbeSet::generate(self.corpus, probes_per_pair, self.seed)?,
        })
    }

    fn check_compatible(&self, ck: &Checkpoint) -> Result<()> {
        ensure!(&ck.model == self.model.config(), Config, "checkpoint model config differs from the experiment");
        ensure!(ck.vocab == self.corpus.vocab.tokens(), Config, "checkpoint vocabulary differs from the corpus");
        Ok(())
    }

    fn dev_losses(&self, view: &ParamStore<f32>, pairs: &[usize]) -> Result<BTreeMap<String, f64>> {
        pairs
            .iter()
            .map(|&k| {
                let dev = self.corpus.examples(k, Split::Dev);
                Ok((self.corpus.pairs[k].lang.clone(), mean_loss(&self.model, view, &dev)?))
            })
            .collect()
    }

    fn all_pairs(&self) -> Vec<usize> {
        (0..self.corpus.num_pairs()).collect()
    }

    /// Adam over temperature-sampled batches from `pairs` until `epochs`
    /// passes' worth of directional examples have been drawn, or
    /// `min_phase_examples` if that is more.
    fn train(
        &self,
        label: &str,
        work: &mut ParamStore<f32>,
        rules: &[UpdateRule],
        pairs: &[usize],
        epochs: usize,
    ) -> Result<TrainStats> {
        if epochs == 0 {
            return Ok(TrainStats {
                steps: 0,
                examples: 0,
                loss: None,
            });
        }
        let pools: Vec<Vec<Example>> = pairs.iter().map(|&k| self.corpus.examples(k, Split::Train)).collect();
        let refs: Vec<&[Example]> = pools.iter().map(Vec::as_slice).collect();
        let sizes: Vec<usize> = pairs.iter().map(|&k| self.corpus.pairs[k].train.len()).collect();
        let weights = temperature_weights(&sizes, self.sampler.temperature)?;
        let phase_seed = seeds::child_seed(self.seed, label);
        let sampler = BatchSampler::new(
            &refs,
            &weights,
            self.sampler.max_tokens,
            seeds::substream(phase_seed, seeds::BATCHING),
        )?;
        let per_epoch: usize = pools.iter().map(Vec::len).sum();
        let target = (per_epoch * epochs).max(self.settings.min_phase_examples);
        let passes = target.div_ceil(per_epoch);
        let mut drawn = 0;
        let batches: Vec<_> = sampler
            .take_while(|b| {
                let go = drawn < target;
                drawn += b.len();
                go
            })
            .collect();
        let steps = batches.len() as u64;
        let schedule = LrSchedule::new(self.settings.lr, self.settings.warmup_steps.min((steps / 5).max(1)))?;
        let mut states: Vec<Option<AdamState<f32>>> = work
            .iter()
            .zip(rules)
            .map(|(e, r)| (*r != UpdateRule::Nothing).then(|| AdamState::new(e.tensor.numel())))
            .collect();
        let mut dropout = seeds::substream(phase_seed, seeds::DROPOUT);
        let tail = (steps as usize / 10).max(1);
        let (mut tail_sum, mut tail_n) = (0.0, 0usize);
        let (mut seen, mut epoch_loss, mut epoch_n, mut epoch) = (0usize, 0.0, 0usize, 1);
        for (s, b) in batches.iter().enumerate() {
            let rows: Vec<(&[u32], &[u32])> = b
                .iter()
                .map(|&(p, i)| (pools[p][i].src.as_slice(), pools[p][i].tgt.as_slice()))
                .collect();
            let tb = TokenBatch::from_pairs(&rows)?;
            let mut tape = Tape::new();
            let loss = self.model.loss(&mut tape, work, &tb, Some(&mut dropout as &mut dyn RngCore), true)?;
            let lv = tape.value(loss).data()[0] as f64;
            ensure!(lv.is_finite(), Contract, "{label}: loss diverged at step {}", s + 1);
            let grads = tape.backward(loss)?;
            let lr = schedule.lr_at(s as u64 + 1)?;
            for ((e, rule), st) in work.entries_mut().zip(rules).zip(states.iter_mut()) {
                if let (Some(st), Some(g)) = (st.as_mut(), grads.get(&e.name)) {
                    adam_step(&mut e.tensor, g, st, lr, rule.as_mask())?;
                }
            }
            if s + tail >= batches.len() {
                tail_sum += lv;
                tail_n += 1;
            }
            seen += b.len();
            epoch_loss += lv;
            epoch_n += 1;
            if seen >= per_epoch * epoch || s + 1 == batches.len() {
                (self.progress)(&format!(
                    "{label}: epoch {epoch}/{passes} step {} loss {:.4}",
                    s + 1,
                    epoch_loss / epoch_n as f64
                ));
                epoch += 1;
                epoch_loss = 0.0;
                epoch_n = 0;
            }
        }
        Ok(TrainStats {
            steps,
            examples: drawn as u64,
            loss: (tail_n > 0).then(|| tail_sum / tail_n as f64),
        })
    }

    fn record(phase: Phase, stats: TrainStats, before: BTreeMap<String, f64>, after: BTreeMap<String, f64>) -> PhaseRecord {
        PhaseRecord {
            phase,
            steps: stats.steps,
            examples: stats.examples,
            train_loss: stats.loss,
            dev_loss_before: before,
            dev_loss: after,
        }
    }

    /// Trains every parameter on all pairs.
    pub fn train_multilingual(&self, ck: &mut Checkpoint, epochs: usize) -> Result<PhaseRecord> {
        self.check_compatible(ck)?;
        ensure!(ck.mask.is_none(), Contract, "multilingual training runs before any pruning");
        ensure!(self.corpus.num_pairs() > 0, InvalidInput, "empty corpus");
        let phase = Phase::new(PhaseKind::MultilingualTrain, None, epochs, None);
        let pairs = self.all_pairs();
        let before = self.dev_losses(&ck.params, &pairs)?;
        let rules = vec![UpdateRule::All; ck.params.len()];
        let mut work = ck.params.clone();
        let stats = self.train(&phase.label(), &mut work, &rules, &pairs, epochs)?;
        ck.params = work;
        let after = self.dev_losses(&ck.params, &pairs)?;
        let rec = Self::record(phase, stats, before, after);
        ck.log.push(rec.clone());
        Ok(rec)
    }

    /// Prunes `ratio` of every prunable tensor by magnitude, hands the
    /// survivors to the shared owner and retrains them together with the
    /// non-prunable parameters, which are frozen from then on.
    pub fn base_prune_retrain(&self, ck: &mut Checkpoint, ratio: f64, epochs: usize) -> Result<PhaseRecord> {
        self.check_compatible(ck)?;
        ensure!((0.0..1.0).contains(&ratio), Config, "base pruning ratio {ratio} outside [0, 1)");
        ensure!(ck.mask.is_none(), Contract, "the base model is already pruned");
        let phase = Phase::new(PhaseKind::BasePruneRetrain, None, epochs, Some(ratio));
        let mut mask = OwnershipMask::uniform(&ck.params, SHARED, self.corpus.num_pairs())?;
        for e in ck.params.entries_mut().filter(|e| e.prunable) {
            let all: Vec<usize> = (0..e.tensor.numel()).collect();
            let pruned = magnitude_prune(e.tensor.data(), &all, ratio)?;
            let owners = mask.owners_mut(&e.name)?;
            let data = e.tensor.data_mut();
            for i in pruned {
                data[i] = 0.0;
                owners[i] = FREE;
            }
        }
        let pairs = self.all_pairs();
        let before = self.dev_losses(&ck.params, &pairs)?;
        let shared = OwnerSet::of(&[SHARED]);
        let rules: Vec<UpdateRule> = ck
            .params
            .iter()
            .map(|e| UpdateRule::for_param(Some(&mask), &e.name, e.prunable, &shared, true))
            .collect();
        let mut work = masked_view(&ck.params, &mask, &OwnerSet::zero_shot())?;
        let stats = self.train(&phase.label(), &mut work, &rules, &pairs, epochs)?;
        write_back(&mut ck.params, &work, &rules);
        mask.check_free_zero(&ck.params)?;
        let after = self.dev_losses(&ck.params, &pairs)?;
        ck.mask = Some(mask);
        let rec = Self::record(phase, stats, before, after);
        ck.log.push(rec.clone());
        Ok(rec)
    }

    /// Stage A for the next pair: restarts the free weights from small
    /// random values and trains only them, reading every earlier owner.
    pub fn pair_adapt(&self, ck: &mut Checkpoint, lang: &str, epochs: usize) -> Result<PhaseRecord> {
        self.check_compatible(ck)?;
        let k = self.corpus.pair_index(lang)?;
        ensure!(ck.position(lang).is_none(), Contract, "pair {lang} is already adapted");
        if let Some(last) = ck.log.last() {
            ensure!(
                last.phase.kind != PhaseKind::PairAdapt,
                Contract,
                "pair {} was adapted but not yet pruned",
                last.phase.pair.as_deref().unwrap_or("?")
            );
        }
        let t = ck.order.len() + 1;
        owner_of_position(t)?;
        let phase = Phase::new(PhaseKind::PairAdapt, Some(lang), epochs, None);
        let before = self.dev_losses(&pair_view(ck, lang)?, &[k])?;
        let mask = ck
            .mask
            .as_ref()
            .ok_or_else(|| Error::Contract("pair adaptation needs a pruned base model".into()))?;
        let free = mask.histogram().get(&FREE).copied().unwrap_or(0);
        ensure!(free > 0, Capacity, "no free weights left for pair {lang}");
        let mut rng = seeds::substream(seeds::child_seed(self.seed, &phase.label()), seeds::INIT);
        for e in ck.params.entries_mut().filter(|e| e.prunable) {
            let (rows, cols) = e.tensor.rows_cols();
            let a = self.settings.free_init_scale * (6.0 / (rows + cols) as f64).sqrt();
            let owners = mask.owners(&e.name).expect("mask covers prunable tensors");
            for (w, &o) in e.tensor.data_mut().iter_mut().zip(owners) {
                if o == FREE {
                    *w = rng.random_range(-a..a) as f32;
                }
            }
        }
        let free_only = OwnerSet::of(&[FREE]);
        let rules: Vec<UpdateRule> = ck
            .params
            .iter()
            .map(|e| UpdateRule::for_param(Some(mask), &e.name, e.prunable, &free_only, false))
            .collect();
        let mut work = masked_view(&ck.params, mask, &OwnerSet::free_training_view(t)?)?;
        let stats = self.train(&phase.label(), &mut work, &rules, &[k], epochs)?;
        write_back(&mut ck.params, &work, &rules);
        ck.order.push(lang.to_string());
        let view = masked_view(&ck.params, mask, &OwnerSet::free_training_view(t)?)?;
        let after = self.dev_losses(&view, &[k])?;
        let rec = Self::record(phase, stats, before, after);
        ck.log.push(rec.clone());
        Ok(rec)
    }

    /// Prunes `ratio` of the pair's trained free weights, hands the
    /// survivors to the pair and retrains only those (stage B).
    pub fn pair_prune_retrain(&self, ck: &mut Checkpoint, lang: &str, ratio: f64, epochs: usize) -> Result<PhaseRecord> {
        self.check_compatible(ck)?;
        ensure!((0.0..1.0).contains(&ratio), Config, "pair pruning ratio {ratio} outside [0, 1)");
        let k = self.corpus.pair_index(lang)?;
        let adapted = ck.log.last().map(|r| (r.phase.kind, r.phase.pair.as_deref()));
        ensure!(
            adapted == Some((PhaseKind::PairAdapt, Some(lang))) && ck.order.last().map(String::as_str) == Some(lang),
            Contract,
            "pair {lang} must be adapted immediately before pruning"
        );
        let t = ck.order.len();
        let owner = owner_of_position(t)?;
        let phase = Phase::new(PhaseKind::PairPruneRetrain, Some(lang), epochs, Some(ratio));
        let mask = ck
            .mask
            .as_mut()
            .ok_or_else(|| Error::Contract("pair pruning needs a pruned base model".into()))?;
        let trained: IndexSets = mask.free_indices();
        let mut pruned = IndexSets::new();
        for (name, idx) in &trained {
            if idx.is_empty() {
                continue;
            }
            let tensor = ck.params.get_mut(name)?;
            let p = magnitude_prune(tensor.data(), idx, ratio)?;
            let data = tensor.data_mut();
            for &i in &p {
                data[i] = 0.0;
            }
            pruned.insert(name.clone(), p);
        }
        claim_survivors(mask, &trained, &pruned, owner)?;
        let mask = ck.mask.as_ref().expect("set above");
        mask.check_free_zero(&ck.params)?;
        let view_set = OwnerSet::inference(t)?;
        let mut work = masked_view(&ck.params, mask, &view_set)?;
        let before = self.dev_losses(&work, &[k])?;
        let own = OwnerSet::of(&[owner]);
        let rules: Vec<UpdateRule> = ck
            .params
            .iter()
            .map(|e| UpdateRule::for_param(Some(mask), &e.name, e.prunable, &own, false))
            .collect();
        let stats = self.train(&phase.label(), &mut work, &rules, &[k], epochs)?;
        write_back(&mut ck.params, &work, &rules);
        let after = self.dev_losses(&masked_view(&ck.params, mask, &view_set)?, &[k])?;
        let rec = Self::record(phase, stats, before, after);
        ck.log.push(rec.clone());
        Ok(rec)
    }

    /// Both adaptation stages for one pair.
    pub fn adapt_pair(
        &self,
        ck: &mut Checkpoint,
        lang: &str,
        adapt_epochs: usize,
        ratio: f64,
        retrain_epochs: usize,
    ) -> Result<(PhaseRecord, PhaseRecord)> {
        ensure!((0.0..1.0).contains(&ratio), Config, "pair pruning ratio {ratio} outside [0, 1)");
        let a = self.pair_adapt(ck, lang, adapt_epochs)?;
        let b = self.pair_prune_retrain(ck, lang, ratio, retrain_epochs)?;
        Ok((a, b))
    }

    pub fn run_phase(&self, ck: &mut Checkpoint, phase: &Phase) -> Result<PhaseRecord> {
        let ratio = || phase.ratio.ok_or_else(|| Error::Contract(format!("{} needs a ratio", phase.label())));
        let pair = || {
            phase
                .pair
                .as_deref()
                .ok_or_else(|| Error::Contract(format!("{} needs a pair", phase.label())))
        };
        match phase.kind {
            PhaseKind::MultilingualTrain => self.train_multilingual(ck, phase.epochs),
            PhaseKind::BasePruneRetrain => self.base_prune_retrain(ck, ratio()?, phase.epochs),
            PhaseKind::PairAdapt => self.pair_adapt(ck, pair()?, phase.epochs),
            PhaseKind::PairPruneRetrain => self.pair_prune_retrain(ck, pair()?, ratio()?, phase.epochs),
            PhaseKind::FullFinetuneBaseline => Err(Error::Contract(
                "the full fine-tuning baseline produces a separate checkpoint".into(),
            )),
        }
    }

    /// Executes the phases of `plan` not yet recorded in the checkpoint log,
    /// calling `after` once each completes. Already recorded phases must form
    /// a prefix of the plan and match it exactly.
    pub fn run_plan(
        &self,
        ck: &mut Checkpoint,
        plan: &PhasePlan,
        mut after: impl FnMut(&PhaseRecord, &Checkpoint) -> Result<()>,
    ) -> Result<()> {
        let langs: Vec<String> = self.corpus.pairs.iter().map(|p| p.lang.clone()).collect();
        plan.validate(&langs)?;
        let mut start = 0;
        for ph in &plan.phases {
            match ck.log.iter().find(|r| r.phase.label() == ph.label()) {
                Some(r) => {
                    ensure!(
                        &r.phase == ph,
                        Contract,
                        "checkpoint ran {} with different settings; refusing to resume",
                        ph.label()
                    );
                    ensure!(
                        start == plan.phases.iter().position(|p| p == ph).expect("from plan"),
                        Contract,
                        "completed phases are not a prefix of the plan"
                    );
                    start += 1;
                }
                None => break,
            }
        }
        for ph in &plan.phases[start..] {
            let rec = self.run_phase(ck, ph)?;
            after(&rec, ck)?;
        }
        Ok(())
    }

    /// Adapts the pairs in `order`, reporting capacity after each pair.
    pub fn adapt_sequence(
        &self,
        ck: &mut Checkpoint,
        order: &[String],
        ratios: &[f64],
        epochs: &EpochPlan,
        mut after_phase: impl FnMut(&PhaseRecord, &Checkpoint, Option<&CapacityReport>) -> Result<()>,
    ) -> Result<()> {
        ensure!(ck.mask.is_some(), Contract, "adaptation needs a pruned base model");
        let plan = PhasePlan::adaptation(order, ratios, epochs)?;
        self.run_plan(ck, &plan, |rec, ck| {
            let cap = (rec.phase.kind == PhaseKind::PairPruneRetrain)
                .then(|| CapacityReport::from_mask(ck.mask.as_ref().expect("checked")));
            after_phase(rec, ck, cap.as_ref())
        })
    }

    /// Fine-tunes every parameter of an unpruned multilingual model on one
    /// pair, returning a separate checkpoint.
    pub fn full_finetune_baseline(&self, parent: &Checkpoint, lang: &str, epochs: usize) -> Result<Checkpoint> {
        self.check_compatible(parent)?;
        ensure!(parent.mask.is_none(), Contract, "the baseline starts from the unpruned multilingual model");
        let k = self.corpus.pair_index(lang)?;
        let phase = Phase::new(PhaseKind::FullFinetuneBaseline, Some(lang), epochs, None);
        let mut ck = parent.clone();
        let pairs = self.all_pairs();
        let before = self.dev_losses(&ck.params, &pairs)?;
        let rules = vec![UpdateRule::All; ck.params.len()];
        let mut work = ck.params.clone();
        let stats = self.train(&phase.label(), &mut work, &rules, &[k], epochs)?;
        ck.params = work;
        let after = self.dev_losses(&ck.params, &pairs)?;
        ck.log.push(Self::record(phase, stats, before, after));
        Ok(ck)
    }
}
