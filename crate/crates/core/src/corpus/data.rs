use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lang::{Cipher, LanguageSpec};
use super::vocab::Vocab;
use crate::error::{ensure, Result};
use crate::model::NUM_SPECIALS;
use crate::seeds;

pub const ENGLISH: &str = "en";

/// Whether all languages write into one shared content block or each into its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictMode {
    Conflict,
    Disjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Training sentence pairs per English-xx language pair, in pair id order.
    pub pair_sizes: Vec<usize>,
    pub base_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Sentences rendered in every language for the non-English directions.
    pub multiway_size: usize,
    pub cipher_fraction: f64,
    pub mode: ConflictMode,
}

impl CorpusConfig {
    pub fn desk() -> Self {
        Self {
            pair_sizes: vec![8000, 6000, 4000, 3000, 2000, 1000, 700, 400],
            base_vocab: 64,
            min_len: 4,
            max_len: 16,
            dev_size: 100,
            test_size: 100,
            multiway_size: 50,
            cipher_fraction: 0.5,
            mode: ConflictMode::Conflict,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.pair_sizes.is_empty(), Config, "corpus.pair_sizes: at least one pair required");
        ensure!(self.pair_sizes.len() <= 254, Config, "corpus.pair_sizes: at most 254 pairs");
        ensure!(self.pair_sizes.iter().all(|&n| n > 0), Config, "corpus.pair_sizes: sizes must be positive");
        ensure!(self.base_vocab >= 2, Config, "corpus.base_vocab: need at least 2 symbols");
        ensure!(
            1 <= self.min_len && self.min_len <= self.max_len,
            Config,
            "corpus.min_len/max_len: need 1 <= min_len <= max_len"
        );
        ensure!(self.dev_size > 0 && self.test_size > 0, Config, "corpus.dev_size/test_size: must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.cipher_fraction),
            Config,
            "corpus.cipher_fraction: must lie in [0, 1]"
        );
        Ok(())
    }

    pub fn languages(&self) -> Vec<String> {
        std::iter::once(ENGLISH.to_string())
            .chain((1..=self.pair_sizes.len()).map(|i| format!("l{i}")))
            .collect()
    }

    /// Token count of the vocabulary a corpus with this config uses.
    pub fn vocab_size(&self) -> usize {
        NUM_SPECIALS as usize + self.content_size() + self.pair_sizes.len() + 1
    }

    fn content_size(&self) -> usize {
        match self.mode {
            ConflictMode::Conflict => self.base_vocab,
            ConflictMode::Disjoint => self.base_vocab * (self.pair_sizes.len() + 1),
        }
    }
}

/// An English sentence and its rendering in the pair's other language, as token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub en: Vec<u32>,
    pub xx: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// English into the pair language, or back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    FromEnglish,
    IntoEnglish,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::FromEnglish, Direction::IntoEnglish];
}

/// One directional training example: source ids start with the control token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairData {
    pub lang: String,
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

impl PairData {
    pub fn split(&self, split: Split) -> &[SentencePair] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Synthetic English-centric parallel data plus a multi-way set for the
/// non-English directions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub vocab: Vocab,
    /// English first, then the pair languages in pair id order.
    pub languages: Vec<LanguageSpec>,
    pub pairs: Vec<PairData>,
    /// `multiway[s][l]`: content ids of sentence `s` in language `l`.
    pub multiway: Vec<Vec<Vec<u32>>>,
}

fn random_sentence<R: Rng + ?Sized>(cfg: &CorpusConfig, rng: &mut R) -> Vec<u32> {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    (0..len).map(|_| rng.random_range(0..cfg.base_vocab as u32)).collect()
}

impl ParallelCorpus {
    pub fn generate(config: &CorpusConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut seeds::substream(seed, seeds::CORPUS);
        let n = config.base_vocab;
        let names = config.languages();
        let vocab = Vocab::new(config.content_size(), names.clone())?;
        let pairs_n = config.pair_sizes.len();
        let mut languages = vec![LanguageSpec::new(ENGLISH, Cipher::identity(n, 0), 1, 0)?];
        for (i, &size) in config.pair_sizes.iter().enumerate() {
            let offset = match config.mode {
                ConflictMode::Conflict => 0,
                ConflictMode::Disjoint => ((i + 1) * n) as u32,
            };
            // The last two languages use mutually inverse ciphers.
            let cipher = if pairs_n >= 2 && i == pairs_n - 1 {
                languages[i].cipher.inverted().with_offset(offset)
            } else {
                Cipher::partial(n, config.cipher_fraction, offset, rng)?
            };
            languages.push(LanguageSpec::new(names[i + 1].clone(), cipher, 1 + (i + 1) % 3, size)?);
        }

        let to_ids = |content: Vec<u32>| content.into_iter().map(|c| vocab.content_id(c)).collect::<Vec<_>>();
        let mut pairs = Vec::with_capacity(pairs_n);
        for (i, &size) in config.pair_sizes.iter().enumerate() {
            let spec = &languages[i + 1];
            let total = size + config.dev_size + config.test_size;
            let mut seen = HashSet::with_capacity(total);
            let mut rendered = Vec::with_capacity(total);
            let mut attempts = 0usize;
            while rendered.len() < total {
                attempts += 1;
                ensure!(
                    attempts <= 20 * total + 1000,
                    Config,
                    "corpus: cannot draw {total} distinct sentences of length {}..={} over {n} symbols",
                    config.min_len,
                    config.max_len
                );
                let s = random_sentence(config, rng);
                if seen.insert(s.clone()) {
                    rendered.push(SentencePair {
                        en: to_ids(languages[0].render(&s)),
                        xx: to_ids(spec.render(&s)),
                    });
                }
            }
            let test = rendered.split_off(size + config.dev_size);
            let dev = rendered.split_off(size);
            pairs.push(PairData {
                lang: spec.id.clone(),
                train: rendered,
                dev,
                test,
            });
        }
        let multiway = (0..config.multiway_size)
            .map(|_| {
                let s = random_sentence(config, rng);
                languages.iter().map(|l| to_ids(l.render(&s))).collect()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            seed,
            vocab,
            languages,
            pairs,
            multiway,
        })
    }

    /// A fresh base sentence drawn like the corpus sentences.
    pub fn random_base<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        random_sentence(&self.config, rng)
    }

    /// Token ids of `base` rendered in language `lang` (0 is English).
    pub fn render_ids(&self, lang: usize, base: &[u32]) -> Vec<u32> {
        self.languages[lang].render(base).into_iter().map(|c| self.vocab.content_id(c)).collect()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_index(&self, lang: &str) -> Result<usize> {
        let i = self.vocab.language_index(lang)?;
        ensure!(i > 0, InvalidInput, "{lang} is the pivot language, not a pair");
        Ok(i - 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.train.len()).collect()
    }

    fn example(&self, lang: &str, sp: &SentencePair, dir: Direction) -> Example {
        let (ctrl, src, tgt) = match dir {
            Direction::FromEnglish => (lang, &sp.en, &sp.xx),
            Direction::IntoEnglish => (ENGLISH, &sp.xx, &sp.en),
        };
        let mut s = Vec::with_capacity(src.len() + 1);
        s.push(self.vocab.control_id(ctrl).expect("corpus languages are in the vocabulary"));
        s.extend_from_slice(src);
        Example { src: s, tgt: tgt.clone() }
    }

    pub fn direction_examples(&self, pair: usize, dir: Direction, split: Split) -> Vec<Example> {
        let p = &self.pairs[pair];
        p.split(split).iter().map(|sp| self.example(&p.lang, sp, dir)).collect()
    }

    /// Both directions of every sentence pair, interleaved.
    pub fn examples(&self, pair: usize, split: Split) -> Vec<Example> {
        let p = &self.pairs[pair];
        p.split(split)
            .iter()
            .flat_map(|sp| Direction::BOTH.map(|d| self.example(&p.lang, sp, d)))
            .collect()
    }

    /// Every ordered pair of distinct non-English languages.
    pub fn zero_shot_directions(&self) -> Vec<(String, String)> {
        let names = &self.vocab.languages()[1..];
        let mut out = Vec::new();
        for a in names {
            for b in names {
                if a != b {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }

    pub fn zero_shot_examples(&self, src_lang: &str, tgt_lang: &str) -> Result<Vec<Example>> {
        let s = self.vocab.language_index(src_lang)?;
        let t = self.vocab.language_index(tgt_lang)?;
        let ctrl = self.vocab.control_id(tgt_lang)?;
        Ok(self
            .multiway
            .iter()
            .map(|row| {
                let mut src = vec![ctrl];
                src.extend_from_slice(&row[s]);
                Example { src, tgt: row[t].clone() }
            })
            .collect())
    }
}
