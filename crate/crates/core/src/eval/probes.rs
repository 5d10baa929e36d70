use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Direction, Example, ParallelCorpus, ENGLISH};
use crate::error::Result;
use crate::seeds;

/// Fixed teacher-forced inputs per pair language, both directions of each
/// seeded random sentence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub pairs: BTreeMap<String, Vec<(Vec<u32>, Vec<u32>)>>,
}

impl ProbeSet {
    pub fn generate(corpus: &ParallelCorpus, per_pair: usize, seed: u64) -> Result<Self> {
        let mut rng = seeds::substream(seed, "probes");
        let v = &corpus.vocab;
        let mut pairs = BTreeMap::new();
        for (k, p) in corpus.pairs.iter().enumerate() {
            let mut rows = Vec::with_capacity(2 * per_pair);
            for _ in 0..per_pair {
                let base = corpus.random_base(&mut rng);
                let en = corpus.render_ids(0, &base);
                let xx = corpus.render_ids(k + 1, &base);
                for d in Direction::BOTH {
                    let (ctrl, src, tgt) = match d {
                        Direction::FromEnglish => (v.control_id(&p.lang)?, &en, &xx),
                        Direction::IntoEnglish => (v.control_id(ENGLISH)?, &xx, &en),
                    };
                    let mut s = vec![ctrl];
                    s.extend_from_slice(src);
                    rows.push((s, tgt.clone()));
                }
            }
            pairs.insert(p.lang.clone(), rows);
        }
        Ok(Self { pairs })
    }

    pub fn examples(&self, lang: &str) -> Vec<Example> {
        self.pairs
            .get(lang)
            .map(|rows| rows.iter().map(|(s, t)| Example { src: s.clone(), tgt: t.clone() }).collect())
            .unwrap_or_default()
    }

    pub fn all_examples(&self) -> Vec<Example> {
        self.pairs.keys().flat_map(|l| self.examples(l)).collect()
    }
}
