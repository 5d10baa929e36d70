use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{CorpusConfig, Direction, Example, PairData, ParallelCorpus, SentencePair, Split, ENGLISH};
use super::lang::LanguageSpec;
use super::vocab::Vocab;
use crate::error::{ensure, Error, Result};

pub const MANIFEST: &str = "corpus.json";
pub const MULTIWAY: &str = "multiway.tsv";
const FORMAT: &str = "prunepack-corpus";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config: CorpusConfig,
    tokens: Vec<String>,
    content_range: Range<u32>,
    control_range: Range<u32>,
    languages: Vec<LanguageSpec>,
    pair_sizes: Vec<usize>,
    files: Vec<String>,
}

fn ids_text(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(field: &str, vocab_size: usize, where_: &str) -> Result<Vec<u32>> {
    field
        .split_whitespace()
        .map(|t| {
            let id: u32 = t.parse().map_err(|_| Error::InvalidInput(format!("{where_}: bad token id {t:?}")))?;
            ensure!((id as usize) < vocab_size, InvalidInput, "{where_}: token id {id} outside vocabulary");
            Ok(id)
        })
        .collect()
}

pub fn direction_file(split: Split, src: &str, tgt: &str) -> String {
    format!("{}.{src}-{tgt}.tsv", split.name())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn examples_text(examples: &[Example]) -> String {
    examples
        .iter()
        .map(|e| format!("{}\t{}\n", ids_text(&e.src), ids_text(&e.tgt)))
        .collect()
}

impl ParallelCorpus {
    /// Writes one tab-separated file per split and direction, the multi-way
    /// file (one column per language) and the sidecar manifest.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (k, p) in self.pairs.iter().enumerate() {
            for split in Split::ALL {
                for dir_ in Direction::BOTH {
                    let (s, t) = match dir_ {
                        Direction::FromEnglish => (ENGLISH, p.lang.as_str()),
                        Direction::IntoEnglish => (p.lang.as_str(), ENGLISH),
                    };
                    let name = direction_file(split, s, t);
                    write(&dir.join(&name), &examples_text(&self.direction_examples(k, dir_, split)))?;
                    files.push(name);
                }
            }
        }
        let multiway: String = self
            .multiway
            .iter()
            .map(|row| row.iter().map(|s| ids_text(s)).collect::<Vec<_>>().join("\t") + "\n")
            .collect();
        write(&dir.join(MULTIWAY), &multiway)?;
        files.push(MULTIWAY.into());
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            seed: self.seed,
            config: self.config.clone(),
            tokens: self.vocab.tokens(),
            content_range: self.vocab.content_range(),
            control_range: self.vocab.control_range(),
            languages: self.languages.clone(),
            pair_sizes: self.sizes(),
            files,
        };
        write(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))
    }

    /// Reads a directory written by [`ParallelCorpus::write_dir`]. The
    /// English-to-pair files carry the sentence pairs; the reverse files must
    /// mirror them.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let m: Manifest = serde_json::from_str(&read(MANIFEST)?)?;
        ensure!(m.format == FORMAT, InvalidInput, "{MANIFEST}: not a corpus manifest");
        ensure!(m.version == VERSION, InvalidInput, "{MANIFEST}: unsupported version {}", m.version);
        m.config.validate()?;
        let names: Vec<String> = m.languages.iter().map(|l| l.id.clone()).collect();
        let vocab = Vocab::new(m.content_range.len(), names)?;
        ensure!(vocab.tokens() == m.tokens, InvalidInput, "{MANIFEST}: token list disagrees with layout");
        ensure!(vocab.control_range() == m.control_range, InvalidInput, "{MANIFEST}: control range disagrees");
        let v = vocab.size();
        let mut pairs = Vec::new();
        for spec in &m.languages[1..] {
            let mut splits = Vec::new();
            for split in Split::ALL {
                let fwd_name = direction_file(split, ENGLISH, &spec.id);
                let back_name = direction_file(split, &spec.id, ENGLISH);
                let (fwd, back) = (read(&fwd_name)?, read(&back_name)?);
                let ctrl_xx = vocab.control_id(&spec.id)?;
                let ctrl_en = vocab.control_id(ENGLISH)?;
                let mut rows = Vec::new();
                let mut back_lines = back.lines();
                for (n, line) in fwd.lines().enumerate() {
                    let at = format!("{fwd_name}:{}", n + 1);
                    let (s, t) = line
                        .split_once('\t')
                        .ok_or_else(|| Error::InvalidInput(format!("{at}: expected two tab-separated fields")))?;
                    let src = parse_ids(s, v, &at)?;
                    let tgt = parse_ids(t, v, &at)?;
                    ensure!(src.first() == Some(&ctrl_xx), InvalidInput, "{at}: source must start with <2{}>", spec.id);
                    let sp = SentencePair {
                        en: src[1..].to_vec(),
                        xx: tgt,
                    };
                    let mut mirrored = vec![ctrl_en];
                    mirrored.extend_from_slice(&sp.xx);
                    let expect = format!("{}\t{}", ids_text(&mirrored), ids_text(&sp.en));
                    ensure!(
                        back_lines.next() == Some(expect.as_str()),
                        InvalidInput,
                        "{back_name}:{}: does not mirror {fwd_name}",
                        n + 1
                    );
                    rows.push(sp);
                }
                ensure!(back_lines.next().is_none(), InvalidInput, "{back_name}: extra lines");
                splits.push(rows);
            }
            let test = splits.pop().unwrap_or_default();
            let dev = splits.pop().unwrap_or_default();
            let train = splits.pop().unwrap_or_default();
            pairs.push(PairData {
                lang: spec.id.clone(),
                train,
                dev,
                test,
            });
        }
        let mut multiway = Vec::new();
        for (n, line) in read(MULTIWAY)?.lines().enumerate() {
            let at = format!("{MULTIWAY}:{}", n + 1);
            let row = line
                .split('\t')
                .map(|f| parse_ids(f, v, &at))
                .collect::<Result<Vec<_>>>()?;
            ensure!(row.len() == m.languages.len(), InvalidInput, "{at}: expected one column per language");
            multiway.push(row);
        }
        let corpus = ParallelCorpus {
            config: m.config,
            seed: m.seed,
            vocab,
            languages: m.languages,
            pairs,
            multiway,
        };
        ensure!(corpus.sizes() == m.pair_sizes, InvalidInput, "{MANIFEST}: pair sizes disagree with files");
        Ok(corpus)
    }
}
