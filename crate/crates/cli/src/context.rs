use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use prunepack::config::ExperimentConfig;
use prunepack::corpus::{ParallelCorpus, MANIFEST};
use prunepack::pipeline::{Checkpoint, Trainer};
use prunepack::{seeds, Error, Result};
use serde_json::json;
use serde::de::DeserializeOwned;

use crate::Flags;

pub const DATA: &str = "data";
pub const CKPT: &str = "ckpt";
pub const EVAL: &str = "eval";
pub const REPORTS: &str = "reports";
pub const RUN_LOG: &str = "run.jsonl";
pub const CONFIG: &str = "config.toml";

/// Effective configuration and run directory of one invocation.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    quiet: bool,
    started: Instant,
}

impl Context {
    pub fn open(flags: &Flags, overrides: toml::Table) -> Result<Self> {
        let source = match &flags.config {
            Some(p) => Some(p.clone()),
            None => Some(flags.out.join(CONFIG)).filter(|p| p.is_file()),
        };
        let text = match &source {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let cfg = ExperimentConfig::resolve(text.as_deref(), overrides).map_err(|e| match (e, &source) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })?;
        Ok(Self {
            cfg,
            out: flags.out.clone(),
            quiet: flags.quiet,
            started: Instant::now(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn ckpt_path(&self, name: &str) -> PathBuf {
        self.path(CKPT).join(format!("{name}.ckpt"))
    }

    pub fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    pub fn log(&self, event: serde_json::Value) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let p = self.path(RUN_LOG);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{event}").map_err(|e| Error::io(&p, e))
    }

    pub fn log_start(&self, command: &str) -> Result<()> {
        let seed = self.cfg.seed;
        let streams: serde_json::Map<String, serde_json::Value> = [seeds::CORPUS, seeds::INIT, seeds::DROPOUT, seeds::BATCHING]
            .iter()
            .map(|l| (l.to_string(), json!(format!("{seed}/{l}"))))
            .collect();
        self.log(json!({
            "event": "start",
            "command": command,
            "config_hash": self.cfg.hash(),
            "seed": seed,
            "streams": streams,
            "config": self.cfg.to_toml(),
        }))
    }

    pub fn log_finish(&self, command: &str, code: u8) -> Result<()> {
        self.log(json!({
            "event": "finish",
            "command": command,
            "exit_code": code,
            "wall_secs": self.started.elapsed().as_secs_f64(),
        }))
    }

    pub fn write_config(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let p = self.path(CONFIG);
        fs::write(&p, self.cfg.to_toml()).map_err(|e| Error::io(&p, e))
    }

    /// The corpus in the run directory, which must match the config.
    pub fn corpus(&self) -> Result<ParallelCorpus> {
        let dir = self.path(DATA);
        if !dir.join(MANIFEST).is_file() {
            return Err(Error::MissingArtifacts(vec![dir.join(MANIFEST).display().to_string()]));
        }
        let c = ParallelCorpus::read_dir(&dir)?;
        if c.config != self.cfg.corpus || c.seed != self.cfg.seed {
            return Err(Error::Config(format!(
                "{} was generated from a different corpus config or seed; rerun gen-data",
                dir.display()
            )));
        }
        Ok(c)
    }

    pub fn trainer<'a>(&'a self, corpus: &'a ParallelCorpus) -> Result<Trainer<'a>> {
        Ok(Trainer::new(
            corpus,
            self.cfg.model.clone(),
            self.cfg.train.clone(),
            self.cfg.sampler.clone(),
            self.cfg.seed,
        )?
        .with_progress(move |m| self.progress(m)))
    }

    pub fn experiment(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }

    pub fn has(&self, name: &str) -> bool {
        self.ckpt_path(name).is_file()
    }

    pub fn load(&self, name: &str) -> Result<Checkpoint> {
        let p = self.ckpt_path(name);
        if !p.is_file() {
            return Err(Error::MissingArtifacts(vec![p.display().to_string()]));
        }
        Checkpoint::load(&p)
    }

    pub fn save(&self, name: &str, ck: &Checkpoint) -> Result<()> {
        ck.save(&self.ckpt_path(name))
    }

    pub fn write(&self, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: impl AsRef<Path>) -> Result<T> {
        let p = self.path(rel);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
