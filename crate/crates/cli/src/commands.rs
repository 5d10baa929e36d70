use std::time::Instant;

use prunepack::corpus::{ParallelCorpus, Split};
use prunepack::eval::{
    capacity_tsv, evaluate_checkpoint, evaluate_pair, interference_tsv, pair_view, plot_tsv, stability_check,
    zero_shot_grid, zero_shot_tsv, SystemEval, ZeroShotRow,
};
use prunepack::packing::{expected_shares, CapacityReport};
use prunepack::pipeline::{Checkpoint, PhaseKind, PhaseRecord};
use prunepack::{Error, Result};
use serde_json::json;

use crate::context::{Context, DATA, EVAL, REPORTS};
use crate::{ReportFormat, SplitArg};

const PARENT: &str = "parent";
const PRUNED: &str = "pruned";
const ADAPTED: &str = "adapted";
const ADAPT_STATE: &str = "adapt-state";
const FULL_FT: &str = "full-ft";

fn snapshot_name(t: usize, lang: &str) -> String {
    format!("after-{t}-{lang}")
}

fn log_phase(ctx: &Context, rec: &PhaseRecord, started: Instant) -> Result<()> {
    ctx.log(json!({
        "event": "phase",
        "phase": rec.phase.label(),
        "record": rec,
        "wall_secs": started.elapsed().as_secs_f64(),
    }))
}

pub fn gen_data(ctx: &Context) -> Result<()> {
    let corpus = ParallelCorpus::generate(&ctx.cfg.corpus, ctx.cfg.seed)?;
    corpus.write_dir(&ctx.path(DATA))?;
    ctx.write_config()?;
    ctx.progress(&format!(
        "corpus: {} pairs, vocabulary {}, sizes {:?}",
        corpus.num_pairs(),
        corpus.vocab.size(),
        corpus.sizes()
    ));
    ctx.log(json!({"event": "data", "vocab_size": corpus.vocab.size(), "pair_sizes": corpus.sizes()}))
}

pub fn train_mnmt(ctx: &Context) -> Result<()> {
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let mut ck = t.init_checkpoint(ctx.experiment(), ctx.cfg.eval.probes_per_pair)?;
    let started = Instant::now();
    let rec = t.train_multilingual(&mut ck, ctx.cfg.plan.epochs.multilingual)?;
    log_phase(ctx, &rec, started)?;
    ctx.save(PARENT, &ck)
}

pub fn prune_base(ctx: &Context) -> Result<()> {
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let mut ck = ctx.load(PARENT)?;
    let started = Instant::now();
    let rec = t.base_prune_retrain(&mut ck, ctx.cfg.plan.base_ratio, ctx.cfg.plan.epochs.base_retrain)?;
    log_phase(ctx, &rec, started)?;
    let cap = CapacityReport::from_mask(ck.mask.as_ref().expect("pruned"));
    ctx.log(json!({"event": "capacity", "after": "base", "owners": cap.owners}))?;
    ctx.save(PRUNED, &ck)
}

pub fn adapt(ctx: &Context) -> Result<()> {
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let order = ctx.cfg.adaptation_order();
    let ratios = ctx.cfg.pair_ratios()?;
    let pruned = ctx.load(PRUNED)?;
    let mut ck = if ctx.has(ADAPT_STATE) {
        let state = ctx.load(ADAPT_STATE)?;
        if !state.log.starts_with(&pruned.log) || state.model != pruned.model {
            return Err(Error::Contract(format!(
                "{} does not descend from {}; remove it to restart adaptation",
                ctx.ckpt_path(ADAPT_STATE).display(),
                ctx.ckpt_path(PRUNED).display()
            )));
        }
        ctx.progress(&format!("resuming adaptation after {} phases", state.log.len() - pruned.log.len()));
        state
    } else {
        pruned
    };
    let mut started = Instant::now();
    t.adapt_sequence(&mut ck, &order, &ratios, &ctx.cfg.plan.epochs, |rec, ck, cap| {
        log_phase(ctx, rec, started)?;
        ctx.save(ADAPT_STATE, ck)?;
        if let Some(cap) = cap {
            let lang = rec.phase.pair.as_deref().expect("pair phase");
            let pos = ck.position(lang).expect("adapted");
            ctx.save(&snapshot_name(pos, lang), ck)?;
            let k = corpus.pair_index(lang)?;
            let dev = evaluate_pair(t.model(), &pair_view(ck, lang)?, &corpus, k, Split::Dev, ctx.cfg.eval.max_decode_len)?;
            ctx.progress(&format!(
                "{lang}: owns {:.4}% of prunable weights, free {:.4}%, dev bleu {:.4}/{:.4}",
                100.0 * cap.fraction(pos as u8 + 1),
                100.0 * cap.fraction(0),
                100.0 * dev[0].bleu,
                100.0 * dev[1].bleu
            ));
            ctx.log(json!({"event": "capacity", "after": lang, "owners": cap.owners, "dev": dev}))?;
        }
        started = Instant::now();
        Ok(())
    })?;
    ctx.save(ADAPTED, &ck)?;
    let state = ctx.ckpt_path(ADAPT_STATE);
    std::fs::remove_file(&state).map_err(|e| Error::io(&state, e))
}

pub fn finetune_baseline(ctx: &Context) -> Result<()> {
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let parent = ctx.load(PARENT)?;
    for lang in ctx.cfg.adaptation_order() {
        let started = Instant::now();
        let ft = t.full_finetune_baseline(&parent, &lang, ctx.cfg.plan.epochs.finetune_baseline)?;
        log_phase(ctx, ft.log.last().expect("recorded"), started)?;
        ctx.save(&format!("finetune-{lang}"), &ft)?;
    }
    Ok(())
}

fn eval_file(system: &str) -> String {
    format!("{EVAL}/{system}.json")
}

pub fn eval(ctx: &Context, split: SplitArg) -> Result<()> {
    let split = match split {
        SplitArg::Dev => Split::Dev,
        SplitArg::Test => Split::Test,
    };
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let max_len = ctx.cfg.eval.max_decode_len;
    let mut done = Vec::new();
    for name in [PARENT, PRUNED, ADAPTED] {
        if name != PARENT && !ctx.has(name) {
            continue;
        }
        let ck = ctx.load(name)?;
        let e = evaluate_checkpoint(t.model(), &ck, &corpus, split, name, max_len)?;
        ctx.write(eval_file(name), &(serde_json::to_string_pretty(&e)? + "\n"))?;
        done.push(name.to_string());
    }
    let mut ft = SystemEval {
        system: FULL_FT.into(),
        split: split.name().into(),
        order: Vec::new(),
        own_fraction: Default::default(),
        rows: Vec::new(),
    };
    for (k, p) in corpus.pairs.iter().enumerate() {
        let name = format!("finetune-{}", p.lang);
        if ctx.has(&name) {
            let ck = ctx.load(&name)?;
            ft.rows.extend(evaluate_pair(t.model(), &ck.params, &corpus, k, split, max_len)?);
            ft.own_fraction.insert(p.lang.clone(), 1.0);
        }
    }
    if !ft.rows.is_empty() {
        ctx.write(eval_file(FULL_FT), &(serde_json::to_string_pretty(&ft)? + "\n"))?;
        done.push(FULL_FT.into());
    }
    ctx.progress(&format!("evaluated {} on {}", done.join(", "), split.name()));
    ctx.log(json!({"event": "eval", "split": split.name(), "systems": done}))
}

pub fn zero_shot(ctx: &Context) -> Result<()> {
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let missing: Vec<String> = [PARENT, PRUNED, ADAPTED]
        .iter()
        .filter(|n| !ctx.has(n))
        .map(|n| ctx.ckpt_path(n).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let (parent, pruned, adapted) = (ctx.load(PARENT)?, ctx.load(PRUNED)?, ctx.load(ADAPTED)?);
    let rows = zero_shot_grid(t.model(), &parent, &pruned, &adapted, &corpus, ctx.cfg.eval.max_decode_len)?;
    let same = rows.iter().filter(|r| r.identical).count();
    ctx.progress(&format!("zero-shot: {} directions, {same} identical between pruned and adapted", rows.len()));
    ctx.write(eval_file("zero_shot"), &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    ctx.log(json!({"event": "zero_shot", "directions": rows.len(), "identical": same}))
}

/// Free fraction after base pruning and the second ratio of every adapted
/// pair, as recorded in the phase log.
fn ledger(ck: &Checkpoint) -> Result<(f64, Vec<f64>)> {
    let ratio = |kind: PhaseKind| ck.log.iter().filter(move |r| r.phase.kind == kind).filter_map(|r| r.phase.ratio);
    let base = ratio(PhaseKind::BasePruneRetrain)
        .next()
        .ok_or_else(|| Error::Contract("checkpoint was never pruned".into()))?;
    Ok((base, ratio(PhaseKind::PairPruneRetrain).collect()))
}

pub fn verify(ctx: &Context) -> Result<u8> {
    let corpus = ctx.corpus()?;
    let t = ctx.trainer(&corpus)?;
    let pruned = ctx.load(PRUNED)?;
    let adapted = ctx.load(ADAPTED)?;
    let mut ok = true;
    let mut checks = Vec::new();
    let mut snapshots = vec![(PRUNED.to_string(), pruned)];
    for (i, lang) in adapted.order.iter().enumerate() {
        let name = snapshot_name(i + 1, lang);
        snapshots.push((name.clone(), ctx.load(&name)?));
    }
    for (name, snap) in &snapshots {
        let r = stability_check(t.model(), snap, &adapted)?;
        println!(
            "stability vs {name}: {} ({} views, max deviation {:e})",
            if r.passed() { "pass" } else { "FAIL" },
            r.checks.len(),
            r.max_deviation()
        );
        ok &= r.passed();
        checks.push(json!({"against": name, "passed": r.passed(), "report": r}));
    }
    let mask = adapted.mask.as_ref().ok_or_else(|| Error::Contract("adapted checkpoint has no mask".into()))?;
    let free_zero = mask.check_free_zero(&adapted.params).is_ok();
    let (base, ratios) = ledger(&adapted)?;
    let expected = expected_shares(1.0 - base, &ratios)?;
    let cap = CapacityReport::from_mask(mask);
    let mut ledger_ok = free_zero;
    for (i, (lang, &e)) in adapted.order.iter().zip(&expected).enumerate() {
        let owner = i as u8 + 2;
        let dev = cap.max_tensor_deviation(owner, e);
        let pass = dev <= 1.0;
        println!(
            "capacity {lang}: {:.6} of prunable weights, expected {e:.6}, worst tensor off by {dev} elements: {}",
            cap.fraction(owner),
            if pass { "pass" } else { "FAIL" }
        );
        ledger_ok &= pass;
    }
    println!("free weights are zero: {}", if free_zero { "pass" } else { "FAIL" });
    ok &= ledger_ok;
    ctx.write(
        format!("{EVAL}/verify.json"),
        &(serde_json::to_string_pretty(&json!({"passed": ok, "stability": checks, "capacity_ledger": ledger_ok}))? + "\n"),
    )?;
    ctx.log(json!({"event": "verify", "passed": ok}))?;
    println!("verify: {}", if ok { "pass" } else { "FAIL" });
    Ok(if ok { 0 } else { 5 })
}

pub fn report(ctx: &Context, format: ReportFormat) -> Result<()> {
    let has = |s: &str| ctx.path(eval_file(s)).is_file();
    let mut need = vec![eval_file(PARENT), eval_file(PRUNED)];
    if has(ADAPTED) && format != ReportFormat::PlotData {
        need.push(eval_file("zero_shot"));
    }
    let source = if ctx.has(ADAPTED) { ADAPTED } else { PRUNED };
    let missing: Vec<String> = need
        .iter()
        .filter(|f| !ctx.path(f).is_file())
        .map(|f| ctx.path(f).display().to_string())
        .chain((format != ReportFormat::PlotData && !ctx.has(source)).then(|| ctx.ckpt_path(source).display().to_string()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let parent: SystemEval = ctx.read_json(eval_file(PARENT))?;
    let pruned: SystemEval = ctx.read_json(eval_file(PRUNED))?;
    let adapted: Option<SystemEval> = has(ADAPTED).then(|| ctx.read_json(eval_file(ADAPTED))).transpose()?;
    let full_ft: Option<SystemEval> = has(FULL_FT).then(|| ctx.read_json(eval_file(FULL_FT))).transpose()?;
    let mut written = Vec::new();
    if format != ReportFormat::PlotData {
        let systems: Vec<SystemEval> = full_ft
            .iter()
            .chain([&parent, &pruned])
            .chain(adapted.iter())
            .cloned()
            .collect();
        let order = adapted.as_ref().map(|a| a.order.clone()).unwrap_or_default();
        ctx.write(format!("{REPORTS}/interference.tsv"), &interference_tsv(&systems, &parent, &order))?;
        let ck = ctx.load(source)?;
        let mask = ck.mask.as_ref().ok_or_else(|| Error::Contract(format!("{source} checkpoint has no mask")))?;
        let (base, ratios) = ledger(&ck)?;
        let expected = expected_shares(1.0 - base, &ratios)?;
        ctx.write(
            format!("{REPORTS}/capacity.tsv"),
            &capacity_tsv(&CapacityReport::from_mask(mask), &ck.order, &expected),
        )?;
        written.extend(["interference.tsv", "capacity.tsv"]);
        if has("zero_shot") {
            let rows: Vec<ZeroShotRow> = ctx.read_json(eval_file("zero_shot"))?;
            ctx.write(format!("{REPORTS}/zero_shot.tsv"), &zero_shot_tsv(&rows))?;
            written.push("zero_shot.tsv");
        }
    }
    if format != ReportFormat::Table {
        ctx.write(format!("{REPORTS}/plot.tsv"), &plot_tsv(&parent, &pruned, adapted.as_ref()))?;
        written.push("plot.tsv");
    }
    ctx.progress(&format!("wrote {}", written.join(", ")));
    ctx.log(json!({"event": "report", "files": written}))
}

pub fn run_all(ctx: &Context) -> Result<u8> {
    gen_data(ctx)?;
    train_mnmt(ctx)?;
    prune_base(ctx)?;
    adapt(ctx)?;
    finetune_baseline(ctx)?;
    eval(ctx, SplitArg::Test)?;
    zero_shot(ctx)?;
    let code = verify(ctx)?;
    report(ctx, ReportFormat::All)?;
    Ok(code)
}
