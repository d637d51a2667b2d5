use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use amlp::diagnostics::{entropy_report, JointDist};
use amlp::metrics::write_metrics_csv;
use amlp::model::{grad_check as run_grad_check, Checkpoint};
use amlp::numerics::Rng;
use amlp::synthdata::{make_dataset, Dataset};
use amlp::trainer::{
    ablate_masking, evaluate, finetune as run_finetune, initial_model, steps_jsonl, FinetunedModel, Pretrainer,
};
use amlp::Error;
use serde::Deserialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::Failure;

type CmdResult = Result<(), Failure>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn run_dir(cfg: &RunConfig, out: &Path) -> Result<PathBuf, Failure> {
    let dir = out.join(cfg.run_dir_name());
    fs::create_dir_all(&dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    write(&dir.join("config.json"), pretty(&cfg.echo()))?;
    Ok(dir)
}

fn load_data(cfg: &RunConfig, data: &Path) -> Result<Dataset, Failure> {
    let ds = Dataset::load(data).map_err(|e| Failure::io(format!("{}: {e}", data.display())))?;
    if ds.config != cfg.synth() {
        return Err(Failure::config(format!("{} was generated with a different image configuration", data.display())));
    }
    Ok(ds)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.exists() {
        return Err(Failure::io(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

pub fn gen_data(config: &Option<PathBuf>, out: &Path) -> CmdResult {
    let cfg = RunConfig::load(config.as_deref())?;
    let ds = make_dataset(&Rng::new(cfg.seed), cfg.n_samples, cfg.label_fraction, &cfg.synth())?;
    ds.export(out)?;
    write(&out.join("config.json"), pretty(&cfg.echo()))?;
    println!("{}", out.display());
    Ok(())
}

pub fn pretrain(
    config: &Option<PathBuf>,
    out: &Path,
    data: &Path,
    resume: bool,
    checkpoint_every: usize,
    stop_after: Option<usize>,
    workers: Option<usize>,
) -> CmdResult {
    let cfg = RunConfig::load(config.as_deref())?;
    let ds = load_data(&cfg, data)?;
    let dir = run_dir(&cfg, out)?;
    let ckpt_path = dir.join("pretrain.ckpt");
    let steps_path = dir.join("steps.jsonl");
    let exp = cfg.experiment();

    let mut trainer = if resume && ckpt_path.exists() {
        let ck = load_checkpoint(&ckpt_path)?;
        Pretrainer::<f64>::from_checkpoint(&ck, &ds)?
    } else {
        write(&steps_path, "")?;
        Pretrainer::new(&ds, initial_model(&ds, &exp.model, cfg.seed)?, exp.pretrain)?
    };
    trainer.set_workers(workers)?;

    let save = |trainer: &mut Pretrainer<f64>| -> CmdResult {
        let mut ck = trainer.to_checkpoint()?;
        ck.set_meta("config", cfg.echo());
        ck.save(&ckpt_path)?;
        let mut log = fs::OpenOptions::new().append(true).create(true).open(&steps_path)?;
        log.write_all(steps_jsonl(&trainer.drain_steps()).as_bytes())?;
        Ok(())
    };
    let last = stop_after.unwrap_or(exp.pretrain.epochs).min(exp.pretrain.epochs);
    let start = std::time::Instant::now();
    while trainer.epochs_done() < last {
        match trainer.run_epoch() {
            Ok(_) => {}
            Err(Error::Numerical(msg)) => {
                let dump = json!({ "error": msg, "epoch": trainer.epochs_done() + 1, "traces": trainer.traces() });
                write(&dir.join("diagnostic.json"), pretty(&dump))?;
                return Err(Failure::numerical(msg));
            }
            Err(e) => return Err(e.into()),
        }
        if checkpoint_every > 0 && trainer.epochs_done() % checkpoint_every == 0 {
            save(&mut trainer)?;
        }
    }
    save(&mut trainer)?;
    let mut report = trainer.report();
    report.config = cfg.echo();
    write(&dir.join("pretrain_report.json"), report.to_json() + "\n")?;
    write(&dir.join("pretrain.csv"), report.pretrain_csv())?;
    eprintln!("pretrain: {} epochs, wall clock {:.1}s", trainer.epochs_done(), start.elapsed().as_secs_f64());
    println!("{}", dir.display());
    Ok(())
}

pub fn finetune(
    config: &Option<PathBuf>,
    out: &Path,
    data: &Path,
    checkpoint: Option<PathBuf>,
    no_pretrain: bool,
) -> CmdResult {
    let cfg = RunConfig::load(config.as_deref())?;
    let ds = load_data(&cfg, data)?;
    let dir = run_dir(&cfg, out)?;
    let exp = cfg.experiment();
    let model: amlp::model::MlpAutoencoder<f64> = if no_pretrain {
        initial_model(&ds, &exp.model, cfg.seed)?
    } else {
        let path = checkpoint.unwrap_or_else(|| dir.join("pretrain.ckpt"));
        load_checkpoint(&path)?.model()?
    };
    let (tuned, mut report, steps) = run_finetune(model, &ds, &ds.labeled, &exp.finetune)?;
    report.config = cfg.echo();
    tuned.to_checkpoint(json!({ "config": cfg.echo(), "pretrained": !no_pretrain }))?.save(dir.join("finetuned.ckpt"))?;
    write(&dir.join("finetune_report.json"), report.to_json() + "\n")?;
    write(&dir.join("finetune.csv"), report.finetune_csv())?;
    write(&dir.join("finetune_steps.jsonl"), steps_jsonl(&steps))?;
    println!("{}", dir.display());
    Ok(())
}

pub fn eval(config: &Option<PathBuf>, out: &Path, data: &Path, checkpoint: Option<PathBuf>) -> CmdResult {
    let cfg = RunConfig::load(config.as_deref())?;
    let path = match checkpoint {
        Some(p) => p,
        None => out.join(cfg.run_dir_name()).join("finetuned.ckpt"),
    };
    let tuned = FinetunedModel::<f64>::from_checkpoint(&load_checkpoint(&path)?)?;
    let ds = load_data(&cfg, data)?;
    let dir = run_dir(&cfg, out)?;
    let exp = cfg.experiment();
    let table = evaluate(&tuned, &ds, &ds.test, exp.finetune.threshold, exp.eval_target, &exp.metrics)?;
    write_metrics_csv(dir.join("metrics.csv"), &table.rows)?;
    write(&dir.join("eval.json"), pretty(&json!({ "config": cfg.echo(), "means": table.means, "rows": table.rows })))?;
    println!("{}", serde_json::to_string(&table.means).expect("serializable"));
    Ok(())
}

pub fn ablate(config: &Option<PathBuf>, out: &Path, data: &Path, workers: Option<usize>) -> CmdResult {
    let cfg = RunConfig::load(config.as_deref())?;
    let ds = load_data(&cfg, data)?;
    let dir = run_dir(&cfg, out)?;
    let table = ablate_masking::<f64>(&ds, &cfg.experiment(), &cfg.ablation_seeds, workers)?;
    write(&dir.join("ablation.json"), pretty(&json!({ "config": cfg.echo(), "table": table })))?;
    write(&dir.join("ablation.csv"), table.to_csv())?;
    write(&dir.join("ablation.md"), table.to_markdown())?;
    print!("{}", table.to_markdown());
    Ok(())
}

pub fn grad_check(seed: u64, models: usize, tolerance: f64) -> CmdResult {
    let report = run_grad_check(seed, models)?;
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    println!("max relative error {:.3e} (tolerance {tolerance:e})", report.max_rel_error);
    if !(report.max_rel_error < tolerance) {
        return Err(Failure::validation(format!(
            "max relative error {:e} at {} exceeds {tolerance:e}",
            report.max_rel_error, report.worst_parameter
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistFile {
    p: JointDist,
    q: Option<JointDist>,
    p_hat: Option<JointDist>,
}

pub fn entropy(dist: &str) -> CmdResult {
    let text = if Path::new(dist).is_file() {
        fs::read_to_string(dist).map_err(|e| Failure::io(format!("{dist}: {e}")))?
    } else {
        dist.to_string()
    };
    let file: DistFile = serde_json::from_str(&text).map_err(|e| Failure::config(format!("distribution: {e}")))?;
    let q = file.q.unwrap_or_else(|| file.p.clone());
    let p_hat = file.p_hat.unwrap_or_else(|| file.p.clone());
    let r = entropy_report(&file.p, &q, &p_hat).map_err(|e| Failure::config(e.to_string()))?;
    println!("H1 = {:.4}", r.h1);
    println!("H2 = {:.4}", r.h2);
    println!("H3 = {:.4}", r.h3);
    println!("H2 <= H1: {}", r.h2_le_h1);
    println!("H3 <= H2: {} (depends on p_hat; not guaranteed)", r.h3_le_h2);
    println!("{}", serde_json::to_string(&r).expect("serializable"));
    Ok(())
}
