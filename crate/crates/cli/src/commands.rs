//! The three harness commands: train, eval, ablate.

use crate::config::RunConfig;
use crate::metrics::{write_metrics_line, write_timing_line};
use anyhow::{bail, Context, Result};
use sdhn_core::envs::{evaluate_traced, EvalReport};
use sdhn_core::marl::{train, TrainError};
use sdhn_core::nets::{
    actor_forward, init_params, read_checkpoint, write_checkpoint, InitScheme, ParamSet,
};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Updates between periodic checkpoints.
const PERIODIC_CHECKPOINT: u64 = 500;

pub const ABLATION_VARIANTS: [&str; 3] = ["no-skew", "det-edges", "plain-mappo"];

fn save_params(path: &Path, digest: &str, params: &ParamSet) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create checkpoint {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, digest, params)
        .with_context(|| format!("cannot write checkpoint {}", path.display()))?;
    w.flush()?;
    Ok(())
}

/// Train a run into `out_dir`: resolved config snapshot, metrics stream,
/// timing sidecar, and initial / periodic / latest / final checkpoints.
pub fn cmd_train(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    run_training(&cfg, out_dir)
}

/// Train from an already-resolved configuration.
pub fn run_training(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    std::fs::write(out_dir.join("config.resolved"), cfg.serialize())?;
    let digest = cfg.digest();

    let net_cfg = cfg.net_config()?;
    let init = init_params(&net_cfg, cfg.seed, InitScheme::XavierUniform);
    save_params(&out_dir.join("checkpoint_init.sdhn"), &digest, &init)?;

    let metrics_file = File::create(out_dir.join("metrics.jsonl"))?;
    let mut metrics = BufWriter::new(metrics_file);
    let timing_file = File::create(out_dir.join("timing.jsonl"))?;
    let mut timing = BufWriter::new(timing_file);

    let train_cfg = cfg.to_train_config();
    let latest_path = out_dir.join("checkpoint_latest.sdhn");
    let outcome = train(&train_cfg, || cfg.build_env().expect("validated env config"), |record, params| {
        write_metrics_line(&mut metrics, record)?;
        write_timing_line(&mut timing, record.update, record.wall_clock_s)?;
        save_params(&latest_path, &digest, params)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        if record.update % PERIODIC_CHECKPOINT == 0 {
            let name = format!("checkpoint_u{:06}.sdhn", record.update);
            save_params(&out_dir.join(name), &digest, params)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        Ok(())
    });
    metrics.flush()?;
    timing.flush()?;

    match outcome {
        Ok(outcome) => {
            if outcome.updates > 0 {
                save_params(&out_dir.join("checkpoint_final.sdhn"), &digest, &outcome.params)?;
            }
            println!(
                "trained {} updates ({} env steps) into {}",
                outcome.updates,
                outcome.env_steps,
                out_dir.display()
            );
            Ok(())
        }
        Err(err @ TrainError::Diverged { .. }) => {
            bail!("{err}; last-good checkpoint retained at {}", latest_path.display());
        }
        Err(err) => Err(err.into()),
    }
}

/// Greedy-argmax policy over the actor head of a parameter set.
pub fn greedy_policy(params: &ParamSet) -> impl FnMut(usize, &[f64]) -> usize + '_ {
    move |_agent, obs| {
        let probs = actor_forward(params, obs).expect("actor forward");
        probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(i, _)| i)
            .expect("non-empty action set")
    }
}

/// Load a checkpoint against a config, verifying the digest stamp.
pub fn load_params(checkpoint: &Path, cfg: &RunConfig) -> Result<ParamSet> {
    let file = File::open(checkpoint)
        .with_context(|| format!("cannot open checkpoint {}", checkpoint.display()))?;
    let (found, saved) = read_checkpoint(file)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let expected = cfg.digest();
    if found != expected {
        bail!(
            "checkpoint digest {found} does not match config digest {expected}; \
             the checkpoint was written under a different configuration"
        );
    }
    let mut params = init_params(&cfg.net_config()?, 0, InitScheme::XavierUniform);
    params.load_values(&saved)?;
    Ok(params)
}

/// Evaluate a checkpoint greedily over seeded episodes; prints the report,
/// writes `eval_report.json` beside the checkpoint, and optionally dumps a
/// per-step trace.
pub fn cmd_eval(
    checkpoint: &Path,
    config_path: &Path,
    episodes: usize,
    seed: u64,
    trace_path: Option<&Path>,
) -> Result<EvalReport> {
    let cfg = RunConfig::load(config_path)?;
    let params = load_params(checkpoint, &cfg)?;
    let mut env = cfg.build_env()?;

    let mut trace_writer = match trace_path {
        Some(path) => Some(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create trace {}", path.display()))?,
        )),
        None => None,
    };
    let mut policy = greedy_policy(&params);
    let report = evaluate_traced(env.as_mut(), episodes, seed, &mut policy, &mut |step| {
        if let Some(w) = trace_writer.as_mut() {
            let positions: Vec<Vec<i32>> = step.positions.iter().map(|p| vec![p.0, p.1]).collect();
            let line = serde_json::json!({
                "episode": step.episode,
                "step": step.step,
                "positions": positions,
                "actions": step.actions,
                "reward": step.reward,
                "collisions": step.collisions,
                "deliveries": step.deliveries,
                "completed": step.completed,
            });
            let _ = writeln!(w, "{line}");
        }
    })?;
    if let Some(mut w) = trace_writer {
        w.flush()?;
    }

    let summary = serde_json::json!({
        "mean_return": report.mean_return,
        "mean_makespan": report.mean_makespan,
        "completion_rate": report.completion_rate,
        "episodes": episodes,
        "seed": seed,
    });
    println!("{summary}");
    let report_path = checkpoint
        .parent()
        .map(|d| d.join("eval_report.json"))
        .unwrap_or_else(|| PathBuf::from("eval_report.json"));
    std::fs::write(&report_path, format!("{summary}\n"))?;
    Ok(report)
}

/// Apply one named ablation to a base configuration.
pub fn apply_variant(base: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match variant {
        "no-skew" => cfg.skewness_loss_on = false,
        "det-edges" => cfg.stochastic_edges_on = false,
        "plain-mappo" => cfg.plain_mappo = true,
        other => bail!(
            "unknown ablation variant `{other}`; valid names: {}",
            ABLATION_VARIANTS.join(", ")
        ),
    }
    Ok(cfg)
}

/// Run the base configuration plus each requested variant with shared
/// seeds, into sibling subdirectories of `out_dir`.
pub fn cmd_ablate(config_path: &Path, out_dir: &Path, variants: &[String]) -> Result<()> {
    let base = RunConfig::load(config_path)?;
    // validate all names before spending any compute
    let derived: Vec<(String, RunConfig)> = variants
        .iter()
        .map(|v| apply_variant(&base, v).map(|cfg| (v.clone(), cfg)))
        .collect::<Result<_>>()?;

    run_training(&base, &out_dir.join("base"))?;
    for (name, cfg) in derived {
        run_training(&cfg, &out_dir.join(name))?;
    }
    Ok(())
}
