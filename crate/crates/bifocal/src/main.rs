//! Experiment driver. Every subcommand reads one structured config file,
//! prints a human summary to stdout, and optionally writes a
//! machine-readable artifact (with the effective config embedded) to --out.
//!
//! Exit codes: 0 success, 1 validation/config error, 2 numerical-check
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use bifocal::checkpoint;
use bifocal::config::ExperimentConfig;
use bifocal::costing::{
    cost_report, paper_baseline, paper_baseline_small, paper_bifocal, paper_bifocal_no_proj,
    paper_bifocal_schedule, paper_trifocal, paper_trifocal_schedule, per_frame_costs,
    utterance_cost, CostReport, EncoderDesc,
};
use bifocal::error::{Error, Result};
use bifocal::gradcheck;
use bifocal::schedule::ScheduleSpec;
use bifocal::stream_sim::{simulate, sweep, StreamScenario, SweepModel};
use bifocal::train::{evaluate, prepare, train, EvalReport};
use bifocal::transducer::DecodeLimits;

#[derive(Parser)]
#[command(name = "bifocal", version, about = "Switching-encoder transducer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Structured config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override training.seed (model init and batch order).
    #[arg(long)]
    seed: Option<u64>,
    /// Force single-threaded, strictly sequential execution.
    #[arg(long)]
    deterministic: bool,
    /// Write the machine-readable report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the config's train split and optionally save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Where to write the trained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Decode a corpus split with greedy and beam search.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model to evaluate; a fresh initialization is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which split to decode.
        #[arg(long, value_parser = ["train", "test"], default_value = "test")]
        split: String,
    },
    /// Parameter and FLOPs report for the configured model (or the
    /// published-scale presets).
    Flops {
        #[command(flatten)]
        common: Common,
        /// Use the published-scale presets regardless of the config.
        #[arg(long)]
        paper_dims: bool,
    },
    /// Streaming catch-up latency trace and rate sweep.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use the published-scale presets regardless of the config.
        #[arg(long)]
        paper_dims: bool,
        /// Override simulation.device_rate; accepts `inf`.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = gradcheck::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.training.seed = seed;
    }
    if common.deterministic {
        config.training.parallel = false;
    }
    Ok(config)
}

fn write_artifact(common: &Common, config: &ExperimentConfig, key: &str, payload: impl Serialize) -> Result<()> {
    if let Some(path) = &common.out {
        let artifact = json!({ "config": config, key: payload });
        std::fs::write(path, serde_json::to_string_pretty(&artifact)?)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(common: &Common, checkpoint_path: Option<&PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    config.ensure_trainable()?;
    let corpus = config.load_corpus()?;
    let (train_split, _) = config.split_corpus(&corpus);
    let items = prepare::<f32>(train_split, &config.schedule)?;
    let mut model = config.build_model::<f32>(config.training.seed)?;
    println!(
        "training {} params on {} utterances for {} steps",
        model.num_params(),
        items.len(),
        config.training.steps
    );
    let report = train(&mut model, &items, &config.training)?;
    if !report.final_loss.is_finite() {
        return Err(Error::Checkpoint("training diverged to a non-finite loss".into()));
    }
    println!(
        "train loss {:.4} -> {:.4} ({:.1}% reduction)",
        report.initial_loss,
        report.final_loss,
        report.reduction() * 100.0
    );
    if let Some(path) = checkpoint_path {
        checkpoint::save(path, &config, &model)?;
        println!("checkpoint {}", path.display());
    }
    write_artifact(common, &config, "train", &report)?;
    Ok(())
}

fn print_eval(name: &str, report: &EvalReport) {
    println!(
        "{name}: token error rate {:.4}, exact match {:.3} ({}/{}), mean loss {:.4}",
        report.token_error_rate,
        report.exact_match_rate,
        report.exact_matches,
        report.utterances,
        report.mean_loss
    );
}

fn cmd_eval(common: &Common, checkpoint_path: Option<&PathBuf>, split: &str) -> Result<()> {
    let (config, model) = match checkpoint_path {
        Some(path) => {
            let ckpt = checkpoint::load::<f32>(path)?;
            let mut config = ckpt.config;
            if let Some(cli_config) = &common.config {
                let requested = ExperimentConfig::from_path(cli_config)?;
                if requested.model != config.model {
                    return Err(Error::Checkpoint(format!(
                        "{}: checkpoint model section differs from --config",
                        path.display()
                    )));
                }
                config = requested;
            }
            if let Some(seed) = common.seed {
                config.training.seed = seed;
            }
            if common.deterministic {
                config.training.parallel = false;
            }
            (config, ckpt.model)
        }
        None => {
            let config = load_config(common)?;
            config.ensure_trainable()?;
            let model = config.build_model::<f32>(config.training.seed)?;
            (config, model)
        }
    };
    let corpus = config.load_corpus()?;
    let (train_split, test_split) = config.split_corpus(&corpus);
    let chosen = if split == "train" { train_split } else { test_split };
    if chosen.is_empty() {
        return Err(Error::config(
            if split == "train" { "data.train_utterances" } else { "data.test_utterances" },
            "selected split is empty",
        ));
    }
    let items = prepare::<f32>(chosen, &config.schedule)?;
    let limits = DecodeLimits::default();
    let greedy = evaluate(&model, &items, 1, limits, config.training.parallel)?;
    print_eval("greedy", &greedy);
    let beam = evaluate(&model, &items, config.training.beam_size, limits, config.training.parallel)?;
    print_eval(&format!("beam[{}]", config.training.beam_size), &beam);
    write_artifact(common, &config, "eval", json!({ "greedy": greedy, "beam": beam }))?;
    Ok(())
}

fn print_cost_report(r: &CostReport) {
    println!(
        "{:<16} params {:>12}  flops/utt {:>16}{}",
        r.model,
        r.params.total,
        r.utterance.total_flops,
        match r.reduction {
            Some(red) => format!("  reduction {:.1}%", red * 100.0),
            None => String::new(),
        }
    );
}

/// Paper-scale reports: published baselines, the switching models, and the
/// three interleaving patterns, all against the all-large baseline.
fn paper_flops_reports(config: &ExperimentConfig) -> Result<Vec<CostReport>> {
    let conv = &config.costing;
    let frames = config.simulation.frames;
    let all_large = ScheduleSpec::constant(0).build_z(frames)?;
    let base = utterance_cost(&paper_baseline(), &all_large, conv)?.total_flops;
    let baseline = Some(("baseline", base));

    let mut reports = vec![cost_report(&paper_baseline(), &all_large, conv, None)?];
    reports.push(cost_report(&paper_baseline_small(), &all_large, conv, baseline)?);
    let z = paper_bifocal_schedule().build_z(frames)?;
    reports.push(cost_report(&paper_bifocal(), &z, conv, baseline)?);
    reports.push(cost_report(&paper_bifocal_no_proj(), &z, conv, baseline)?);
    for pattern in ["A", "B", "C"] {
        let z = paper_trifocal_schedule(pattern)?.build_z(frames)?;
        let mut r = cost_report(&paper_trifocal(), &z, conv, baseline)?;
        r.model = format!("trifocal_{pattern}");
        reports.push(r);
    }
    Ok(reports)
}

fn toy_desc(config: &ExperimentConfig) -> Result<EncoderDesc> {
    let model = config.build_model::<f32>(config.training.seed)?;
    Ok(EncoderDesc::from_params("configured", &model.encoder))
}

fn cmd_flops(common: &Common, paper: bool) -> Result<()> {
    let mut config = load_config(common)?;
    config.paper_dims |= paper;
    let reports = if config.paper_dims {
        paper_flops_reports(&config)?
    } else {
        let desc = toy_desc(&config)?;
        let z = config
            .schedule
            .with_ww(config.simulation.ww_frame_index)
            .build_z(config.simulation.frames)?;
        let baseline = if desc.num_branches() > 1 {
            let largest = desc
                .branch_dims
                .iter()
                .enumerate()
                .max_by_key(|(_, &d)| d)
                .map(|(b, _)| b)
                .unwrap_or(0);
            let all_big = ScheduleSpec::constant(largest).build_z(config.simulation.frames)?;
            Some(utterance_cost(&desc, &all_big, &config.costing)?.total_flops)
        } else {
            None
        };
        vec![cost_report(&desc, &z, &config.costing, baseline.map(|b| ("all-large", b)))?]
    };
    println!("convention: {}", reports[0].convention);
    for a in &reports[0].assumptions {
        println!("assumes: {a}");
    }
    for r in &reports {
        print_cost_report(r);
    }
    write_artifact(common, &config, "flops", &reports)?;
    Ok(())
}

fn cmd_simulate(common: &Common, paper: bool, rate: Option<f64>) -> Result<()> {
    let mut config = load_config(common)?;
    config.paper_dims |= paper;
    if let Some(r) = rate {
        config.simulation.device_rate = r;
    }
    let scenario = config.simulation.scenario();
    let frames = scenario.frames;

    let models: Vec<SweepModel> = if config.paper_dims {
        let all_large = ScheduleSpec::constant(0).build_z(frames)?;
        let z = paper_bifocal_schedule().build_z(frames)?;
        vec![
            SweepModel {
                name: "baseline".into(),
                per_frame_flops: per_frame_costs(&paper_baseline(), &all_large, &config.costing)?,
            },
            SweepModel {
                name: "bifocal".into(),
                per_frame_flops: per_frame_costs(&paper_bifocal(), &z, &config.costing)?,
            },
        ]
    } else {
        let desc = toy_desc(&config)?;
        let z = config
            .schedule
            .with_ww(scenario.ww_frame_index)
            .build_z(frames)?;
        vec![SweepModel {
            name: "configured".into(),
            per_frame_flops: per_frame_costs(&desc, &z, &config.costing)?,
        }]
    };

    let mut traces = Vec::new();
    for m in &models {
        let trace = simulate(&scenario, &m.per_frame_flops)?;
        println!(
            "{:<10} rate {:>12.3e}: final lag {:.3}s, max backlog {}, caught up {}",
            m.name,
            scenario.device_rate,
            trace.final_lag_s,
            trace.max_backlog,
            match trace.caught_up_frame {
                Some(i) => format!("at frame {i}"),
                None => "never".into(),
            }
        );
        traces.push((m.name.clone(), trace));
    }

    let sweep_report = if config.simulation.sweep_rates.is_empty() {
        None
    } else {
        let template = StreamScenario { device_rate: 1.0, ..scenario };
        let report = sweep(&template, &config.simulation.sweep_rates, &models)?;
        for cell in &report.cells {
            println!(
                "sweep {:<10} rate {:>12.3e}: caught up {}",
                cell.model,
                cell.device_rate,
                match cell.caught_up_frame {
                    Some(i) => format!("at frame {i}"),
                    None => "never".into(),
                }
            );
        }
        Some(report)
    };

    let traces_json: serde_json::Map<String, serde_json::Value> = traces
        .iter()
        .map(|(name, t)| (name.clone(), serde_json::to_value(t).unwrap_or_default()))
        .collect();
    write_artifact(
        common,
        &config,
        "simulate",
        json!({ "traces": traces_json, "sweep": sweep_report }),
    )?;
    Ok(())
}

/// Ok(true) = all gradients within tolerance.
fn cmd_gradcheck(common: &Common, trials: usize, epsilon: f64, tolerance: f64) -> Result<bool> {
    let config = load_config(common)?;
    let report = gradcheck::run(trials, epsilon, tolerance)?;
    println!("epsilon {:.1e}, tolerance {:.1e}, {} trials per component", epsilon, tolerance, trials);
    for c in &report.components {
        println!(
            "{:<16} {} ({} gradients, max rel err {:.3e})",
            c.name,
            if c.passed { "ok" } else { "FAIL" },
            c.params_checked,
            c.max_rel_error
        );
    }
    println!("max rel error {:.3e}", report.max_rel_error());
    write_artifact(common, &config, "gradcheck", &report)?;
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Train { common, checkpoint } => {
            cmd_train(common, checkpoint.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { common, checkpoint, split } => {
            cmd_eval(common, checkpoint.as_ref(), split)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Flops { common, paper_dims } => {
            cmd_flops(common, *paper_dims)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { common, paper_dims, rate } => {
            cmd_simulate(common, *paper_dims, *rate)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { common, trials, epsilon, tolerance } => {
            if cmd_gradcheck(common, *trials, *epsilon, *tolerance)? {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("gradient check failed");
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
