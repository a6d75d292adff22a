//! `ordcrowd`: simulate question-selection policies, fit constrained
//! estimates from answer files, pick the next question, and interpolate
//! chain gaps.

mod config;
mod formats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use ordcrowd::{
    fit_mle, interpolate_mean, interpolate_variance, make_ground_truth, next_question, refit, run_experiment,
    ChainSegment, EstimatorState, Experiment, ExperimentSummary, Policy, SelectionConfig,
};

use formats::{num, nums, to_json_string, usage, Usage};

#[derive(Debug, Parser)]
#[command(name = "ordcrowd", version, about = "Crowd estimation of ordered means")]
struct Cli {
    /// Seed for every random choice; overrides `seed` in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a policy benchmark from a TOML config; writes traces and a summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit sample and constrained estimates from a `variable,value` CSV.
    Estimate {
        #[arg(long)]
        samples: PathBuf,
        /// `chain:n`, `none:n`, or a CSV of coefficient rows.
        #[arg(long)]
        constraints: String,
    },
    /// Choose the next variable to ask about.
    Next {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        constraints: String,
        /// `threshold:<tau>`, `absolute` or `squared`.
        #[arg(long)]
        loss: String,
        /// independent, constrained, round_robin, random or uniform_random.
        #[arg(long, default_value = "constrained")]
        mode: String,
    },
    /// Interpolate a model between two chain endpoints.
    Interpolate {
        /// `index,mean,variance` CSV with the two endpoint models.
        #[arg(long)]
        models: PathBuf,
        /// 1-based position strictly between the endpoints.
        #[arg(long)]
        k: usize,
        /// Endpoint draws when the endpoints are uncertain.
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 1 for failures while computing.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<ordcrowd::Error>() {
        Some(
            ordcrowd::Error::InvalidArgument(_)
            | ordcrowd::Error::EmptySamples
            | ordcrowd::Error::EmptyState
            | ordcrowd::Error::UnsupportedConstraints,
        ) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config } => simulate(&config, seed),
        Command::Estimate { samples, constraints } => {
            let state = load_state(&samples, &constraints)?;
            print!("{}", to_json_string(estimate(&state)?));
            Ok(())
        }
        Command::Next {
            samples,
            constraints,
            loss,
            mode,
        } => {
            let state = load_state(&samples, &constraints)?;
            let loss = formats::parse_loss(&loss)?;
            let policy: Policy = mode.parse().map_err(|e: ordcrowd::Error| usage!("--mode: {e}"))?;
            let cfg = SelectionConfig {
                seed: seed.unwrap_or(0),
                ..SelectionConfig::new(policy)
            };
            let specs = vec![loss; state.n_vars()];
            let choice = next_question(&state, &specs, &cfg)?;
            let out = json!({
                "mode": policy.name(),
                "variable": choice.variable + 1,
                "scores": nums(&choice.scores),
            });
            print!("{}", to_json_string(out));
            Ok(())
        }
        Command::Interpolate { models, k, draws } => {
            let [(left, lm), (right, rm)] = formats::read_endpoint_models(&models)?;
            if draws == 0 {
                return Err(usage!("--draws must be >= 1"));
            }
            let seg = ChainSegment::new(left, right, lm, rm, k)?;
            let variance = interpolate_variance(&seg, draws, seed.unwrap_or(0))?;
            let out = json!({
                "k": k,
                "left": left,
                "right": right,
                "mean": num(interpolate_mean(&seg)),
                "variance": num(variance),
            });
            print!("{}", to_json_string(out));
            Ok(())
        }
    }
}

fn load_state(samples: &Path, constraints: &str) -> Result<EstimatorState> {
    let constraints = formats::parse_constraints(constraints)?;
    let samples = formats::read_samples(samples, constraints.n_vars())?;
    Ok(EstimatorState::from_samples(constraints, samples)?)
}

fn estimate(state: &EstimatorState) -> Result<Value> {
    if state.total_samples() == 0 {
        return Err(usage!("the samples file holds no answers"));
    }
    let fitted = refit(state)?;
    let means = fitted.constrained_means().context("refit produced no means")?;
    let variances = fitted.reestimated_variances().context("refit produced no variances")?;
    let rows: Vec<Value> = state
        .variables()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let sample = fit_mle(v.samples()).ok();
            json!({
                "variable": i + 1,
                "count": v.len(),
                "sample_mean": sample.map(|p| num(p.mean)),
                "sample_variance": sample.map(|p| num(p.variance)),
                "constrained_mean": num(means[i]),
                "reestimated_variance": variances[i].map(num),
            })
        })
        .collect();
    Ok(json!({ "variables": rows }))
}

fn simulate(config_path: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = config::load(config_path, seed)?;
    let raw = &cfg.raw;
    let truth = make_ground_truth(&cfg.truth, raw.n_vars, raw.worker_sd, &cfg.constraints, raw.seed)
        .map_err(|e| usage!("{}: {e}", config_path.display()))?;
    let exp = Experiment {
        truth: truth.clone(),
        constraints: cfg.constraints.clone(),
        specs: vec![cfg.loss; raw.n_vars],
        policies: cfg.policies.clone(),
        budget: raw.budget,
        replicates: raw.replicates,
        seed: raw.seed,
        crowd: cfg.crowd,
    };
    let summary = run_experiment(&exp)?;

    for p in &summary.policies {
        let path = trace_path(&cfg.trace, p.config.policy, summary.policies.len());
        formats::write_trace(&path, &p.first_trace)?;
    }
    let out = summary_json(raw, truth.means(), &summary)?;
    formats::write_text(&cfg.summary, &to_json_string(out))?;
    Ok(())
}

/// One policy writes to `path`; several write `stem.<policy>.ext` side by side.
fn trace_path(path: &Path, policy: Policy, policies: usize) -> PathBuf {
    if policies == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{policy}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{policy}"),
    };
    path.with_file_name(name)
}

fn summary_json(raw: &config::ExperimentConfig, truth: &[f64], s: &ExperimentSummary) -> Result<Value> {
    let budget = raw.budget;
    let mut policies = Map::new();
    for p in &s.policies {
        let finals = p.final_losses();
        let reached = p.first_zero_steps.iter().filter(|z| z.is_some()).count();
        policies.insert(
            p.config.policy.name().to_string(),
            json!({
                "mean_loss": nums(&p.mean_loss),
                "std_error": nums(&p.std_error),
                "final_mean_loss": num(p.mean_final_loss()),
                "final_std_error": num(*p.std_error.last().unwrap_or(&0.0)),
                "final_losses": nums(&finals),
                "mean_first_zero_step": num(p.mean_first_zero_step(budget)),
                "replicates_reaching_zero": reached,
            }),
        );
    }
    // paired comparison of final losses: `wins` counts replicates where the
    // first policy ended strictly lower
    let mut tests = Map::new();
    for a in &s.policies {
        for b in &s.policies {
            if a.config.policy == b.config.policy {
                continue;
            }
            let (fa, fb) = (a.final_losses(), b.final_losses());
            let wins = fa.iter().zip(&fb).filter(|(x, y)| x < y).count();
            let losses = fa.iter().zip(&fb).filter(|(x, y)| x > y).count();
            tests.insert(
                format!("{}_vs_{}", a.config.policy, b.config.policy),
                json!({
                    "wins": wins,
                    "losses": losses,
                    "ties": fa.len() - wins - losses,
                    "p_value": num(ordcrowd::sim::sign_test_p_value(wins, losses)),
                }),
            );
        }
    }
    Ok(json!({
        "config": serde_json::to_value(raw)?,
        "truth_means": nums(truth),
        "policies": policies,
        "sign_tests": tests,
    }))
}
