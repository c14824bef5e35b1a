//! Batch front door: simulate panels, estimate chains, predict shares and
//! elasticities, and run Monte Carlo studies, all driven by one JSON
//! configuration document. Every output directory gets a manifest with the
//! config hash and root seed; re-running a manifest reproduces the outputs
//! bit for bit.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use bundlechoice::config::{McStudyConfig, RunConfig};
use bundlechoice::dgp::{simulate_dataset, true_elasticities};
use bundlechoice::io;
use bundlechoice::mcmc;
use bundlechoice::model::{PanelData, SharingMap};
use bundlechoice::predict::{predict_shares, price_elasticities, ElasticityOptions, Scenario};
use bundlechoice::{Error, Result};

#[derive(Parser)]
#[command(name = "bundlechoice", version, about = "Bundle choice demand model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel dataset and its generating-truth record
    Simulate(CommonArgs),
    /// Fit a model by MCMC and store the chain and summaries
    Estimate(CommonArgs),
    /// Posterior-predictive shares and price elasticities from a chain
    Predict(CommonArgs),
    /// Simulate-estimate-score study across models and panel sizes
    McStudy(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override every seed in the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap (overrides configuration and environment)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Estimate(a) => ("estimate", a),
        Command::Predict(a) => ("predict", a),
        Command::McStudy(a) => ("mc-study", a),
    };
    let config = RunConfig::load(&args.config)?;
    let threads = resolve_threads(args.threads, config.threads);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let config_json = serde_json::to_value(&config)?;
    match name {
        "simulate" => cmd_simulate(&config, args.seed, &out_dir, &config_json, threads),
        "estimate" => cmd_estimate(&config, args.seed, &out_dir, &config_json, threads),
        "predict" => cmd_predict(&config, args.seed, &out_dir, &config_json, threads),
        _ => cmd_mc_study(&config, args.seed, &out_dir, &config_json, threads),
    }
}

fn resolve_threads(flag: Option<usize>, cfg: Option<usize>) -> usize {
    let env = std::env::var("BUNDLECHOICE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let requested = flag.or(cfg).filter(|&n| n > 0);
    match (requested, env) {
        (Some(r), Some(e)) => r.min(e),
        (Some(r), None) => r,
        (None, Some(e)) => e,
        (None, None) => 0, // rayon default: all cores
    }
}

fn finish_manifest(
    out_dir: &Path,
    mut manifest: io::RunManifest,
    outputs: &[&Path],
) -> Result<()> {
    manifest.outputs = outputs
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    io::write_manifest(&out_dir.join("manifest.json"), &manifest)
}

fn cmd_simulate(
    config: &RunConfig,
    seed: Option<u64>,
    out_dir: &Path,
    config_json: &serde_json::Value,
    threads: usize,
) -> Result<()> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'simulate' section".into()))?;
    let mut dgp = sim.dgp.clone();
    if let Some(s) = seed {
        dgp.seed = s;
    }
    let (data, truth) = simulate_dataset(&dgp)?;
    let panel_path = out_dir.join("panel.csv");
    let truth_path = out_dir.join("truth.json");
    io::write_panel_csv(&panel_path, &data)?;
    io::write_truth_json(&truth_path, &truth)?;
    let manifest = io::RunManifest::new("simulate", config_json, dgp.seed, threads);
    finish_manifest(out_dir, manifest, &[&panel_path, &truth_path])?;
    log::info!(
        "simulated {} individuals x {} periods -> {}",
        data.n_individuals(),
        data.t_max,
        panel_path.display()
    );
    Ok(())
}

fn default_sharing(data: &PanelData, endogenous: bool) -> SharingMap {
    SharingMap::unshared(
        &data.z_dims(),
        &data.w_dims(),
        &if endogenous { data.zp_dims() } else { vec![] },
    )
}

fn cmd_estimate(
    config: &RunConfig,
    seed: Option<u64>,
    out_dir: &Path,
    config_json: &serde_json::Value,
    threads: usize,
) -> Result<()> {
    let est = config
        .estimate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'estimate' section".into()))?;
    let data = io::read_panel_csv(&est.data)?;
    let mut spec = est.spec.clone();
    if let Some(s) = seed {
        spec.mcmc.seed = s;
    }
    if !spec.endogenous && data.j_p > 0 {
        log::info!(
            "data carries {} price equations and instruments; the exogenous \
             fit ignores them",
            data.j_p
        );
    }
    let chain = if let Some(prev_path) = &est.resume_from {
        let prev = io::read_chain(prev_path)?;
        if est.extra_draws == 0 {
            return Err(Error::Config(
                "resume_from requires extra_draws >= 1".into(),
            ));
        }
        mcmc::resume_chain(&data, &prev, est.extra_draws)?
    } else {
        let sharing = est
            .sharing
            .clone()
            .unwrap_or_else(|| default_sharing(&data, spec.endogenous));
        mcmc::run_chain(&data, &sharing, &spec)?
    };
    let chain_path = out_dir.join("chain.bin");
    let summary_path = out_dir.join("summary.csv");
    io::write_chain(&chain_path, &chain)?;
    io::write_summary_csv(&summary_path, &mcmc::summarize(&chain)?)?;
    let manifest = io::RunManifest::new("estimate", config_json, spec.mcmc.seed, threads);
    finish_manifest(out_dir, manifest, &[&chain_path, &summary_path])?;
    log::info!(
        "stored {} draws ({:.1}s) -> {}",
        chain.n_draws(),
        chain.meta.wall_secs,
        chain_path.display()
    );
    Ok(())
}

fn cmd_predict(
    config: &RunConfig,
    seed: Option<u64>,
    out_dir: &Path,
    config_json: &serde_json::Value,
    threads: usize,
) -> Result<()> {
    let pred = config
        .predict
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'predict' section".into()))?;
    let data = io::read_panel_csv(&pred.data)?;
    let chain = io::read_chain(&pred.chain)?;
    let hash = mcmc::spec_hash(&chain.spec, &chain.sharing, &data);
    if hash != chain.meta.spec_hash {
        return Err(Error::Config(format!(
            "chain {} was estimated on different data or spec (stored hash \
             {}.., dataset gives {}..); refusing to predict",
            pred.chain.display(),
            &chain.meta.spec_hash[..12],
            &hash[..12]
        )));
    }
    let mut settings = pred.settings.clone();
    if let Some(s) = seed {
        settings.seed = s;
    }
    let draws = chain.predict_draws(&data, settings.stride)?;
    let j = data.choice_set.n_goods();
    let mut tables = vec![(
        "baseline".to_string(),
        predict_shares(&draws, &data, &Scenario::baseline(j), settings.reps_per_draw, settings.seed)?,
    )];
    for sc in &pred.scenarios {
        let scenario = Scenario {
            label: sc.label.clone(),
            price_multipliers: sc.price_multipliers.clone(),
        };
        tables.push((
            sc.label.clone(),
            predict_shares(&draws, &data, &scenario, settings.reps_per_draw, settings.seed)?,
        ));
    }
    let shares_path = out_dir.join("shares.csv");
    io::write_shares_csv(&shares_path, &data.choice_set, &tables)?;
    let mut outputs = vec![shares_path];
    if pred.elasticities {
        let opts = ElasticityOptions {
            step: settings.step,
            common_random_numbers: settings.common_random_numbers,
            reps_per_draw: settings.reps_per_draw,
            seed: settings.seed,
        };
        let table = price_elasticities(&draws, &data, &opts)?;
        if !table.undefined.is_empty() {
            log::warn!("undefined elasticity cells: {}", table.undefined.join(", "));
        }
        let csv_path = out_dir.join("elasticities.csv");
        let json_path = out_dir.join("elasticities.json");
        io::write_elasticities_csv(&csv_path, &data.choice_set, &table)?;
        io::write_elasticities_json(&json_path, &table)?;
        outputs.push(csv_path);
        outputs.push(json_path);
    }
    let manifest = io::RunManifest::new("predict", config_json, settings.seed, threads);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish_manifest(out_dir, manifest, &refs)?;
    Ok(())
}

/// Stateless per-task seed derivation from the root seed (splitmix64), so
/// the task grid can run in any order on any thread count.
fn derive_seed(root: u64, tag: u64) -> u64 {
    let mut z = root ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct TrialScore {
    size_idx: usize,
    trial: usize,
    model_idx: usize,
    /// Squared error per (price good, target good) cell, or the failure.
    result: std::result::Result<Vec<Vec<f64>>, String>,
}

fn score_one(
    study: &McStudyConfig,
    root: u64,
    size_idx: usize,
    n: usize,
    t: usize,
    trial: usize,
    model_idx: usize,
) -> std::result::Result<Vec<Vec<f64>>, String> {
    let run = || -> Result<Vec<Vec<f64>>> {
        let mut dgp = study.dgp.clone();
        dgp.n_individuals = n;
        dgp.n_periods = t;
        dgp.seed = derive_seed(root, (size_idx as u64) << 32 | trial as u64);
        let (data, truth) = simulate_dataset(&dgp)?;
        let truth_table = true_elasticities(
            &data,
            &truth,
            study.truth_reps,
            derive_seed(dgp.seed, 1),
        )?;
        let model = &study.models[model_idx];
        let mut spec = model.spec.clone();
        spec.mcmc.seed = derive_seed(dgp.seed, 100 + model_idx as u64);
        let sharing = truth.sharing.clone();
        let chain = mcmc::run_chain(&data, &sharing, &spec)?;
        let draws = chain.predict_draws(&data, study.predict.stride)?;
        let opts = ElasticityOptions {
            step: study.predict.step,
            common_random_numbers: study.predict.common_random_numbers,
            reps_per_draw: study.predict.reps_per_draw,
            seed: derive_seed(dgp.seed, 200 + model_idx as u64),
        };
        let est = price_elasticities(&draws, &data, &opts)?;
        let j = data.choice_set.n_goods();
        let sq = (0..j)
            .map(|a| {
                (0..j)
                    .map(|b| (est.good[a][b] - truth_table.good[a][b]).powi(2))
                    .collect()
            })
            .collect();
        Ok(sq)
    };
    run().map_err(|e| e.to_string())
}

fn cmd_mc_study(
    config: &RunConfig,
    seed: Option<u64>,
    out_dir: &Path,
    config_json: &serde_json::Value,
    threads: usize,
) -> Result<()> {
    let study = config
        .mc_study
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'mc_study' section".into()))?;
    if study.n_trials == 0 || study.models.is_empty() {
        return Err(Error::Config("mc_study needs trials and models".into()));
    }
    let root = seed.unwrap_or(study.seed);
    let sizes: Vec<(usize, usize)> = if study.sizes.is_empty() {
        vec![(study.dgp.n_individuals, study.dgp.n_periods)]
    } else {
        study.sizes.clone()
    };
    let grid: Vec<(usize, usize, usize)> = (0..sizes.len())
        .flat_map(|s| {
            (0..study.n_trials).flat_map(move |tr| (0..study.models.len()).map(move |m| (s, tr, m)))
        })
        .collect();
    let scores: Vec<TrialScore> = grid
        .par_iter()
        .map(|&(s, tr, m)| TrialScore {
            size_idx: s,
            trial: tr,
            model_idx: m,
            result: score_one(study, root, s, sizes[s].0, sizes[s].1, tr, m),
        })
        .collect();

    let j = study.dgp.n_goods;
    let mut w = csv::Writer::from_path(out_dir.join("rmse.csv"))?;
    w.write_record([
        "model", "n", "t", "entry", "rmse", "mc_se", "n_trials", "n_failed",
    ])?;
    let mut any_failed = false;
    for (s, &(n, t)) in sizes.iter().enumerate() {
        for (m, model) in study.models.iter().enumerate() {
            let cell: Vec<&TrialScore> = scores
                .iter()
                .filter(|sc| sc.size_idx == s && sc.model_idx == m)
                .collect();
            let ok: Vec<&Vec<Vec<f64>>> =
                cell.iter().filter_map(|sc| sc.result.as_ref().ok()).collect();
            let n_failed = cell.len() - ok.len();
            for sc in &cell {
                if let Err(e) = &sc.result {
                    any_failed = true;
                    log::error!(
                        "trial {} model '{}' (N={n}, T={t}) failed: {e}",
                        sc.trial,
                        model.label
                    );
                }
            }
            for a in 0..j {
                for b in 0..j {
                    let sq: Vec<f64> = ok.iter().map(|g| g[a][b]).collect();
                    let (rmse, se) = if sq.is_empty() {
                        (f64::NAN, f64::NAN)
                    } else {
                        let mean = sq.iter().sum::<f64>() / sq.len() as f64;
                        let rmse = mean.sqrt();
                        let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                            / (sq.len() as f64 - 1.0).max(1.0);
                        let se = if rmse > 0.0 {
                            (var / sq.len() as f64).sqrt() / (2.0 * rmse)
                        } else {
                            0.0
                        };
                        (rmse, se)
                    };
                    w.write_record([
                        model.label.clone(),
                        n.to_string(),
                        t.to_string(),
                        format!("E{}{}", a + 1, b + 1),
                        format!("{rmse}"),
                        format!("{se}"),
                        ok.len().to_string(),
                        n_failed.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(Error::Io)?;
    let mut manifest = io::RunManifest::new("mc-study", config_json, root, threads);
    if any_failed {
        manifest.command = "mc-study (with failures)".into();
    }
    finish_manifest(out_dir, manifest, &[&out_dir.join("rmse.csv")])?;
    Ok(())
}
