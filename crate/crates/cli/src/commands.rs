use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::info;
use relshift::model::PathFitter;
use relshift::simulate::{calibrate_sigma, Noise, Scenario};
use relshift::theorycheck::{theorem1_check, BoundConfig, BoundReport};
use relshift::tuning::{cross_validate, lambda_grid_for, CvPlan, CvReport};
use relshift::{par, Error, FitConfig, FitResult, PenaltyKind, PenaltySpec};
use serde::Serialize;

use crate::config::{CvConfig, CvSettings, LambdaArg, RunConfig};
use crate::data::{self, InputPaths, Inputs};
use crate::report;
use crate::{BoundsArgs, Cli, Command, DataArgs, ModelArgs, SimulateArgs};

/// Reference sample size for converting an SNR into a noise level.
const SIGMA_CALIBRATION_SAMPLES: usize = 100_000;

pub fn run(cli: Cli) -> Result<()> {
    let file = RunConfig::load(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(file.threads) {
        if threads == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Fit(args) => {
            let lambda = args.lambda.or(file.lambda).unwrap_or(LambdaArg::Auto);
            fit_command(&args.data, &args.model, lambda, &file, seed)
        }
        Command::Cv(args) => fit_command(&args.data, &args.model, LambdaArg::Auto, &file, seed),
        Command::Simulate(args) => simulate_command(&args, seed.unwrap_or(0), out_dir(args.out.as_ref(), &file)?),
        Command::CheckBounds(args) => {
            let fit = file.fit_config();
            bounds_command(&args, seed.unwrap_or(0), fit, out_dir(args.out.as_ref(), &file)?)
        }
    }
}

fn required<'a>(flag: Option<&'a PathBuf>, file: Option<&'a PathBuf>, name: &str) -> Result<&'a Path> {
    flag.or(file)
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::Argument(format!("missing --{name} (flag or config paths.{name})")).into())
}

fn out_dir(flag: Option<&PathBuf>, file: &RunConfig) -> Result<PathBuf> {
    let dir = required(flag, file.paths.out.as_ref(), "out")?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct CvOutput<'a> {
    penalty: PenaltyKind,
    settings: CvSettings,
    #[serde(flatten)]
    report: &'a CvReport,
    fold_mspe: &'a [Vec<f64>],
}

fn fit_command(data_args: &DataArgs, model: &ModelArgs, lambda: LambdaArg, file: &RunConfig, seed: Option<u64>) -> Result<()> {
    let paths = &file.paths;
    let inputs_paths = InputPaths {
        x: required(data_args.x.as_ref(), paths.x.as_ref(), "x")?,
        y: required(data_args.y.as_ref(), paths.y.as_ref(), "y")?,
        covariates: data_args.covariates.as_ref().or(paths.covariates.as_ref()).map(PathBuf::as_path),
        tree: data_args.tree.as_ref().or(paths.tree.as_ref()).map(PathBuf::as_path),
    };
    let out = out_dir(data_args.out.as_ref(), file)?;
    let kind = model
        .penalty
        .or(file.penalty)
        .ok_or_else(|| Error::Argument("missing --penalty (es, l1, cl2 or dl2)".into()))?;
    let Inputs { x, c, y, tree, notes } = data::load(&inputs_paths)?;
    for note in &notes {
        println!("note: {note}");
    }
    let spec = PenaltySpec::new(kind, x.n_taxa(), tree)?;
    let fit_cfg = file.fit_config();
    let flags = CvConfig {
        k: model.k,
        n_lambda: model.n_lambda,
        ratio: model.ratio,
        seed: None,
        one_se: model.one_se.then_some(true),
    };
    let settings = CvSettings::merge(&flags, &file.cv, seed);
    info!("{} samples, {} taxa, penalty {kind}", x.n_samples(), x.n_taxa());

    let fit: FitResult = match lambda {
        LambdaArg::Value(l) => PathFitter::new(&x, &c, &y, &spec, &fit_cfg)?.fit(l, None)?,
        LambdaArg::Auto => {
            let grid = lambda_grid_for(&x, &c, &y, &spec, &fit_cfg, settings.n_lambda, settings.ratio)?;
            let plan = CvPlan::new(x.n_samples(), settings.k, grid, settings.seed)?.with_one_se(settings.one_se);
            let cv = cross_validate(&plan, &x, &c, &y, &spec, &fit_cfg)?;
            print!("{}", report::cv_summary(&cv));
            write_json(
                &out.join("cv.json"),
                &CvOutput { penalty: kind, settings, report: &cv, fold_mspe: &cv.fold_mspe },
            )?;
            cv.refit.clone().ok_or_else(|| anyhow!("cross-validation returned no refit"))?
        }
    };
    let summary = report::fit_summary(&fit);
    print!("{summary}");
    fs::write(out.join("summary.txt"), &summary)?;
    write_json(&out.join("model.json"), &fit)
}

#[derive(Serialize)]
struct SimulateManifest {
    scenario: String,
    seed: u64,
    reps: usize,
    replicates: Vec<ReplicateEntry>,
}

#[derive(Serialize)]
struct ReplicateEntry {
    dir: String,
    seed: u64,
    sigma: f64,
    zero_fraction: f64,
}

fn simulate_command(args: &SimulateArgs, seed: u64, out: PathBuf) -> Result<()> {
    if args.reps == 0 {
        return Err(Error::Argument("--reps must be at least 1".into()).into());
    }
    let entries: Vec<relshift::Result<ReplicateEntry>> = par::map_indexed(args.reps, |r| {
        let rep_seed = seed.wrapping_add(r as u64);
        let mut scenario = Scenario::named(args.scenario, rep_seed);
        if let Some(snr) = args.snr {
            scenario = scenario.with_noise(Noise::Snr(snr));
        }
        let data = scenario.generate()?;
        let dir = format!("rep_{r:03}");
        data.write_dir(&out.join(&dir))?;
        Ok(ReplicateEntry { dir, seed: rep_seed, sigma: data.sigma, zero_fraction: data.zero_fraction })
    });
    let replicates: Vec<ReplicateEntry> = entries.into_iter().collect::<relshift::Result<_>>()?;
    let mean_zero = replicates.iter().map(|e| e.zero_fraction).sum::<f64>() / replicates.len() as f64;
    println!(
        "wrote {} replicate(s) of {} to {} (mean zero fraction {:.3})",
        replicates.len(),
        args.scenario,
        out.display(),
        mean_zero
    );
    write_json(
        &out.join("manifest.json"),
        &SimulateManifest { scenario: args.scenario.to_string(), seed, reps: args.reps, replicates },
    )
}

fn bounds_command(args: &BoundsArgs, seed: u64, fit: FitConfig, out: PathBuf) -> Result<()> {
    let scenario = Scenario::named(args.scenario, seed);
    let sigma = match args.sigma {
        Some(s) => s,
        None => calibrate_sigma(&scenario.clone().with_truncation(None), args.snr, SIGMA_CALIBRATION_SAMPLES)?,
    };
    let cfg = BoundConfig {
        kind: args.penalty,
        delta: args.delta,
        n: args.n,
        replicates: args.reps,
        sigma: Some(sigma),
        seed,
        fit,
    };
    let rep: BoundReport = theorem1_check(&scenario, &cfg)?;
    let mut w = csv::Writer::from_path(out.join("bounds.csv"))?;
    for row in &rep.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    write_json(&out.join("bounds.json"), &rep)?;
    print!("{}", report::bound_summary(&rep));
    Ok(())
}
