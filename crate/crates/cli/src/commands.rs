use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stackavg::io::{load_manifest_with_y, read_matrix, read_vector};
use stackavg::psis::loo_all;
use stackavg::scoring::{Density, Grid, KernelDensity, MixtureDensity, ScoreError, ScoreSpec};
use stackavg::simlab::{ExperimentConfig, ExperimentReport, SimError};
use stackavg::weights::{Method, MethodWeights, WeightError, WeightInputs};
use stackavg::{LooResult, Manifest};

use crate::output::{weights_csv, weights_json};
use crate::{Failure, Format, PsisArgs, ScoreArgs, SimulateArgs, WeightsArgs};

type Result<T> = std::result::Result<T, Failure>;

fn weight_failure(method: Method, e: WeightError) -> Failure {
    let e = anyhow!(e).context(format!("method {method}"));
    match e.downcast_ref::<WeightError>() {
        Some(WeightError::Simplex(_)) => Failure::Numerical(e),
        _ => Failure::Validation(e),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::validation),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(Failure::validation)
        }
    }
}

/// Whether the manifest file sets `seed` explicitly.
fn manifest_has_seed(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::validation)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::validation)?;
    Ok(value.get("seed").is_some())
}

struct Analysis {
    manifest: Manifest,
    y: Option<Vec<f64>>,
    loo: LooResult,
    methods: Vec<Method>,
    seed: u64,
}

fn analyse(manifest_path: &Path, method: &str, seed: Option<u64>) -> Result<Analysis> {
    let methods = Method::parse_list(method).map_err(|e| Failure::validation(anyhow!(e)))?;
    let (manifest, y) = load_manifest_with_y(manifest_path)
        .with_context(|| format!("loading {}", manifest_path.display()))
        .map_err(Failure::validation)?;
    let randomized = methods
        .iter()
        .any(|m| matches!(m, Method::Stacking | Method::PseudoBmaPlus));
    if randomized && seed.is_none() && !manifest_has_seed(manifest_path)? {
        return Err(Failure::validation(anyhow!(
            "stacking and pseudo-bma-plus need a seed: pass --seed or set \"seed\" in the manifest"
        )));
    }
    let seed = seed.unwrap_or(manifest.seed);
    let loo = loo_all(&manifest);
    if !loo.khat_warnings.is_empty() {
        eprintln!(
            "warning: {} of {} cells have k_hat > 0.7; their LOO estimates are unreliable",
            loo.khat_warnings.len(),
            loo.n() * loo.k()
        );
    }
    for w in &loo.sample_size_warnings {
        eprintln!(
            "warning: model {} has p_loo {:.2} > n/5 = {:.2}",
            loo.model_ids[w.k],
            w.p_loo,
            w.n as f64 / 5.0
        );
    }
    Ok(Analysis {
        manifest,
        y,
        loo,
        methods,
        seed,
    })
}

fn compute_weights(a: &Analysis, bb_samples: usize) -> Result<Vec<MethodWeights>> {
    let inputs = WeightInputs {
        manifest: &a.manifest,
        loo: &a.loo,
        y: a.y.as_deref(),
        bb_samples,
        seed: a.seed,
    };
    let mut out = Vec::with_capacity(a.methods.len());
    for &m in &a.methods {
        let r = inputs.compute(m).map_err(|e| weight_failure(m, e))?;
        if r.converged == Some(false) {
            return Err(Failure::numerical(anyhow!("{m} optimizer did not converge")));
        }
        if r.weights.as_slice().iter().any(|w| !w.is_finite()) {
            return Err(Failure::numerical(anyhow!("{m} produced non-finite weights")));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn weights(args: &WeightsArgs) -> Result<()> {
    let a = analyse(&args.manifest, &args.method, args.seed)?;
    let results = compute_weights(&a, args.bb_samples)?;
    let ids = a.manifest.model_ids();
    let text = match args.format {
        Format::Json => weights_json(
            &ids,
            &results,
            a.loo.khat_warnings.len(),
            a.loo.sample_size_warnings.len(),
        ),
        Format::Csv => weights_csv(&ids, &results).map_err(Failure::numerical)?,
    };
    write_output(args.out.as_deref(), &text)
}

#[derive(Serialize)]
struct ModelElpd<'a> {
    model: &'a str,
    elpd_loo: f64,
    se: f64,
    p_loo: f64,
    max_k_hat: f64,
}

#[derive(Serialize)]
struct KhatEntry<'a> {
    point: usize,
    model: &'a str,
    k_hat: f64,
}

#[derive(Serialize)]
struct SampleSizeEntry<'a> {
    model: &'a str,
    n: usize,
    p_loo: f64,
}

#[derive(Serialize)]
struct ElpdReport<'a> {
    models: Vec<ModelElpd<'a>>,
    khat_warnings: Vec<KhatEntry<'a>>,
    sample_size_warnings: Vec<SampleSizeEntry<'a>>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::validation)
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::validation)
}

pub fn psis(args: &PsisArgs) -> Result<()> {
    let a = analyse(&args.manifest, "pseudo-bma", None)?;
    let loo = &a.loo;
    create_dir(&args.out)?;

    let mut lpd = Vec::new();
    loo.write_lpd_csv(&mut lpd).map_err(Failure::validation)?;
    write_file(args.out.join("loo_lpd.csv"), &lpd)?;
    let mut khat = Vec::new();
    loo.write_khat_csv(&mut khat).map_err(Failure::validation)?;
    write_file(args.out.join("k_hat.csv"), &khat)?;

    let report = ElpdReport {
        models: loo
            .elpd
            .iter()
            .enumerate()
            .map(|(k, e)| ModelElpd {
                model: &loo.model_ids[k],
                elpd_loo: e.total,
                se: e.se,
                p_loo: e.p_loo,
                max_k_hat: loo.k_hat.column(k).iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect(),
        khat_warnings: loo
            .khat_warnings
            .iter()
            .map(|w| KhatEntry {
                point: w.i,
                model: &loo.model_ids[w.k],
                k_hat: w.k_hat,
            })
            .collect(),
        sample_size_warnings: loo
            .sample_size_warnings
            .iter()
            .map(|w| SampleSizeEntry {
                model: &loo.model_ids[w.k],
                n: w.n,
                p_loo: w.p_loo,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(Failure::numerical)?;
    json.push('\n');
    write_file(args.out.join("elpd.json"), json.as_bytes())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictiveSpec {
    models: BTreeMap<String, PathBuf>,
}

#[derive(Serialize)]
struct ScoreBlock {
    method: &'static str,
    rule: String,
    mean_score: f64,
    pointwise: Vec<f64>,
}

fn score_failure(e: ScoreError) -> Failure {
    Failure::validation(anyhow!(e))
}

/// Predictive draws per model, in manifest order, each `draws x points`.
fn load_predictive(path: &Path, ids: &[String]) -> Result<Vec<Array2<f64>>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::validation)?;
    let spec: PredictiveSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::validation)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    ids.iter()
        .map(|id| {
            let rel = spec.models.get(id).ok_or_else(|| {
                Failure::validation(anyhow!("no predictive draws for model {id}"))
            })?;
            read_matrix(&base.join(rel)).map_err(Failure::validation)
        })
        .collect()
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let grid: Grid = args.grid.parse().map_err(score_failure)?;
    let spec = ScoreSpec {
        rule: args.rule.parse().map_err(score_failure)?,
        beta: args.beta,
        grid,
    };
    spec.validate().map_err(score_failure)?;

    let a = analyse(&args.manifest, &args.method, args.seed)?;
    let results = compute_weights(&a, args.bb_samples)?;
    let ids = a.manifest.model_ids();
    let predictive = load_predictive(&args.predictive, &ids)?;
    let observed = read_vector(&args.observed).map_err(Failure::validation)?;
    for (id, p) in ids.iter().zip(&predictive) {
        if p.ncols() != observed.len() {
            return Err(Failure::validation(anyhow!(
                "model {id}: {} predictive columns for {} observations",
                p.ncols(),
                observed.len()
            )));
        }
    }

    let mut blocks = Vec::with_capacity(results.len());
    for r in &results {
        let pointwise: Vec<f64> = observed
            .par_iter()
            .enumerate()
            .map(|(j, &y)| {
                let components = predictive
                    .iter()
                    .map(|p| {
                        KernelDensity::new(p.column(j).to_vec()).map(|k| Box::new(k) as Box<dyn Density>)
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let mix = MixtureDensity::new(r.weights.clone(), components)?;
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                rng.set_stream(j as u64);
                spec.score(&mix, y, args.energy_draws, &mut rng)
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(score_failure)?;
        let mean_score = pointwise.iter().sum::<f64>() / pointwise.len().max(1) as f64;
        if !mean_score.is_finite() {
            return Err(Failure::numerical(anyhow!(
                "{} score for {} is not finite",
                args.rule,
                r.method
            )));
        }
        blocks.push(ScoreBlock {
            method: r.method.name(),
            rule: args.rule.clone(),
            mean_score,
            pointwise,
        });
    }
    let mut json = serde_json::to_string_pretty(&blocks).map_err(Failure::numerical)?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::NotPositiveDefinite | SimError::Csv(_) => Failure::numerical(e),
        _ => Failure::validation(e),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .map_err(Failure::validation)?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))
        .map_err(Failure::validation)?;
    let report = config.run().map_err(sim_failure)?;

    create_dir(&args.out)?;
    let mut json = serde_json::to_string_pretty(&report).map_err(Failure::numerical)?;
    json.push('\n');
    write_file(args.out.join("report.json"), json.as_bytes())?;
    let mut rows = Vec::new();
    report.write_rows_csv(&mut rows).map_err(sim_failure)?;
    write_file(args.out.join("rows.csv"), &rows)?;
    if let ExperimentReport::Regression(r) = &report {
        let mut models = Vec::new();
        stackavg::simlab::write_models_csv(&mut models, &r.model_rows).map_err(sim_failure)?;
        write_file(args.out.join("models.csv"), &models)?;
    }
    Ok(())
}
