use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lcbn::experiments::{
    run_experiment, simulate, ExperimentConfig, ExperimentFile, ExperimentReport, MetricsTable, Truth,
};
use lcbn::identifiability::{
    check_dina_strict, check_generic_q, check_linear_necessary, check_slam_strict_q, ConditionReport, Verdict,
    DEFAULT_SEARCH_BUDGET,
};
use lcbn::inference::GridPoint;
use lcbn::io::{read_hierarchy, read_q, read_responses, write_q, write_responses};
use lcbn::{
    lcbn_em_fit, two_step_fit, Dataset, FitControl, FitResult, Hierarchy, ItemParams, LcbnParams, MeasurementModel,
    PatternSet, ProportionVector, QMatrix,
};
use serde::{Deserialize, Serialize};

use crate::manifest::{ManifestBuilder, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_ID_FAIL: i32 = 4;
pub const EXIT_ID_UNKNOWN: i32 = 5;

fn write_json(path: &Path, value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(bytes)
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => {
            write_json(path, value)?;
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn single_config(path: &Path) -> Result<ExperimentConfig> {
    let mut configs = ExperimentFile::read(path)
        .with_context(|| format!("reading config {}", path.display()))?
        .into_configs();
    if configs.len() != 1 {
        bail!(lcbn::Error::InvalidArgument(format!(
            "{} holds {} settings; simulate expects one",
            path.display(),
            configs.len()
        )));
    }
    Ok(configs.remove(0))
}

#[derive(Serialize)]
struct TruthFile<'a> {
    config: &'a ExperimentConfig,
    replicate: usize,
    truth: &'a Truth,
    manifest: RunManifest,
}

pub fn simulate_cmd(config: &Path, out: &Path, replicate: usize, seed: Option<u64>) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("simulate");
    manifest.input(config)?;
    let mut cfg = single_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let truth = cfg.truth()?;
    let q = truth.q.clone().expect("truth carries its Q-matrix");
    let sim = simulate(&cfg, &truth, replicate)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut responses = Vec::new();
    write_responses(&sim.data, &mut responses)?;
    let mut q_csv = Vec::new();
    write_q(&q, &mut q_csv)?;
    let mut hierarchy = serde_json::to_vec_pretty(&truth.hierarchy)?;
    hierarchy.push(b'\n');
    for (name, bytes) in [("responses.csv", &responses), ("q.csv", &q_csv), ("hierarchy.json", &hierarchy)] {
        fs::write(out.join(name), bytes)?;
        manifest.output(name, bytes);
    }
    let manifest = manifest.finish(&cfg, cfg.seed)?;
    write_json(
        &out.join("truth.json"),
        &TruthFile {
            config: &cfg,
            replicate,
            truth: &truth,
            manifest: manifest.clone(),
        },
    )?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(EXIT_OK)
}

/// Step-one outcome carried in a fit report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub lambda: f64,
    pub ebic: f64,
    pub bic: f64,
    pub selected: PatternSet,
    pub diagnostic: Option<String>,
    pub converged: bool,
    pub grid: Vec<GridPoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub model: MeasurementModel,
    pub hierarchy: Hierarchy,
    pub t: LcbnParams,
    pub params: ItemParams,
    /// Proportions over the permissible patterns of `hierarchy`.
    pub proportions: ProportionVector,
    pub loglik: f64,
    pub ebic: f64,
    pub bic: f64,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    /// Expected pattern counts from the E-step that produced `t`.
    pub pattern_weights: Vec<f64>,
    /// 1-based items whose DINA estimates violate `1 - s > g`.
    pub monotonicity_violations: Vec<usize>,
    pub selection: Option<SelectionSummary>,
    pub manifest: RunManifest,
}

#[derive(Serialize)]
struct FitSettings<'a> {
    model: MeasurementModel,
    hierarchy_given: bool,
    control: &'a FitControl,
}

pub struct FitArgs {
    pub responses: PathBuf,
    pub q: PathBuf,
    pub model: String,
    pub hierarchy: Option<PathBuf>,
    pub control: Option<PathBuf>,
    pub lambda_grid: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

fn load_inputs(responses: &Path, q: &Path) -> Result<(Dataset, QMatrix)> {
    let data = read_responses(responses).with_context(|| format!("reading {}", responses.display()))?;
    let q = read_q(q).with_context(|| format!("reading {}", q.display()))?;
    if data.items() != q.items() {
        bail!(lcbn::Error::Dimension(format!(
            "responses have {} items but the Q-matrix has {} rows",
            data.items(),
            q.items()
        )));
    }
    Ok((data, q))
}

pub fn fit_cmd(args: FitArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("fit");
    manifest.input(&args.responses)?;
    manifest.input(&args.q)?;
    let model = MeasurementModel::parse(&args.model)?;
    let mut control = match &args.control {
        Some(path) => {
            manifest.input(path)?;
            serde_json::from_str::<FitControl>(&fs::read_to_string(path)?)
                .map_err(lcbn::Error::from)
                .with_context(|| format!("reading {}", path.display()))?
        }
        None => FitControl::default(),
    };
    if let Some(grid) = args.lambda_grid {
        control.lambda_grid = grid;
    }
    if let Some(seed) = args.seed {
        control.seed = seed;
    }
    if let Some(restarts) = args.restarts {
        control.restarts = restarts;
    }
    if let Some(max_iter) = args.max_iter {
        control.max_iter = max_iter;
    }
    if let Some(tol) = args.tol {
        control.tol = tol;
    }
    let (data, q) = load_inputs(&args.responses, &args.q)?;

    let (fit, selection): (FitResult, Option<SelectionSummary>) = match &args.hierarchy {
        Some(path) => {
            manifest.input(path)?;
            let h = read_hierarchy(path).with_context(|| format!("reading {}", path.display()))?;
            (lcbn_em_fit(&data, &q, &h, model, &control)?, None)
        }
        None => {
            let result = two_step_fit(&data, &q, model, &control)?;
            let sel = result.selection;
            let summary = SelectionSummary {
                lambda: sel.lambda,
                ebic: sel.ebic,
                bic: sel.bic,
                selected: sel.step1.selected.clone(),
                diagnostic: sel.diagnostic.clone(),
                converged: sel.step1.converged,
                grid: sel.grid.clone(),
            };
            (result.fit, Some(summary))
        }
    };
    let converged = fit.converged && selection.as_ref().map_or(true, |s| s.converged);
    let settings = FitSettings {
        model,
        hierarchy_given: args.hierarchy.is_some(),
        control: &control,
    };
    let report = FitReport {
        model,
        hierarchy: fit.hierarchy,
        t: fit.t,
        params: fit.params,
        proportions: fit.proportions,
        loglik: fit.loglik,
        ebic: fit.ebic,
        bic: fit.bic,
        lambda: fit.lambda,
        iterations: fit.iterations,
        converged: fit.converged,
        trace: fit.trace,
        pattern_weights: fit.pattern_weights,
        monotonicity_violations: fit.monotonicity_violations.iter().map(|j| j + 1).collect(),
        selection,
        manifest: manifest.finish(&settings, control.seed)?,
    };
    emit_json(args.out.as_deref(), &report)?;
    if converged {
        Ok(EXIT_OK)
    } else {
        log::warn!("an EM run reached the iteration limit; results were still written");
        Ok(EXIT_NOT_CONVERGED)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    DinaStrict,
    LinearNecessary,
    SlamStrict,
    Generic,
}

#[derive(Serialize)]
struct IdSettings {
    theorem: Theorem,
    budget: usize,
    max_flips: usize,
}

#[derive(Serialize)]
struct IdReport {
    theorem: Theorem,
    verdict: Verdict,
    conditions: ConditionReport,
    manifest: RunManifest,
}

pub fn check_id_cmd(
    q_path: &Path,
    h_path: &Path,
    theorem: Theorem,
    budget: Option<usize>,
    max_flips: usize,
    out: Option<&Path>,
) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("check-id");
    manifest.input(q_path)?;
    manifest.input(h_path)?;
    let q = read_q(q_path).with_context(|| format!("reading {}", q_path.display()))?;
    let h = read_hierarchy(h_path).with_context(|| format!("reading {}", h_path.display()))?;
    let budget = budget.unwrap_or(DEFAULT_SEARCH_BUDGET);
    let conditions = match theorem {
        Theorem::DinaStrict => check_dina_strict(&q, &h)?,
        Theorem::LinearNecessary => check_linear_necessary(&q, &h)?,
        Theorem::SlamStrict => check_slam_strict_q(&q, &h, budget)?,
        Theorem::Generic => check_generic_q(&q, &h, max_flips, budget)?,
    };
    let verdict = conditions.verdict();
    let settings = IdSettings {
        theorem,
        budget,
        max_flips,
    };
    let report = IdReport {
        theorem,
        verdict,
        conditions,
        manifest: manifest.finish(&settings, 0)?,
    };
    emit_json(out, &report)?;
    Ok(match verdict {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_ID_FAIL,
        Verdict::Unknown => EXIT_ID_UNKNOWN,
    })
}

#[derive(Serialize)]
struct SettingFailure<'a> {
    config: &'a ExperimentConfig,
    error: String,
}

#[derive(Serialize)]
struct ExperimentArchive<'a> {
    reports: Vec<&'a ExperimentReport>,
    failed_settings: Vec<SettingFailure<'a>>,
    manifest: RunManifest,
}

pub fn experiment_cmd(config: &Path, out: &Path, replicates: Option<usize>) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("experiment");
    manifest.input(config)?;
    let mut configs = ExperimentFile::read(config)
        .with_context(|| format!("reading config {}", config.display()))?
        .into_configs();
    for cfg in &mut configs {
        if let Some(c) = replicates {
            cfg.replicates = c;
        }
        cfg.validate()?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let outcomes: Vec<(&ExperimentConfig, lcbn::Result<ExperimentReport>)> = configs
        .iter()
        .map(|cfg| {
            log::info!("running setting {:?}", cfg.name);
            (cfg, run_experiment(cfg))
        })
        .collect();
    let mut table = MetricsTable::default();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (cfg, outcome) in &outcomes {
        match outcome {
            Ok(report) => {
                table.rows.push(report.row.clone());
                reports.push(report);
            }
            Err(err) => {
                log::error!("setting {:?} failed: {err}", cfg.name);
                failed.push(SettingFailure {
                    config: cfg,
                    error: err.to_string(),
                });
            }
        }
    }
    let csv = table.to_csv()?;
    fs::write(out.join("metrics.csv"), &csv)?;
    manifest.output("metrics.csv", csv.as_bytes());
    let seed = configs.first().map_or(0, |c| c.seed);
    let has_failures = !failed.is_empty();
    let archive = ExperimentArchive {
        reports,
        failed_settings: failed,
        manifest: manifest.finish(&configs, seed)?,
    };
    write_json(&out.join("replicates.json"), &archive)?;
    write_json(&out.join("manifest.json"), &archive.manifest)?;
    if has_failures {
        bail!("one or more settings failed; see replicates.json");
    }
    Ok(EXIT_OK)
}
