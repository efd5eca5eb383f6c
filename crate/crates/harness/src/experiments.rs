//! Training runs, sweeps, grids and the per-sample reports built on them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use cal_core::cal::ContrastCondition;
use cal_core::data::{build_examples, Corpus};
use cal_core::model::{ModelConfig, ModelParams};
use cal_core::stats;
use cal_core::train::{
    build_corpora, derive_seed, evaluate, weight_report, Evaluation, ExperimentConfig,
    MetricsRecord, Trainer, WeightReport,
};
use serde::Serialize;

use crate::checkpoint;
use crate::error::{HarnessError, Result};
use crate::outputs::{self, write_file, Histogram};

/// Offset added to seeds drawn for sampling report examples.
const REPORT_STREAM: u64 = 100;

pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
    pub params: ModelParams,
}

impl RunOutcome {
    pub fn last(&self) -> &MetricsRecord {
        self.records
            .last()
            .expect("every run records after its final step")
    }

    pub fn acc_correlated(&self) -> f64 {
        self.last().acc_correlated.unwrap_or(f64::NAN)
    }
}

/// Trains configs, memoizing finished runs by their config with the output
/// directory blanked out, and writes each run's files when asked to.
#[derive(Default)]
pub struct Runner {
    cache: HashMap<String, Rc<RunOutcome>>,
    write_files: bool,
    quiet: bool,
}

impl Runner {
    pub fn new(write_files: bool) -> Self {
        Runner {
            cache: HashMap::new(),
            write_files,
            quiet: false,
        }
    }

    pub fn quiet(mut self) -> Self {
        self.quiet = true;
        self
    }

    pub fn runs_trained(&self) -> usize {
        self.cache.len()
    }

    fn key(config: &ExperimentConfig) -> Result<String> {
        let mut c = config.clone();
        c.output_dir.clear();
        Ok(serde_json::to_string(&c)?)
    }

    pub fn run(&mut self, config: &ExperimentConfig) -> Result<Rc<RunOutcome>> {
        let key = Self::key(config)?;
        let outcome = match self.cache.get(&key) {
            Some(o) => o.clone(),
            None => {
                let o = Rc::new(self.train(config)?);
                self.cache.insert(key, o.clone());
                o
            }
        };
        if self.write_files {
            write_run(Path::new(&config.output_dir), config, &outcome)?;
        }
        Ok(outcome)
    }

    fn train(&self, config: &ExperimentConfig) -> Result<RunOutcome> {
        let start = Instant::now();
        let mut trainer = Trainer::new(config.clone())?;
        let mut records = Vec::new();
        while !trainer.is_done() {
            if let Err(e) = trainer.step() {
                if let (true, Some(d)) = (self.write_files, trainer.diagnostics()) {
                    let dir = Path::new(&config.output_dir);
                    let dump = serde_json::json!({ "step": d.step, "reports": d.reports });
                    write_file(
                        &dir.join("diagnostics.json"),
                        serde_json::to_string_pretty(&dump)?,
                    )?;
                }
                return Err(e.into());
            }
            if trainer.record_due() {
                let mut r = trainer.record()?;
                r.wall_clock_s = Some(start.elapsed().as_secs_f64());
                if !self.quiet {
                    log::info!(
                        "{} step {} loss {:.4} acc_correlated {:?}",
                        config.output_dir,
                        r.step,
                        r.train_loss,
                        r.acc_correlated
                    );
                }
                records.push(r);
            }
        }
        Ok(RunOutcome {
            config: config.clone(),
            records,
            params: trainer.into_params(),
        })
    }
}

pub fn write_run(dir: &Path, config: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    let metrics = outputs::metrics_csv(&outcome.records)?;
    write_file(&dir.join("metrics.csv"), &metrics)?;
    write_file(
        &dir.join("timing.csv"),
        outputs::timing_csv(&outcome.records)?,
    )?;
    write_file(
        &dir.join("manifest.json"),
        outputs::manifest(config, &metrics)?,
    )?;
    write_file(&dir.join("config.json"), crate::config::to_json(config)?)?;
    checkpoint::save(&dir.join("checkpoint.bin"), &config.model, &outcome.params)
}

pub fn seeds(base: &ExperimentConfig, n: u64) -> Vec<u64> {
    (0..n).map(|k| base.optim.seed + k).collect()
}

fn cell(base: &ExperimentConfig, name: &str, seed: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.optim.seed = seed;
    c.output_dir = Path::new(&base.output_dir)
        .join(format!("{name}_seed{seed}"))
        .to_string_lossy()
        .into_owned();
    c
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Baseline,
    Cal,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Baseline => "baseline",
            Objective::Cal => "cal",
        }
    }

    pub fn apply(self, config: &mut ExperimentConfig) {
        config.cal.enabled = self == Objective::Cal;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseRow {
    pub objective: Objective,
    pub ratio: f64,
    pub seeds: Vec<u64>,
    pub acc_correlated: Vec<f64>,
    pub median_acc_correlated: f64,
    pub median_auc: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseSweep {
    pub rows: Vec<NoiseRow>,
}

impl NoiseSweep {
    pub const HEADER: [&'static str; 5] = [
        "objective",
        "swap_ratio",
        "median_acc_correlated",
        "acc_correlated_per_seed",
        "median_auc",
    ];

    pub fn table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let per_seed: Vec<String> =
                    r.acc_correlated.iter().map(|a| format!("{a:.6}")).collect();
                vec![
                    r.objective.as_str().into(),
                    r.ratio.to_string(),
                    format!("{:.6}", r.median_acc_correlated),
                    per_seed.join(";"),
                    fmt(r.median_auc),
                ]
            })
            .collect()
    }

    fn median_at(&self, objective: Objective, ratio: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.objective == objective && r.ratio == ratio)
            .map(|r| r.median_acc_correlated)
    }

    /// Median accuracy at the smallest ratio minus median at the largest.
    pub fn degradation(&self, objective: Objective) -> Option<f64> {
        let ratios: Vec<f64> = self.rows.iter().map(|r| r.ratio).collect();
        let lo = ratios.iter().copied().reduce(f64::min)?;
        let hi = ratios.iter().copied().reduce(f64::max)?;
        Some(self.median_at(objective, lo)? - self.median_at(objective, hi)?)
    }
}

pub fn sweep_noise(
    runner: &mut Runner,
    base: &ExperimentConfig,
    ratios: &[f64],
    n_seeds: u64,
) -> Result<NoiseSweep> {
    let mut rows = Vec::new();
    for objective in [Objective::Baseline, Objective::Cal] {
        for &ratio in ratios {
            let mut accs = Vec::new();
            let mut aucs = Vec::new();
            let seeds = seeds(base, n_seeds);
            for &seed in &seeds {
                let mut c = cell(base, &format!("{}_swap{ratio}", objective.as_str()), seed);
                objective.apply(&mut c);
                c.data.swap_ratio = ratio;
                let out = runner.run(&c)?;
                accs.push(out.acc_correlated());
                aucs.extend(out.last().separation_auc);
            }
            rows.push(NoiseRow {
                objective,
                ratio,
                seeds,
                median_acc_correlated: stats::median(&accs).unwrap_or(f64::NAN),
                median_auc: stats::median(&aucs),
                acc_correlated: accs,
            });
        }
    }
    Ok(NoiseSweep { rows })
}

pub const CLAMP_SETTINGS: [(f64, f64); 4] = [
    (0.0, f64::INFINITY),
    (0.0, 5.0),
    (1.0, f64::INFINITY),
    (1.0, 5.0),
];

#[derive(Clone, Debug, Serialize)]
pub struct ClampRow {
    /// `None` for the baseline row.
    pub clamp: Option<(f64, f64)>,
    pub acc_correlated: Vec<f64>,
    pub median: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClampGrid {
    pub rows: Vec<ClampRow>,
}

impl ClampGrid {
    pub const HEADER: [&'static str; 5] = [
        "alpha",
        "beta",
        "median_acc_correlated",
        "std",
        "acc_correlated_per_seed",
    ];

    pub fn baseline(&self) -> &ClampRow {
        self.rows
            .iter()
            .find(|r| r.clamp.is_none())
            .expect("grid has a baseline row")
    }

    /// Square root of the mean per-row sample variance.
    pub fn pooled_std(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(|r| r.std * r.std).collect();
        stats::mean(&v).unwrap_or(0.0).sqrt()
    }

    pub fn table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let (a, b) = match r.clamp {
                    Some((a, b)) => (
                        a.to_string(),
                        if b.is_infinite() {
                            "inf".into()
                        } else {
                            b.to_string()
                        },
                    ),
                    None => ("baseline".into(), String::new()),
                };
                let per_seed: Vec<String> =
                    r.acc_correlated.iter().map(|x| format!("{x:.6}")).collect();
                vec![
                    a,
                    b,
                    format!("{:.6}", r.median),
                    format!("{:.6}", r.std),
                    per_seed.join(";"),
                ]
            })
            .collect()
    }
}

pub fn grid_clamp(runner: &mut Runner, base: &ExperimentConfig, n_seeds: u64) -> Result<ClampGrid> {
    let mut rows = Vec::new();
    let settings = std::iter::once(None).chain(CLAMP_SETTINGS.iter().copied().map(Some));
    for clamp in settings {
        let mut accs = Vec::new();
        for seed in seeds(base, n_seeds) {
            let name = match clamp {
                None => "baseline".to_string(),
                Some((a, b)) => format!("cal_a{a}_b{b}"),
            };
            let mut c = cell(base, &name, seed);
            match clamp {
                None => Objective::Baseline.apply(&mut c),
                Some((a, b)) => {
                    Objective::Cal.apply(&mut c);
                    c.cal.alpha = a;
                    c.cal.beta = b;
                }
            }
            accs.push(runner.run(&c)?.acc_correlated());
        }
        rows.push(ClampRow {
            clamp,
            median: stats::median(&accs).unwrap_or(f64::NAN),
            std: stats::std_dev(&accs).unwrap_or(0.0),
            acc_correlated: accs,
        });
    }
    Ok(ClampGrid { rows })
}

pub fn standard_conditions() -> Vec<ContrastCondition> {
    vec![
        ContrastCondition::PatchMask { ratio: 0.5 },
        ContrastCondition::PatchMask { ratio: 0.7 },
        ContrastCondition::PatchMask { ratio: 0.9 },
        ContrastCondition::GaussianPerturb { sigma: 1.0 },
        ContrastCondition::GaussianPerturb { sigma: 10.0 },
        ContrastCondition::FullDrop,
    ]
}

pub fn condition_label(c: &ContrastCondition) -> String {
    match c {
        ContrastCondition::FullDrop => "full_drop".into(),
        ContrastCondition::PatchMask { ratio } => format!("patch_mask_{ratio}"),
        ContrastCondition::GaussianPerturb { sigma } => format!("gaussian_{sigma}"),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionRow {
    pub condition: ContrastCondition,
    pub final_loss: f64,
    pub acc_correlated: Option<f64>,
    pub separation_auc: Option<f64>,
    pub delta_correlated: Option<f64>,
    pub delta_irrelevant: Option<f64>,
    pub delta_contradictory: Option<f64>,
}

pub const CONDITION_HEADER: [&str; 7] = [
    "condition",
    "final_loss",
    "acc_correlated",
    "separation_auc",
    "delta_correlated",
    "delta_irrelevant",
    "delta_contradictory",
];

pub fn condition_table(rows: &[ConditionRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                condition_label(&r.condition),
                r.final_loss.to_string(),
                fmt(r.acc_correlated),
                fmt(r.separation_auc),
                fmt(r.delta_correlated),
                fmt(r.delta_irrelevant),
                fmt(r.delta_contradictory),
            ]
        })
        .collect()
}

pub fn grid_condition(
    runner: &mut Runner,
    base: &ExperimentConfig,
    conditions: &[ContrastCondition],
) -> Result<Vec<ConditionRow>> {
    let mut rows = Vec::new();
    for condition in conditions {
        let mut c = cell(base, &condition_label(condition), base.optim.seed);
        Objective::Cal.apply(&mut c);
        c.cal.condition = condition.clone();
        let out = runner.run(&c)?;
        let r = out.last();
        if !r.train_loss.is_finite() {
            return Err(cal_core::Error::NonFinite(format!(
                "condition {}",
                condition_label(condition)
            ))
            .into());
        }
        rows.push(ConditionRow {
            condition: condition.clone(),
            final_loss: r.train_loss,
            acc_correlated: r.acc_correlated,
            separation_auc: r.separation_auc,
            delta_correlated: r.delta_correlated.mean,
            delta_irrelevant: r.delta_irrelevant.mean,
            delta_contradictory: r.delta_contradictory.mean,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct Overhead {
    pub trials: usize,
    pub with_cal_s: Vec<f64>,
    pub without_cal_s: Vec<f64>,
    pub mean_with: f64,
    pub mean_without: f64,
    pub std_with: f64,
    pub std_without: f64,
    pub ratio: f64,
}

/// Times single training steps with and without the contrastive pass,
/// alternating between the two so drift affects both equally.
pub fn bench_overhead(base: &ExperimentConfig, trials: usize, warmup: usize) -> Result<Overhead> {
    let make = |cal: bool| {
        let mut c = base.clone();
        c.cal.enabled = cal;
        c.stage_flags.cal_in_pt = true;
        c.stage_flags.cal_in_it = true;
        c.optim.steps = trials + warmup;
        c.stage_flags.pt_fraction = 0.0;
        Trainer::new(c)
    };
    let mut with = make(true)?;
    let mut without = make(false)?;
    for _ in 0..warmup {
        with.step()?;
        without.step()?;
    }
    let mut ws = Vec::with_capacity(trials);
    let mut wo = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        without.step()?;
        wo.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        with.step()?;
        ws.push(t.elapsed().as_secs_f64());
    }
    let mean_with = stats::mean(&ws).unwrap_or(f64::NAN);
    let mean_without = stats::mean(&wo).unwrap_or(f64::NAN);
    Ok(Overhead {
        trials,
        std_with: stats::std_dev(&ws).unwrap_or(0.0),
        std_without: stats::std_dev(&wo).unwrap_or(0.0),
        ratio: mean_with / mean_without,
        mean_with,
        mean_without,
        with_cal_s: ws,
        without_cal_s: wo,
    })
}

/// Weight report for one eval-corpus sample.
pub fn heatmap(
    config: &ExperimentConfig,
    params: &ModelParams,
    sample: usize,
) -> Result<WeightReport> {
    let (_, eval) = build_corpora(config)?;
    let examples = build_examples(&eval, &config.model)?;
    let ex = examples.get(sample).ok_or_else(|| {
        HarnessError::Config(format!(
            "sample {sample} out of range (eval corpus has {})",
            examples.len()
        ))
    })?;
    let mut rng = cal_core::rng_from_seed(derive_seed(
        config.optim.seed,
        REPORT_STREAM + sample as u64,
    ));
    Ok(weight_report(
        &config.model,
        params,
        ex,
        &config.cal,
        &mut rng,
    )?)
}

/// Deltas over the trainable label tokens of `n_samples` eval samples drawn
/// without replacement.
pub fn weight_histogram(
    config: &ExperimentConfig,
    params: &ModelParams,
    n_samples: usize,
) -> Result<Histogram> {
    use rand::seq::index::sample;
    let (_, eval) = build_corpora(config)?;
    let examples = build_examples(&eval, &config.model)?;
    let n = n_samples.min(examples.len());
    let mut rng = cal_core::rng_from_seed(derive_seed(config.optim.seed, REPORT_STREAM));
    let mut picks = sample(&mut rng, examples.len(), n).into_vec();
    picks.sort_unstable();
    let mut deltas = Vec::new();
    for i in picks {
        let r = weight_report(&config.model, params, &examples[i], &config.cal, &mut rng)?;
        deltas.extend(r.records.iter().filter(|t| t.trainable).map(|t| t.delta));
    }
    Ok(outputs::histogram(&deltas, -10.0, 20.0, 60, 5.0, n))
}

pub fn eval(config: &ExperimentConfig, params: &ModelParams) -> Result<Evaluation> {
    let (_, eval_corpus) = build_corpora(config)?;
    let examples = build_examples(&eval_corpus, &config.model)?;
    Ok(evaluate(
        &config.model,
        params,
        &examples,
        &config.cal,
        derive_seed(config.optim.seed, cal_core::train::streams::EVAL_CONTRAST),
    )?)
}

/// Loads a checkpoint whose model config must match the run config.
pub fn load_params(path: &Path, model: &ModelConfig) -> Result<ModelParams> {
    let (stored, params) = checkpoint::load(path)?;
    if &stored != model {
        return Err(HarnessError::Config(format!(
            "{} was trained with a different model config",
            path.display()
        )));
    }
    Ok(params)
}

pub fn gen_data(
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<(Corpus, Corpus, PathBuf, PathBuf)> {
    let (train, eval) = build_corpora(config)?;
    let tp = dir.join("train.jsonl");
    let ep = dir.join("eval.jsonl");
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    crate::corpus_io::save(&tp, &train)?;
    crate::corpus_io::save(&ep, &eval)?;
    Ok((train, eval, tp, ep))
}
