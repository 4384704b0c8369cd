//! Train → attack → smooth → measure, repeated over seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use robust_crf_core::attack::{
    dice_structural_attack, gaussian_feature_attack, pgd_feature_attack, AttackBudget, AttackKind, AttackResult,
};
use robust_crf_core::crf::{model_call_count, CrfConfig, SmoothingPlan};
use robust_crf_core::gcn::{forward, train, GcnParameters, TrainingConfig};
use robust_crf_core::graph::{generate_synthetic, SyntheticSpec};
use robust_crf_core::metrics::{accuracy, mean_std, FlipCounts};
use robust_crf_core::rng::{derive_seed, rng_from_seed};
use robust_crf_core::{DatasetSplits, Graph};

use crate::dataset::load_dataset;
use crate::parallel::{smooth_parallel, with_threads, CountingClassifier};

const ATTACK_STREAM: u64 = 0xa77a;
const CRF_STREAM: u64 = 0xc4f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub training: TrainingConfig,
    pub attack: AttackBudget,
    pub crf: CrfConfig,
    #[serde(default = "default_repeats")]
    pub num_repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_repeats() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.num_repeats >= 1, "num_repeats must be at least 1");
        self.training.validate().context("training")?;
        self.attack.validate().context("attack")?;
        self.crf.validate().context("crf")?;
        Ok(())
    }

    pub fn load_data(&self) -> anyhow::Result<(Graph, DatasetSplits)> {
        match &self.dataset {
            DatasetSource::Path(p) => load_dataset(p).with_context(|| format!("loading dataset {}", p.display())),
            DatasetSource::Synthetic(spec) => Ok(generate_synthetic(spec)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    /// Record wall-clock time of smoothing calls. Off makes reports byte-reproducible.
    pub timing: bool,
}

/// Per-seed measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub clean_acc_vanilla: f64,
    pub clean_acc_smoothed: f64,
    pub atk_acc_vanilla: f64,
    pub atk_acc_smoothed: f64,
    pub asr_vanilla: f64,
    pub asr_smoothed: f64,
    pub model_calls: u64,
    pub smooth_wall_ms: Option<f64>,
    /// Fraction of test nodes wrong on the clean graph and right after the attack.
    pub recovered_vanilla: f64,
    pub recovered_smoothed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let (mean, std) = mean_std(&v);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub clean_acc_vanilla: Stat,
    pub clean_acc_smoothed: Stat,
    pub atk_acc_vanilla: Stat,
    pub atk_acc_smoothed: Stat,
    pub asr_vanilla: Stat,
    pub asr_smoothed: Stat,
    pub model_calls: Stat,
    pub smooth_wall_ms: Option<Stat>,
}

impl Aggregates {
    pub fn from_rows(rows: &[SeedMetrics]) -> Self {
        let col = |f: fn(&SeedMetrics) -> f64| Stat::of(rows.iter().map(f));
        let wall = rows.iter().map(|r| r.smooth_wall_ms).collect::<Option<Vec<f64>>>();
        Self {
            clean_acc_vanilla: col(|r| r.clean_acc_vanilla),
            clean_acc_smoothed: col(|r| r.clean_acc_smoothed),
            atk_acc_vanilla: col(|r| r.atk_acc_vanilla),
            atk_acc_smoothed: col(|r| r.atk_acc_smoothed),
            asr_vanilla: col(|r| r.asr_vanilla),
            asr_smoothed: col(|r| r.asr_smoothed),
            model_calls: col(|r| r.model_calls as f64),
            smooth_wall_ms: wall.map(|w| Stat::of(w.into_iter())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedMetrics>,
    pub aggregate: Aggregates,
}

pub const CSV_HEADER: &str =
    "seed,clean_acc_vanilla,clean_acc_smoothed,atk_acc_vanilla,atk_acc_smoothed,asr_vanilla,asr_smoothed,model_calls,smooth_wall_ms";

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.per_seed {
            let wall = r.smooth_wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.clean_acc_vanilla,
                r.clean_acc_smoothed,
                r.atk_acc_vanilla,
                r.atk_acc_smoothed,
                r.asr_vanilla,
                r.asr_smoothed,
                r.model_calls,
                wall
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("metrics.csv"), self.to_csv())?;
        fs::write(dir.join("metrics.json"), self.to_json())?;
        Ok(())
    }
}

/// Applies the configured attack. PGD targets `target_idx`.
pub fn run_attack(
    graph: &Graph,
    params: &GcnParameters,
    budget: &AttackBudget,
    target_idx: &[usize],
) -> anyhow::Result<AttackResult> {
    budget.validate()?;
    let mut rng = rng_from_seed(budget.seed);
    Ok(match budget.kind {
        AttackKind::GaussianNoise { psi } => gaussian_feature_attack(&mut rng, graph, psi)?,
        AttackKind::PgdFeature { rate, steps } => pgd_feature_attack(graph, params, rate, steps, target_idx)?,
        AttackKind::DiceStructure { rate } => dice_structural_attack(&mut rng, graph, rate)?,
    })
}

fn evaluate_seed(
    config: &ExperimentConfig,
    graph: &Graph,
    splits: &DatasetSplits,
    seed: u64,
    timing: bool,
) -> anyhow::Result<SeedMetrics> {
    let training = TrainingConfig { seed, ..config.training.clone() };
    let params = train(graph, splits, &training).with_context(|| format!("training seed {seed}"))?;
    let test = &splits.test;
    let labels = graph.labels();

    let attack = AttackBudget { seed: derive_seed(seed, ATTACK_STREAM), ..config.attack };
    let attacked = run_attack(graph, &params, &attack, test)?.perturbed;

    let crf = CrfConfig { seed: derive_seed(seed, CRF_STREAM), ..config.crf.clone() };
    let counted = CountingClassifier::new(&params);

    let clean_vanilla = forward(&params, graph)?;
    let atk_vanilla = forward(&params, &attacked)?;

    let plan = SmoothingPlan::new(&crf, graph)?;
    let clean_smoothed = smooth_parallel(&plan, &counted, graph)?;
    let expected_calls = model_call_count(crf.num_samples as u64, crf.num_iterations as u32)?;
    ensure!(
        counted.calls() == expected_calls,
        "clean smoothing made {} model calls, expected {expected_calls}",
        counted.calls()
    );

    counted.reset();
    let plan = SmoothingPlan::new(&crf, &attacked)?;
    let start = Instant::now();
    let atk_smoothed = smooth_parallel(&plan, &counted, &attacked)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let model_calls = counted.calls();
    ensure!(
        model_calls == expected_calls,
        "attacked smoothing made {model_calls} model calls, expected {expected_calls}"
    );

    let flips_vanilla = FlipCounts::new(&clean_vanilla, &atk_vanilla, labels, test)?;
    let flips_smoothed = FlipCounts::new(&clean_smoothed, &atk_smoothed, labels, test)?;
    let row = SeedMetrics {
        seed,
        clean_acc_vanilla: accuracy(&clean_vanilla, labels, test)?,
        clean_acc_smoothed: accuracy(&clean_smoothed, labels, test)?,
        atk_acc_vanilla: accuracy(&atk_vanilla, labels, test)?,
        atk_acc_smoothed: accuracy(&atk_smoothed, labels, test)?,
        asr_vanilla: flips_vanilla.success_rate(),
        asr_smoothed: flips_smoothed.success_rate(),
        model_calls,
        smooth_wall_ms: timing.then_some(wall),
        recovered_vanilla: flips_vanilla.recovered_fraction(),
        recovered_smoothed: flips_smoothed.recovered_fraction(),
    };
    check_accounting(&row)?;
    Ok(row)
}

/// `atk_acc = clean_acc · (1 − ASR) + recovered` for both model variants.
pub fn check_accounting(row: &SeedMetrics) -> anyhow::Result<()> {
    let pairs = [
        ("vanilla", row.atk_acc_vanilla, row.clean_acc_vanilla, row.asr_vanilla, row.recovered_vanilla),
        ("smoothed", row.atk_acc_smoothed, row.clean_acc_smoothed, row.asr_smoothed, row.recovered_smoothed),
    ];
    for (name, atk, clean, asr, recovered) in pairs {
        let rhs = clean * (1.0 - asr) + recovered;
        if (atk - rhs).abs() > 1e-12 {
            bail!("seed {}: {name} accuracy identity violated ({atk} vs {rhs})", row.seed);
        }
    }
    Ok(())
}

pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<MetricsReport> {
    config.validate()?;
    let (graph, splits) = config.load_data()?;
    ensure!(!splits.test.is_empty(), "test split is empty");
    let per_seed = with_threads(opts.threads, || {
        (0..config.num_repeats as u64)
            .into_par_iter()
            .map(|i| evaluate_seed(config, &graph, &splits, config.base_seed + i, opts.timing))
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let aggregate = Aggregates::from_rows(&per_seed);
    Ok(MetricsReport { config: config.clone(), per_seed, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec {
                num_nodes: 60,
                feature_dim: 4,
                ..SyntheticSpec::default()
            }),
            training: TrainingConfig { epochs: 30, ..TrainingConfig::default() },
            attack: AttackBudget { kind: AttackKind::GaussianNoise { psi: 0.5 }, seed: 0 },
            crf: CrfConfig { num_samples: 2, num_iterations: 1, ..CrfConfig::default() },
            num_repeats: 2,
            base_seed: 3,
            output: None,
        }
    }

    #[test]
    fn sigma_one_leaves_predictions_alone() {
        let mut cfg = small_config();
        cfg.crf.sigma = 1.0;
        for kind in [
            AttackKind::GaussianNoise { psi: 0.5 },
            AttackKind::PgdFeature { rate: 0.15, steps: 5 },
            AttackKind::DiceStructure { rate: 0.1 },
        ] {
            cfg.attack.kind = kind;
            if matches!(kind, AttackKind::DiceStructure { .. }) {
                cfg.crf.mode = robust_crf_core::crf::SimilarityMode::BinomialPrior;
            }
            let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
            for r in &report.per_seed {
                assert_eq!(r.clean_acc_smoothed, r.clean_acc_vanilla);
                assert_eq!(r.atk_acc_smoothed, r.atk_acc_vanilla);
                assert_eq!(r.asr_smoothed, r.asr_vanilla);
            }
        }
    }

    #[test]
    fn single_repeat_has_zero_spread_and_aggregates_recompute() {
        let mut cfg = small_config();
        cfg.num_repeats = 1;
        let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(report.aggregate.clean_acc_vanilla.std, 0.0);
        assert_eq!(report.aggregate.atk_acc_smoothed.std, 0.0);

        let report = run_experiment(&small_config(), &RunOptions::default()).unwrap();
        assert_eq!(report.per_seed.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
        let rows = &report.per_seed;
        let mean = (rows[0].atk_acc_vanilla + rows[1].atk_acc_vanilla) / 2.0;
        assert!((report.aggregate.atk_acc_vanilla.mean - mean).abs() <= 1e-12);
        assert!(report.to_csv().starts_with(CSV_HEADER));
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = small_config();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        let bad = json.replace("\"num_repeats\":2", "\"num_repeats\":0");
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).unwrap().validate().is_err());
    }
}
