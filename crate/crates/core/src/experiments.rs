//! The three published simulation setups.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::matching::error_norm;
use crate::model::{GhMix, RoutingMatrix};
use crate::pipeline::{estimate_gh, EstimateReport, MgfSource, PipelineConfig};
use crate::simulate::sample_paths;
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Expt1,
    Expt2,
    Expt3,
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expt1" => Ok(Experiment::Expt1),
            "expt2" => Ok(Experiment::Expt2),
            "expt3" => Ok(Experiment::Expt3),
            other => Err(Error::Parse(format!(
                "unknown experiment {other:?} (expected expt1, expt2 or expt3)"
            ))),
        }
    }
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Expt1 => "expt1",
            Experiment::Expt2 => "expt2",
            Experiment::Expt3 => "expt3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub experiment: Experiment,
    pub matrix: RoutingMatrix,
    /// Rates of the simulated links.
    pub rates: Vec<f64>,
    /// Full weight vectors of the simulated links.
    pub weights: Vec<Vec<f64>>,
    /// Indices into `rates` of stages left out of estimation.
    pub dropped: Vec<usize>,
    /// Evaluation points from the published runs, where given.
    pub published_tau: Option<Vec<Vec<f64>>>,
}

impl Setup {
    pub fn estimation_rates(&self) -> Vec<f64> {
        self.rates
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.dropped.contains(i))
            .map(|(_, &r)| r)
            .collect()
    }

    pub fn mixes(&self) -> Result<Vec<GhMix>> {
        self.weights
            .iter()
            .map(|w| GhMix::new(self.rates.clone(), w.clone()))
            .collect()
    }

    /// Truth on the estimated stages; weight of dropped stages is moved to
    /// the last stage so each vector still sums to one.
    pub fn estimation_truth(&self) -> Vec<Vec<f64>> {
        self.weights
            .iter()
            .map(|w| {
                let mut kept: Vec<f64> = w
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !self.dropped.contains(i))
                    .map(|(_, &v)| v)
                    .collect();
                let moved: f64 = self.dropped.iter().map(|&i| w[i]).sum();
                *kept.last_mut().expect("at least one stage") += moved;
                kept
            })
            .collect()
    }

    /// Re-inserts zeros for dropped stages.
    pub fn expand(&self, estimate: &[f64]) -> Vec<f64> {
        let mut it = estimate.iter();
        (0..self.rates.len())
            .map(|i| {
                if self.dropped.contains(&i) {
                    0.0
                } else {
                    *it.next().expect("estimate length")
                }
            })
            .collect()
    }
}

fn two_path_tree() -> RoutingMatrix {
    RoutingMatrix::new(vec![vec![1, 1, 0], vec![1, 0, 1]]).expect("valid matrix")
}

pub fn setup(experiment: Experiment) -> Setup {
    match experiment {
        Experiment::Expt1 => Setup {
            experiment,
            matrix: two_path_tree(),
            rates: vec![5.0, 3.0, 1.0],
            weights: vec![
                vec![0.17, 0.80, 0.03],
                vec![0.13, 0.47, 0.40],
                vec![0.80, 0.15, 0.05],
            ],
            dropped: Vec::new(),
            published_tau: Some(vec![
                vec![1.9857, 2.3782, 0.3581, 8.8619],
                vec![0.0842, 0.0870, 0.0305, 0.0344],
            ]),
        },
        // The published weights of the fourth stage are rounded; they are
        // completed so that each vector sums to one.
        Experiment::Expt2 => Setup {
            experiment,
            matrix: two_path_tree(),
            rates: vec![5.0, 4.0, 0.005, 1.0],
            weights: vec![
                vec![0.71, 0.20, 0.0010, 0.089],
                vec![0.41, 0.17, 0.0015, 0.4185],
                vec![0.15, 0.80, 0.0002, 0.0498],
            ],
            dropped: vec![2],
            published_tau: None,
        },
        Experiment::Expt3 => Setup {
            experiment,
            matrix: RoutingMatrix::new(vec![
                vec![1, 1, 0, 0],
                vec![1, 0, 1, 0],
                vec![0, 1, 0, 1],
            ])
            .expect("valid matrix"),
            rates: vec![5.0, 3.0, 1.0],
            weights: vec![
                vec![0.34, 0.26, 0.40],
                vec![0.46, 0.49, 0.05],
                vec![0.12, 0.65, 0.23],
                vec![0.71, 0.19, 0.10],
            ],
            dropped: Vec::new(),
            published_tau: None,
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub samples: Option<usize>,
    pub actual: Vec<Vec<f64>>,
    /// Estimated full weight vectors; `None` for unmatched links.
    pub estimated: Vec<Option<Vec<f64>>>,
    pub error_norm: Option<f64>,
    pub report: EstimateReport,
}

impl ExperimentReport {
    /// Side-by-side table with two-decimal rounding.
    pub fn table(&self) -> String {
        let k = self.actual.first().map_or(0, Vec::len);
        let mut s = String::new();
        let head: Vec<String> = (1..=k).map(|i| format!("w{i}")).collect();
        let est: Vec<String> = (1..=k).map(|i| format!("w{i}^")).collect();
        let _ = writeln!(s, "link | {} | {}", head.join(" "), est.join(" "));
        for (j, a) in self.actual.iter().enumerate() {
            let actual: Vec<String> = a.iter().map(|v| format!("{v:.2}")).collect();
            let estimated = match &self.estimated[j] {
                Some(e) => e.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "),
                None => "unmatched".into(),
            };
            let _ = writeln!(s, "{:>4} | {} | {}", j + 1, actual.join(" "), estimated);
        }
        match self.error_norm {
            Some(e) => {
                let _ = writeln!(s, "error norm: {e:.4}");
            }
            None => {
                let _ = writeln!(s, "error norm: n/a");
            }
        }
        s
    }
}

/// Simulates `samples` delays per path (or uses exact MGFs when `None`) and
/// runs the estimator on the published setup.
pub fn run_experiment(
    experiment: Experiment,
    samples: Option<usize>,
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let s = setup(experiment);
    let mixes = s.mixes()?;
    let lambda = s.estimation_rates();
    let report = match samples {
        Some(l) => {
            let set = sample_paths(&s.matrix, &mixes, l, cfg.seed)?;
            let map = set
                .paths
                .into_iter()
                .map(|p| (p.path, p.values))
                .collect();
            estimate_gh(&s.matrix, &lambda, MgfSource::Samples(&map), cfg, None)?
        }
        None => {
            let est_mixes: Vec<GhMix> = s
                .estimation_truth()
                .into_iter()
                .map(|w| GhMix::new(lambda.clone(), w))
                .collect::<Result<_>>()?;
            estimate_gh(&s.matrix, &lambda, MgfSource::ExactGh(&est_mixes), cfg, None)?
        }
    };
    let estimated: Vec<Option<Vec<f64>>> = report
        .result
        .weights(s.matrix.num_links())
        .into_iter()
        .map(|w| w.map(|w| s.expand(&w)))
        .collect();
    let error_norm = if estimated.iter().all(Option::is_some) {
        let est: Vec<Vec<f64>> = estimated.iter().flatten().cloned().collect();
        Some(error_norm(&est, &s.weights))
    } else {
        None
    };
    Ok(ExperimentReport {
        experiment,
        samples,
        actual: s.weights.clone(),
        estimated,
        error_norm,
        report,
    })
}
