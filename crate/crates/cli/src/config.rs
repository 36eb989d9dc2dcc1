//! Experiment description: one JSON document holding the ensemble, the
//! sampling scheme, the initial state, and the Monte Carlo parameters.
//! Everything is validated here, before any computation starts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use delta_consensus::dynamics::{SamplingScheme, StateVector};
use delta_consensus::graph::{Graph, GraphFile};
use delta_consensus::switching::{FaultKind, SwitchingEnsemble};
use delta_consensus::verify::DEFAULT_TERMINAL_GAP;
use serde::Deserialize;
use sha2::{Digest, Sha256};

/// One of the three analyses an experiment can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    /// Single seeded trajectory plus the fault-free baseline, as CSV.
    Simulate,
    /// Expected transition, stationary vector, and deviation bounds.
    Bounds,
    /// Seeded ensemble statistics against the predicted consensus.
    Montecarlo,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    ensemble: EnsembleConfig,
    sampling: SamplingConfig,
    x0: Vec<f64>,
    horizon: usize,
    n_runs: usize,
    #[serde(default)]
    epsilons: Vec<f64>,
    seed: u64,
    #[serde(default)]
    analyses: Option<Vec<Analysis>>,
    #[serde(default)]
    terminal_gap_threshold: Option<f64>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

/// Either a four-graph fault scenario built from one base graph, or an
/// explicit list of graphs with their probabilities.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleConfig {
    #[serde(default)]
    scenario: Option<ScenarioConfig>,
    #[serde(default)]
    graphs: Option<Vec<GraphSource>>,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    base_index: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    base: GraphSource,
    fault: FaultConfig,
    agents: [usize; 2],
    /// Probabilities for [only first faulty, only second faulty, both
    /// faulty, fault free], summing to one.
    probs: [f64; 4],
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FaultConfig {
    Receive,
    Send,
}

impl From<FaultConfig> for FaultKind {
    fn from(value: FaultConfig) -> FaultKind {
        match value {
            FaultConfig::Receive => FaultKind::Receive,
            FaultConfig::Send => FaultKind::Send,
        }
    }
}

/// A graph given as `{"file": "path.json"}` (relative paths resolve against
/// the config file's directory) or written out as `{"inline": {...}}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GraphSource {
    File { file: PathBuf },
    Inline { inline: GraphFile },
}

impl GraphSource {
    fn load(&self, config_dir: &Path) -> Result<Graph> {
        let graph_file = match self {
            GraphSource::File { file } => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    config_dir.join(file)
                };
                let bytes = fs::read(&path)
                    .with_context(|| format!("reading graph file {}", path.display()))?;
                serde_json::from_slice::<GraphFile>(&bytes)
                    .with_context(|| format!("parsing graph file {}", path.display()))?
            }
            GraphSource::Inline { inline } => inline.clone(),
        };
        Ok(graph_file.to_graph()?)
    }
}

/// `{"h": ..., "k_bar": ...}` for sampled dynamics or `{"delta": ...}` for
/// the continuous dwell limit.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SamplingConfig {
    Sampled { h: f64, k_bar: u64 },
    Continuous { delta: f64 },
}

/// A fully validated experiment, ready to run.
pub struct Experiment {
    pub ensemble: SwitchingEnsemble,
    pub scheme: SamplingScheme,
    pub x0: StateVector,
    pub horizon: usize,
    pub n_runs: usize,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub analyses: Vec<Analysis>,
    pub terminal_gap_threshold: f64,
    pub out_dir: Option<PathBuf>,
    /// SHA-256 of the raw config bytes, hex encoded; embedded in every
    /// report for provenance.
    pub config_digest: String,
    /// Fault kind when the ensemble came from a scenario block.
    pub scenario_kind: Option<FaultKind>,
}

pub fn load(path: &Path) -> Result<Experiment> {
    let bytes =
        fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let config_digest = format!("{:x}", Sha256::digest(&bytes));
    let file: ExperimentFile = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let config_dir = path.parent().unwrap_or_else(|| Path::new("."));

    let (ensemble, scenario_kind) = build_ensemble(&file.ensemble, config_dir)?;

    let scheme = match file.sampling {
        SamplingConfig::Sampled { h, k_bar } => SamplingScheme::sampled(h, k_bar)?,
        SamplingConfig::Continuous { delta } => SamplingScheme::continuous(delta)?,
    };
    // The stability hypothesis h < 1/d_max, checked before any computation.
    ensemble.validate_scheme(&scheme)?;

    let x0 = StateVector::from_slice(&file.x0)?;
    if x0.n() != ensemble.n() {
        bail!(
            "x0 has {} entries but the ensemble has {} agents",
            x0.n(),
            ensemble.n()
        );
    }

    if file.horizon == 0 {
        bail!("horizon must be at least one dwell interval");
    }
    if file.n_runs == 0 {
        bail!("n_runs must be positive");
    }
    for &eps in &file.epsilons {
        if !(eps > 0.0) {
            bail!("exceedance levels must be positive, got {eps}");
        }
    }
    let terminal_gap_threshold = file.terminal_gap_threshold.unwrap_or(DEFAULT_TERMINAL_GAP);
    if !(terminal_gap_threshold > 0.0) {
        bail!("terminal_gap_threshold must be positive, got {terminal_gap_threshold}");
    }

    let mut analyses = file.analyses.unwrap_or_else(|| {
        vec![Analysis::Simulate, Analysis::Bounds, Analysis::Montecarlo]
    });
    analyses.dedup();
    if analyses.is_empty() {
        bail!("analyses must not be an empty list");
    }

    Ok(Experiment {
        ensemble,
        scheme,
        x0,
        horizon: file.horizon,
        n_runs: file.n_runs,
        epsilons: file.epsilons,
        seed: file.seed,
        analyses,
        terminal_gap_threshold,
        out_dir: file.out_dir,
        config_digest,
        scenario_kind,
    })
}

fn build_ensemble(
    cfg: &EnsembleConfig,
    config_dir: &Path,
) -> Result<(SwitchingEnsemble, Option<FaultKind>)> {
    match (&cfg.scenario, &cfg.graphs) {
        (Some(_), Some(_)) => {
            bail!("ensemble takes either a scenario block or an explicit graph list, not both")
        }
        (None, None) => bail!("ensemble needs a scenario block or an explicit graph list"),
        (Some(scenario), None) => {
            if cfg.probs.is_some() || cfg.base_index.is_some() {
                bail!("scenario ensembles carry their probabilities inside the scenario block");
            }
            let base = scenario.base.load(config_dir)?;
            let kind: FaultKind = scenario.fault.into();
            let ensemble = SwitchingEnsemble::scenario(
                &base,
                kind,
                (scenario.agents[0], scenario.agents[1]),
                scenario.probs,
            )?;
            Ok((ensemble, Some(kind)))
        }
        (None, Some(sources)) => {
            let probs = cfg
                .probs
                .clone()
                .context("explicit graph lists need a probs list")?;
            let base_index = cfg
                .base_index
                .context("explicit graph lists need a base_index")?;
            let graphs = sources
                .iter()
                .map(|s| s.load(config_dir))
                .collect::<Result<Vec<_>>>()?;
            let ensemble = SwitchingEnsemble::new(graphs, probs, base_index)?;
            Ok((ensemble, None))
        }
    }
}
