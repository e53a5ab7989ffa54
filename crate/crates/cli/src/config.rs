//! Experiment configuration files.
//!
//! Paths inside a config resolve relative to the config file's directory.
//! See `docs/formats.md` for the full grammar.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bice_core::estimators::DEFAULT_T_MAX;
use bice_core::fixtures::grid_input_model;
use bice_core::{
    EstimatorConfig, FlowNetwork, GridLsf, IndependentCategorical, LimitState, LinearLsfSpec, Method,
    PowerGrid, TwoTerminalLsf, WeightMode,
};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub problem: ProblemBlock,
    #[serde(default)]
    pub model: Option<toml::Table>,
    pub estimator: EstimatorBlock,
    #[serde(default)]
    pub replication: Option<ReplicationBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Linear,
    Maxflow,
    Grid,
}

#[derive(Debug, Deserialize)]
pub struct ProblemBlock {
    pub kind: ProblemKind,
    pub file: Option<PathBuf>,
    /// Inline network or case text.
    pub text: Option<String>,
    /// Load-loss threshold for grid problems.
    pub load_loss_threshold: Option<f64>,
    /// Inline linear spec keys (`threshold`, `coefficients`, `block`).
    #[serde(flatten)]
    pub inline: toml::Table,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    pub method: Method,
    pub samples_per_level: usize,
    pub delta: Option<f64>,
    pub delta_target: Option<f64>,
    pub delta_epsilon: Option<f64>,
    pub b: Option<f64>,
    pub rho: Option<f64>,
    pub t_max: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fresh_final_batch: bool,
    pub sigma_weights: Option<WeightMode>,
    /// Proposal model file for method `is`.
    pub is_model: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationBlock {
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub true_pf: Option<TruePf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TruePf {
    Value(f64),
    /// `"oracle"`.
    Keyword(String),
    Mcs { mcs: u64, #[serde(default)] seed: u64 },
    File { file: PathBuf },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
}

/// Reference failure probability source after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthSource {
    Value(f64),
    Oracle,
    Mcs { samples: u64, seed: u64 },
}

pub enum Problem {
    Linear(LinearLsfSpec),
    MaxFlow(TwoTerminalLsf),
    Grid(GridLsf),
}

impl Problem {
    pub fn lsf(&self) -> &dyn LimitState {
        match self {
            Problem::Linear(s) => s,
            Problem::MaxFlow(n) => n,
            Problem::Grid(g) => g,
        }
    }
}

pub struct Replication {
    pub reps: usize,
    pub base_seed: u64,
    pub truth: Option<TruthSource>,
}

/// A loaded and validated experiment.
pub struct Experiment {
    pub problem: Problem,
    pub input: IndependentCategorical,
    pub estimator: EstimatorConfig,
    pub is_model: Option<IndependentCategorical>,
    pub replication: Option<Replication>,
    pub output_dir: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let raw: RawConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(raw, base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_raw(raw: RawConfig, base: &Path) -> Result<Self> {
        let problem = load_problem(&raw.problem, base)?;
        let input = load_model(raw.model.as_ref(), &problem, base)?;
        let n = problem.lsf().n_dims();
        if input.n_dims() != n {
            bail!("model has {} dimensions but the problem has {n}", input.n_dims());
        }
        check_labels(&problem, &input)?;

        let est = &raw.estimator;
        let mut config = EstimatorConfig::new(est.method, est.samples_per_level);
        if let Some(d) = est.delta {
            config = config.with_delta(d);
        }
        if let Some(d) = est.delta_target {
            config.delta_target = d;
        }
        if let Some(d) = est.delta_epsilon {
            config.delta_epsilon = d;
        }
        if let Some(b) = est.b {
            config = config.with_prior_b(b);
        }
        config.rho = est.rho.unwrap_or(config.rho);
        config.t_max = est.t_max.unwrap_or(DEFAULT_T_MAX);
        config.seed = est.seed;
        config.fresh_final_batch = est.fresh_final_batch;
        config.sigma_weights = est.sigma_weights;
        config.validate()?;

        let is_model = match (&est.is_model, est.method) {
            (Some(p), _) => {
                let q = IndependentCategorical::from_toml_str(&read(&base.join(p))?)
                    .with_context(|| format!("invalid proposal model {}", base.join(p).display()))?;
                if !q.same_shape(&input) {
                    bail!("proposal model does not match the input model's dimensions and labels");
                }
                Some(q)
            }
            (None, Method::Is) => bail!("method `is` needs `estimator.is_model`"),
            (None, _) => None,
        };

        let replication = raw
            .replication
            .map(|r| -> Result<Replication> {
                if r.reps < 2 {
                    bail!("replication.reps must be at least 2");
                }
                let truth = r.true_pf.map(|t| truth_source(t, base)).transpose()?;
                Ok(Replication { reps: r.reps, base_seed: r.base_seed, truth })
            })
            .transpose()?;

        Ok(Experiment {
            problem,
            input,
            estimator: config,
            is_model,
            replication,
            output_dir: raw.output.dir.map(|d| base.join(d)),
        })
    }
}

fn truth_source(t: TruePf, base: &Path) -> Result<TruthSource> {
    Ok(match t {
        TruePf::Value(v) if v > 0.0 && v <= 1.0 => TruthSource::Value(v),
        TruePf::Value(v) => bail!("replication.true_pf = {v} must lie in (0, 1]"),
        TruePf::Keyword(k) if k == "oracle" => TruthSource::Oracle,
        TruePf::Keyword(k) => bail!("replication.true_pf: unknown keyword `{k}` (expected \"oracle\")"),
        TruePf::Mcs { mcs, seed } if mcs > 0 => TruthSource::Mcs { samples: mcs, seed },
        TruePf::Mcs { .. } => bail!("replication.true_pf.mcs must be positive"),
        TruePf::File { file } => {
            let path = base.join(file);
            let text = read(&path)?;
            let v: f64 = text
                .split_whitespace()
                .next()
                .and_then(|s| s.parse().ok())
                .with_context(|| format!("{} does not start with a number", path.display()))?;
            if !(v > 0.0 && v <= 1.0) {
                bail!("truth file {} holds {v}, outside (0, 1]", path.display());
            }
            TruthSource::Value(v)
        }
    })
}

fn problem_text(block: &ProblemBlock, base: &Path) -> Result<String> {
    match (&block.file, &block.text) {
        (Some(f), None) => read(&base.join(f)),
        (None, Some(t)) => Ok(t.clone()),
        (Some(_), Some(_)) => bail!("problem: give either `file` or `text`, not both"),
        (None, None) => bail!("problem: `file` or `text` is required"),
    }
}

fn load_problem(block: &ProblemBlock, base: &Path) -> Result<Problem> {
    if block.kind != ProblemKind::Grid && block.load_loss_threshold.is_some() {
        bail!("problem.load_loss_threshold applies to grid problems only");
    }
    if block.kind != ProblemKind::Linear && !block.inline.is_empty() {
        let keys: Vec<&String> = block.inline.keys().collect();
        bail!("problem: unexpected keys {keys:?}");
    }
    Ok(match block.kind {
        ProblemKind::Linear => {
            let text = if block.inline.is_empty() {
                problem_text(block, base)?
            } else {
                if block.file.is_some() || block.text.is_some() {
                    bail!("problem: inline linear keys cannot be combined with `file` or `text`");
                }
                toml::to_string(&block.inline)?
            };
            Problem::Linear(LinearLsfSpec::from_toml_str(&text)?)
        }
        ProblemKind::Maxflow => {
            Problem::MaxFlow(TwoTerminalLsf::new(FlowNetwork::parse(&problem_text(block, base)?)?))
        }
        ProblemKind::Grid => {
            let mut lsf = GridLsf::new(PowerGrid::parse(&problem_text(block, base)?)?);
            if let Some(t) = block.load_loss_threshold {
                if !(t > 0.0 && t <= 1.0) {
                    bail!("problem.load_loss_threshold = {t} must lie in (0, 1]");
                }
                lsf.threshold = t;
            }
            Problem::Grid(lsf)
        }
    })
}

fn load_model(
    model: Option<&toml::Table>,
    problem: &Problem,
    base: &Path,
) -> Result<IndependentCategorical> {
    let Some(table) = model else {
        return match problem {
            Problem::Grid(g) => Ok(grid_input_model(g.grid.n_branches())?),
            _ => bail!("a [model] block is required for this problem kind"),
        };
    };
    let text = match table.get("file") {
        Some(toml::Value::String(f)) => {
            if table.len() > 1 {
                bail!("model: `file` cannot be combined with inline keys");
            }
            let path = base.join(f);
            return IndependentCategorical::from_toml_str(&read(&path)?)
                .with_context(|| format!("invalid model file {}", path.display()));
        }
        Some(_) => bail!("model.file must be a string"),
        None => toml::to_string(table)?,
    };
    Ok(IndependentCategorical::from_toml_str(&text)?)
}

/// Every label the model can produce must be meaningful to the problem.
fn check_labels(problem: &Problem, input: &IndependentCategorical) -> Result<()> {
    match problem {
        Problem::Linear(_) => {}
        Problem::MaxFlow(lsf) => {
            for (d, edge) in lsf.network.edges.iter().enumerate() {
                for &l in input.labels(d) {
                    if edge.capacity(l).is_none() {
                        bail!("model dimension {} has label {l}, which edge {} does not define", d + 1, d + 1);
                    }
                }
            }
        }
        Problem::Grid(_) => {
            for d in 0..input.n_dims() {
                if let Some(l) = input.labels(d).iter().find(|&&l| l != 0.0 && l != 1.0) {
                    bail!("model dimension {} has label {l}; branch states are 0 (failed) or 1", d + 1);
                }
            }
        }
    }
    Ok(())
}
