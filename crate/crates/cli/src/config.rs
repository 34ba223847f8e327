//! Experiment configuration: flat sections of `key = value` pairs (TOML
//! syntax restricted to scalars and flat arrays).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Samples used by the domain verifier unless the config overrides it.
pub const DEFAULT_VERIFY_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyDomain,
    PenalizeRate,
    Converge,
    Value,
    HjbCheck,
    Dpp,
    Support,
    Submartingale,
}

impl ExperimentKind {
    pub const ALL: [(&'static str, ExperimentKind); 8] = [
        ("verify-domain", ExperimentKind::VerifyDomain),
        ("penalize-rate", ExperimentKind::PenalizeRate),
        ("converge", ExperimentKind::Converge),
        ("value", ExperimentKind::Value),
        ("hjb-check", ExperimentKind::HjbCheck),
        ("dpp", ExperimentKind::Dpp),
        ("support", ExperimentKind::Support),
        ("submartingale", ExperimentKind::Submartingale),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, k)| *k == self).map(|(n, _)| *n).expect("listed")
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL.iter().find(|(n, _)| *n == s).map(|(_, k)| *k).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|(n, _)| *n).collect();
            invalid("experiment", format!("unknown experiment kind `{s}` (expected one of {})", names.join(", ")))
        })
    }

    /// Whether the experiment simulates paths and so needs a verified domain.
    pub fn simulates(self) -> bool {
        !matches!(self, ExperimentKind::VerifyDomain)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub kind: String,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub notch: Option<Vec<f64>>,
    pub outer_center: Option<Vec<f64>>,
    pub outer_radius: Option<f64>,
    pub inner_center: Option<Vec<f64>>,
    pub inner_radius: Option<f64>,
    pub r0: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub verify_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    /// `"constant"` (default) or `"linear"` (drift `b_u - kappa x`).
    pub model: Option<String>,
    /// One entry (a multiple of the identity) or `d * d` entries, row major.
    pub sigma: Option<Vec<f64>>,
    pub drift: Option<Vec<f64>>,
    /// One drift per control, concatenated (`n_controls * d` entries).
    pub drifts: Option<Vec<f64>>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// `"zero"`, `"unit"`, `"x1-squared"` or `"quadratic-cost"`.
    pub running: Option<String>,
    /// Weight of `|b_u|^2` in the quadratic cost.
    pub control_weight: Option<f64>,
    /// `"zero"`, `"last-coordinate"` or `"quadratic"`.
    pub terminal: Option<String>,
    /// Discount rate; selects the infinite-horizon problem.
    pub discount: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub n_steps: Option<usize>,
    pub dx: Option<f64>,
    pub dt: Option<f64>,
    pub quadrature: Option<String>,
    pub tie_break: Option<String>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenalizationSection {
    pub levels: Vec<f64>,
    /// Moment used in the `p_norm` column.
    pub p: Option<f64>,
    /// `"split"` (default) or `"explicit"`.
    pub scheme: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub x0: Option<Vec<f64>>,
    pub t: Option<f64>,
    pub tau: Option<f64>,
    pub t1: Option<f64>,
    pub n_controls: Option<usize>,
    pub hdot_bound: Option<f64>,
    pub times: Option<Vec<f64>>,
    /// Test function for the submartingale experiment: `"norm-squared"`,
    /// `"neg-norm-squared"`, `"constant"` or `"first-coordinate"`.
    pub function: Option<String>,
    /// Expected verdict (`"pass"` or `"fail"`).
    pub expect: Option<String>,
    pub branches: Option<usize>,
    pub max_coverage: Option<f64>,
    /// `"reflected"` (default) or `"penalized"`.
    pub dynamics: Option<String>,
    pub penalty: Option<f64>,
    /// Number of reference trajectories to dump as CSV.
    pub trajectories: Option<usize>,
    pub eps: Option<f64>,
}

/// The configuration file as written.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub domain: Option<DomainSection>,
    pub coefficients: Option<CoefficientsSection>,
    pub cost: Option<CostSection>,
    pub grid: Option<GridSection>,
    #[serde(rename = "monte-carlo")]
    pub monte_carlo: Option<MonteCarloSection>,
    pub penalization: Option<PenalizationSection>,
    pub query: Option<QuerySection>,
}

/// Validated configuration with the seed and output directory resolved.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config: ExperimentConfig,
}

pub fn invalid(key: &str, reason: impl Into<String>) -> CliError {
    CliError::Config { key: key.to_string(), reason: reason.into() }
}

fn missing(key: &str) -> CliError {
    invalid(key, "missing")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let key = unknown_key(e.message()).unwrap_or_else(|| "<file>".to_string());
            invalid(&key, e.to_string().trim().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn kind(&self) -> Result<ExperimentKind, CliError> {
        ExperimentKind::parse(&self.experiment)
    }

    pub fn domain(&self) -> Result<&DomainSection, CliError> {
        self.domain.as_ref().ok_or_else(|| missing("domain"))
    }

    pub fn grid(&self) -> Result<&GridSection, CliError> {
        self.grid.as_ref().ok_or_else(|| missing("grid"))
    }

    pub fn monte_carlo(&self) -> Result<&MonteCarloSection, CliError> {
        self.monte_carlo.as_ref().ok_or_else(|| missing("monte-carlo"))
    }

    pub fn penalization(&self) -> Result<&PenalizationSection, CliError> {
        self.penalization.as_ref().ok_or_else(|| missing("penalization"))
    }

    pub fn query(&self) -> QuerySection {
        self.query.clone().unwrap_or_default()
    }

    /// Checks the sections each experiment needs and resolves the seed with
    /// precedence `flag > env > [monte-carlo] seed > top-level seed > 0`.
    pub fn resolve(
        mut self,
        seed_flag: Option<u64>,
        seed_env: Option<&str>,
        out_dir_flag: Option<PathBuf>,
    ) -> Result<Resolved, CliError> {
        let kind = self.kind()?;
        self.domain()?;
        use ExperimentKind::*;
        if matches!(kind, PenalizeRate | Converge | Value | HjbCheck | Dpp | Submartingale) {
            self.grid()?;
        }
        if matches!(kind, PenalizeRate | Converge | Dpp | Submartingale) {
            let mc = self.monte_carlo()?;
            match mc.paths {
                None => return Err(missing("monte-carlo.paths")),
                Some(0) => return Err(invalid("monte-carlo.paths", "must be at least 1")),
                _ => {}
            }
        }
        if matches!(kind, PenalizeRate | Converge) {
            let levels = &self.penalization()?.levels;
            if levels.is_empty() {
                return Err(invalid("penalization.levels", "must be nonempty"));
            }
            if levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] <= 0.0 {
                return Err(invalid("penalization.levels", "must be positive and strictly increasing"));
            }
        }
        let env_seed = match seed_env {
            Some(s) => Some(s.trim().parse::<u64>().map_err(|_| invalid("RSDE_SEED", format!("not an integer: `{s}`")))?),
            None => None,
        };
        let seed = seed_flag
            .or(env_seed)
            .or(self.monte_carlo.as_ref().and_then(|m| m.seed))
            .or(self.seed)
            .unwrap_or(0);
        self.fill_defaults(kind);
        self.seed = Some(seed);
        if let Some(mc) = self.monte_carlo.as_mut() {
            mc.seed = Some(seed);
        }
        let out_dir = out_dir_flag.or_else(|| self.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        self.out_dir = Some(out_dir.clone());
        Ok(Resolved { kind, seed, out_dir, config: self })
    }
}

impl ExperimentConfig {
    /// Writes the defaults the runner would use into the unset keys, so the
    /// resolved configuration is complete.
    fn fill_defaults(&mut self, kind: ExperimentKind) {
        fn set<T>(slot: &mut Option<T>, v: T) {
            if slot.is_none() {
                *slot = Some(v);
            }
        }
        if let Some(d) = self.domain.as_mut() {
            set(&mut d.verify_samples, DEFAULT_VERIFY_SAMPLES);
        }
        if kind == ExperimentKind::VerifyDomain {
            return;
        }
        let c = self.coefficients.get_or_insert_with(Default::default);
        set(&mut c.model, "constant".into());
        set(&mut c.sigma, vec![1.0]);
        if c.model.as_deref() == Some("linear") {
            set(&mut c.kappa, 1.0);
        }
        if let Some(g) = self.grid.as_mut() {
            set(&mut g.horizon, if kind == ExperimentKind::Submartingale { 0.1 } else { 1.0 });
            if matches!(kind, ExperimentKind::Value | ExperimentKind::HjbCheck | ExperimentKind::Dpp) {
                set(&mut g.dx, 0.1);
                set(&mut g.quadrature, "tensor".into());
                set(&mut g.tie_break, "lowest".into());
            } else {
                set(&mut g.n_steps, 1000);
            }
        }
        if matches!(kind, ExperimentKind::Value | ExperimentKind::HjbCheck | ExperimentKind::Dpp) {
            let cost = self.cost.get_or_insert_with(Default::default);
            set(&mut cost.running, "quadratic-cost".into());
            if cost.running.as_deref() == Some("quadratic-cost") {
                set(&mut cost.control_weight, 0.1);
            }
            if cost.discount.is_none() {
                set(&mut cost.terminal, "zero".into());
            }
        }
        if let Some(p) = self.penalization.as_mut() {
            set(&mut p.p, 2.0);
            set(&mut p.scheme, "split".into());
        }
    }
}

/// Pulls the offending key out of a serde message such as
/// "unknown field `foo`, expected ...".
fn unknown_key(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_string())
}
