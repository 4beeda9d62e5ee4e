//! Experiment configuration: a single JSON document with dotted-path overrides.

use std::path::{Path, PathBuf};

use heatsc::{EndomorphismField, FieldDescriptor, ModelManifold, ParametrixConfig, SemiclassicalOperator};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: ModelManifold,
    pub potential: FieldDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endomorphism: Option<FieldDescriptor>,
    #[serde(default = "one")]
    pub t: f64,
    /// Upper end of the t-sweep.
    #[serde(default = "one", rename = "T", alias = "t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub hbar_grid: HbarGrid,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub expand: ExpandConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    20_240_917
}

/// Either an explicit list or `count` geometric points from `max` down to `min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HbarGrid {
    List(Vec<f64>),
    Geometric { max: f64, min: f64, count: usize },
}

impl Default for HbarGrid {
    fn default() -> Self {
        HbarGrid::Geometric {
            max: 0.5,
            min: 0.01,
            count: 16,
        }
    }
}

impl HbarGrid {
    /// Grid values in decreasing order.
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let mut v = match self {
            HbarGrid::List(v) => v.clone(),
            HbarGrid::Geometric { max, min, count } => {
                if *count == 0 || !(*min > 0.0 && max >= min) {
                    return Err(CliError::Validation(format!(
                        "geometric grid needs 0 < min <= max and count > 0, got {min}, {max}, {count}"
                    )));
                }
                if *count == 1 {
                    vec![*max]
                } else {
                    let ratio = (min / max).powf(1.0 / (*count as f64 - 1.0));
                    let mut v: Vec<f64> = (0..*count).map(|i| max * ratio.powi(i as i32)).collect();
                    v[*count - 1] = *min;
                    v
                }
            }
        };
        if v.is_empty() || v.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(CliError::Validation("hbar grid must be nonempty and positive".into()));
        }
        v.sort_by(|a, b| b.total_cmp(a));
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Fourier cutoff (Galerkin) or mode-index ceiling (closed forms).
    #[serde(default)]
    pub cutoff: Option<usize>,
    /// Number of eigenvalues written by the `oracle` command.
    #[serde(default = "default_max_count")]
    pub max_count: usize,
    /// `hbar` used by the `oracle` command.
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_max_count() -> usize {
    32
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cutoff: None,
            max_count: default_max_count(),
            hbar: 1.0,
            cache_dir: None,
        }
    }
}

/// Inputs of the explicit bound; unset geometric inputs are derived from the
/// operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default = "two")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub w0: Option<f64>,
    #[serde(default, rename = "K")]
    pub curvature_bound: Option<f64>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
}

fn two() -> f64 {
    2.0
}

fn default_alpha_grid() -> Vec<f64> {
    vec![1.5, 2.0, 3.0, 4.0]
}

fn default_delta_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            alpha: 2.0,
            delta: 1.0,
            kappa: None,
            w0: None,
            curvature_bound: None,
            alpha_grid: default_alpha_grid(),
            delta_grid: default_delta_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default = "default_fit_order")]
    pub fit_order: usize,
    /// `t hbar^2` range of the samples entering the coefficient fit.
    #[serde(default = "default_fit_window")]
    pub fit_window: [f64; 2],
    /// Number of points of the t-sweep on `[t, T]`.
    #[serde(default = "default_sweep")]
    pub t_sweep: usize,
}

fn default_fit_order() -> usize {
    2
}

fn default_fit_window() -> [f64; 2] {
    [1e-3, 1e-2]
}

fn default_sweep() -> usize {
    3
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            fit_order: default_fit_order(),
            fit_window: default_fit_window(),
            t_sweep: default_sweep(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandConfig {
    #[serde(default = "default_diagonal")]
    pub diagonal: usize,
    #[serde(default = "default_near")]
    pub near_diagonal: usize,
    /// Errors below this level everywhere are treated as exact and not fitted.
    #[serde(default = "default_floor")]
    pub noise_floor: f64,
}

fn default_diagonal() -> usize {
    8
}

fn default_near() -> usize {
    24
}

fn default_floor() -> f64 {
    1e-10
}

impl Default for ExpandConfig {
    fn default() -> Self {
        ExpandConfig {
            diagonal: default_diagonal(),
            near_diagonal: default_near(),
            noise_floor: default_floor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

impl ExperimentConfig {
    /// Reads a config file and applies `KEY=VALUE` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_value(doc, overrides)
    }

    pub fn from_value(mut doc: Value, overrides: &[String]) -> Result<Self, CliError> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(CliError::Validation(format!("t must be positive, got {}", self.t)));
        }
        if !(self.t_max >= self.t) {
            return Err(CliError::Validation(format!("T = {} must be >= t = {}", self.t_max, self.t)));
        }
        self.hbar_grid.values()?;
        self.operator()?;
        Ok(())
    }

    pub fn operator(&self) -> Result<SemiclassicalOperator, CliError> {
        let v = EndomorphismField::from_descriptor(&self.potential).map_err(invalid)?;
        let w = self
            .endomorphism
            .as_ref()
            .map(EndomorphismField::from_descriptor)
            .transpose()
            .map_err(invalid)?;
        SemiclassicalOperator::new(self.manifold.clone(), v, w).map_err(invalid)
    }
}

fn invalid(e: heatsc::Error) -> CliError {
    CliError::Validation(e.to_string())
}

/// Sets `a.b.c = value` in `doc`, creating objects along the way. The value
/// is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override '{assignment}' is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("bad override key '{key}'")));
    }
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Validation(format!("override '{key}' descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .expect("checked object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(CliError::Validation(format!("override '{key}' descends into a non-object"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "manifold": {"kind": "circle", "dim": 1, "scale": [1.0]},
            "potential": {"rank": 1, "kind": "constant", "data": {"matrix": 0.5}}
        })
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_value(base(), &[]).unwrap();
        assert_eq!(cfg.t, 1.0);
        let grid = cfg.hbar_grid.values().unwrap();
        assert_eq!(grid.len(), 16);
        assert!((grid[0] - 0.5).abs() < 1e-15 && (grid[15] - 0.01).abs() < 1e-15);
        assert_eq!(cfg.parametrix.order, 1);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = ExperimentConfig::from_value(
            base(),
            &["parametrix.N=2".into(), "hbar_grid=[0.2,0.1]".into(), "output.dir=elsewhere".into()],
        )
        .unwrap();
        assert_eq!(cfg.parametrix.order, 2);
        assert_eq!(cfg.hbar_grid.values().unwrap(), vec![0.2, 0.1]);
        assert_eq!(cfg.output.dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ExperimentConfig::from_value(base(), &["t=-1".into()]).is_err());
        assert!(ExperimentConfig::from_value(base(), &["unknown_key=1".into()]).is_err());
        assert!(ExperimentConfig::from_value(base(), &["noequals".into()]).is_err());
        assert!(ExperimentConfig::from_value(base(), &["t.x=1".into()]).is_err());
        assert!(ExperimentConfig::from_value(base(), &["hbar_grid=[]".into()]).is_err());
    }
}
