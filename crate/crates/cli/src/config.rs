//! Layered run configuration: built-in defaults, then a `key = value` file,
//! then command-line flags. Later layers win; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use envelope_core::SolverConfig;
use serde::Serialize;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ENVELOPE_OUT_DIR";

const KEYS: &[&str] = &[
    "lambda",
    "radius",
    "radii",
    "radius_range",
    "lambdas",
    "n",
    "det",
    "samples",
    "seed",
    "out_dir",
    "format",
    "bits",
    "kkt_tol",
    "theta_grid_size",
    "max_atoms",
    "merge_eps",
    "max_iterations",
    "gradient_tol",
    "improvement_tol",
    "insertion_weight",
    "warm_start",
    "radial_nodes",
    "angular_nodes",
    "v_max",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Raw `key → value` settings, in override order.
#[derive(Debug, Default, Clone)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut out = Settings::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if out.0.contains_key(key) {
                return Err(CliError::Validation(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
            out.set(key, value.trim())
                .map_err(|e| CliError::Validation(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Validation(format!("unknown key `{key}`")));
        }
        self.0.insert(key, value.into());
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("override `{pair}` is not of the form KEY=VALUE")))?;
        self.set(key, value.trim())
    }

    pub fn merge(&mut self, other: Settings) {
        self.0.extend(other.0);
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.0
            .get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|_| CliError::Validation(format!("invalid value for `{key}`: `{raw}`")))
            })
            .transpose()
    }

    fn get_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let Some(raw) = self.0.get(key) else {
            return Ok(Vec::new());
        };
        raw.split(',')
            .map(|item| {
                item.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Validation(format!("invalid value for `{key}`: `{}`", item.trim())))
            })
            .collect()
    }
}

/// Fully resolved parameters; serialized verbatim as the config echo.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub lambda: Option<f64>,
    pub radius: Option<f64>,
    pub radii: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub det: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub distribution: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub format: Format,
    pub bits: bool,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn resolve(command: &str, default_format: Format, s: &Settings) -> Result<Self, CliError> {
        let mut solver = SolverConfig::default();
        macro_rules! override_field {
            ($($field:ident).+ = $key:literal) => {
                if let Some(v) = s.get($key)? {
                    solver.$($field).+ = v;
                }
            };
        }
        override_field!(kkt_tol = "kkt_tol");
        override_field!(theta_grid_size = "theta_grid_size");
        override_field!(max_atoms = "max_atoms");
        override_field!(merge_eps = "merge_eps");
        override_field!(max_iterations = "max_iterations");
        override_field!(gradient_tol = "gradient_tol");
        override_field!(improvement_tol = "improvement_tol");
        override_field!(insertion_weight = "insertion_weight");
        override_field!(warm_start = "warm_start");
        override_field!(quadrature.radial_nodes = "radial_nodes");
        override_field!(quadrature.angular_nodes = "angular_nodes");
        if let Some(v) = s.get::<f64>("v_max")? {
            solver.quadrature.v_max = Some(v);
        }
        solver.validate().map_err(|e| CliError::Validation(e.to_string()))?;

        let mut radii = s.get_list("radii")?;
        if let Some(range) = s.0.get("radius_range") {
            if !radii.is_empty() {
                return Err(CliError::Validation("`radii` and `radius_range` are mutually exclusive".into()));
            }
            radii = parse_range(range)?;
        }
        let format = match s.0.get("format").map(String::as_str) {
            None => default_format,
            Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            Some(other) => {
                return Err(CliError::Validation(format!(
                    "invalid value for `format`: `{other}` (expected json or csv)"
                )))
            }
        };
        let out_dir = match s.0.get("out_dir") {
            Some(dir) => PathBuf::from(dir),
            None => std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from),
        };
        let samples = s.get("samples")?.unwrap_or(200_000);
        let n = s.get("n")?.unwrap_or(2);
        if !(2..=3).contains(&n) {
            return Err(CliError::Validation(format!("invalid value for `n`: {n} (supported: 2, 3)")));
        }

        Ok(Self {
            command: command.to_owned(),
            lambda: s.get("lambda")?,
            radius: s.get("radius")?,
            radii,
            lambdas: s.get_list("lambdas")?,
            n,
            det: s.get("det")?,
            samples,
            seed: s.get("seed")?.unwrap_or(0),
            distribution: None,
            out_dir,
            format,
            bits: s.get("bits")?.unwrap_or(false),
            solver,
        })
    }

    pub fn require_lambda(&self) -> Result<f64, CliError> {
        self.lambda
            .ok_or_else(|| CliError::Validation("missing required parameter `lambda`".into()))
    }

    pub fn require_radius(&self) -> Result<f64, CliError> {
        self.radius
            .ok_or_else(|| CliError::Validation("missing required parameter `radius`".into()))
    }

    /// `radii` if given, otherwise the single `radius`.
    pub fn radius_list(&self) -> Result<Vec<f64>, CliError> {
        if !self.radii.is_empty() {
            return Ok(self.radii.clone());
        }
        self.radius
            .map(|r| vec![r])
            .ok_or_else(|| CliError::Validation("missing required parameter `radii` (or `radius`)".into()))
    }
}

/// `start:stop:count`, evenly spaced and inclusive.
fn parse_range(raw: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Validation(format!("invalid value for `radius_range`: `{raw}` (expected start:stop:count)"));
    let parts: Vec<&str> = raw.split(':').map(str::trim).collect();
    let [a, b, k] = parts[..] else { return Err(bad()) };
    let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    let k: usize = k.parse().map_err(|_| bad())?;
    if k == 0 || !(a.is_finite() && b.is_finite()) || (k > 1 && b <= a) {
        return Err(bad());
    }
    if k == 1 {
        return Ok(vec![a]);
    }
    Ok((0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect())
}
