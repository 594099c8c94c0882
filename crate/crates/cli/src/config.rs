use std::fs;
use std::path::{Path, PathBuf};

use nrdf_core::gauss::{GaussMarkovModel, ModelDims};
use serde::Deserialize;

/// Bad input, reported with the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn field_err(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

/// Keys accepted in a `--config` JSON document. Flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub p: Option<f64>,
    #[serde(rename = "D_grid")]
    pub d_grid: Option<String>,
    pub model: Option<ModelSource>,
    #[serde(rename = "Q")]
    pub q: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub horizon: Option<usize>,
    pub burn_in: Option<usize>,
    pub memory: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelFile),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dims: ModelDims,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "N")]
    pub n: Vec<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| field_err("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| field_err("config", e))
    }
}

pub fn load_model(src: &ModelSource) -> Result<GaussMarkovModel, ConfigError> {
    let parsed;
    let file = match src {
        ModelSource::Inline(m) => m,
        ModelSource::Path(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| field_err("model", format!("{}: {e}", path.display())))?;
            parsed = serde_json::from_str::<ModelFile>(&text).map_err(|e| field_err("model", e))?;
            &parsed
        }
    };
    GaussMarkovModel::from_row_major(file.dims, &file.a, &file.b, &file.c, &file.n).map_err(|e| field_err("model", e))
}

/// `lo:step:hi` (points `lo + k step` up to `hi`), a comma list, or a single value.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, ConfigError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| field_err("D_grid", format!("'{s}' is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [lo, step, hi] => {
            let (lo, step, hi) = (num(lo)?, num(step)?, num(hi)?);
            if !(step > 0.0) || hi < lo {
                return Err(field_err("D_grid", "need step > 0 and hi >= lo"));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize;
            if count > 1_000_000 {
                return Err(field_err("D_grid", "more than a million points"));
            }
            (0..=count).map(|k| lo + k as f64 * step).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(field_err("D_grid", "expected lo:step:hi or a comma list")),
    };
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(field_err("D_grid", "points must be strictly ascending"));
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn parse_format(text: &str) -> Result<Format, ConfigError> {
    match text {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        other => Err(field_err("format", format!("'{other}' is not csv or json"))),
    }
}

pub fn require<T>(value: Option<T>, field: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| field_err(field, "missing (flag or config key)"))
}
