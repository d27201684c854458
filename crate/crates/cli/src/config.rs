//! Scenario configuration files: a flat `key = value` format with `#`
//! comments. Command-line flags override file values.
//!
//! Recognized keys:
//!
//! ```text
//! name        = my_scenario          # optional label
//! covariates  = study1 | study2 | file:<path>
//! m           = 15                   # required unless covariates = file:
//! a_true      = 1.0
//! d_pattern   = 0.2,0.4,0.5,0.6,2    # groups expand evenly over m
//! beta        = 0,0                  # optional, default zeros
//! alpha       = 0.05                 # optional
//! reps        = 10000                # optional
//! seed        = 42                   # optional
//! methods     = direct,cox,t,ct,nas  # optional
//! cells       = per_area | extremes | fingerprint   # optional
//! cell_mode   = group | single       # optional
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fayherriot::{
    CellMode, CellRule, CovariateSpec, IntervalMethod, ScenarioSpec, SearchConfig,
};

use crate::ingest::read_design;

pub fn parse_methods(spec: &str) -> Result<Vec<IntervalMethod>> {
    let mut methods = Vec::new();
    for token in spec.split(',').filter(|t| !t.trim().is_empty()) {
        let m: IntervalMethod = token
            .parse()
            .map_err(|e| anyhow!("{e} (in method list '{spec}')"))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        bail!("empty method list");
    }
    Ok(methods)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{t}'"))
        })
        .collect()
}

/// Parse the flat key-value format; later duplicate keys win.
fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got '{raw}'", lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flag overrides applied on top of a scenario file.
#[derive(Debug, Default, Clone)]
pub struct ScenarioOverrides {
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub methods: Option<Vec<IntervalMethod>>,
    pub cell_mode: Option<CellMode>,
}

pub fn load_scenario(
    path: &Path,
    overrides: &ScenarioOverrides,
    search: SearchConfig,
) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    let kv = parse_kv(&text)?;
    let get = |k: &str| kv.get(k).map(|s| s.as_str());

    let covariates = match get("covariates").unwrap_or("study1") {
        "study1" => CovariateSpec::Study1,
        "study2" => CovariateSpec::Study2,
        other => {
            if let Some(file) = other.strip_prefix("file:") {
                let design_path = resolve_relative(path, file);
                CovariateSpec::Fixed(read_design(&design_path)?)
            } else {
                bail!("covariates must be study1, study2, or file:<path>, got '{other}'");
            }
        }
    };
    let m = match (&covariates, get("m")) {
        (CovariateSpec::Fixed(x), None) => x.nrows(),
        (_, Some(v)) => v.parse::<usize>().context("bad m")?,
        (_, None) => 15,
    };
    let p = covariates.p();
    let beta = match get("beta") {
        Some(v) => parse_f64_list(v)?,
        None => vec![0.0; p],
    };
    let d_pattern = match get("d_pattern") {
        Some(v) => parse_f64_list(v)?,
        None => bail!("scenario file must set d_pattern"),
    };
    let a_true = get("a_true")
        .ok_or_else(|| anyhow!("scenario file must set a_true"))?
        .parse::<f64>()
        .context("bad a_true")?;
    let alpha = overrides.alpha.unwrap_or(
        get("alpha")
            .map(|v| v.parse::<f64>())
            .transpose()
            .context("bad alpha")?
            .unwrap_or(0.05),
    );
    let n_reps = overrides.reps.unwrap_or(
        get("reps")
            .map(|v| v.parse::<usize>())
            .transpose()
            .context("bad reps")?
            .unwrap_or(10_000),
    );
    let seed = overrides.seed.unwrap_or(
        get("seed")
            .map(|v| v.parse::<u64>())
            .transpose()
            .context("bad seed")?
            .unwrap_or(42),
    );
    let methods = match &overrides.methods {
        Some(ms) => ms.clone(),
        None => parse_methods(get("methods").unwrap_or("direct,cox,t,ct,nas"))?,
    };
    let cell_rule = match get("cells") {
        Some("per_area") => CellRule::PerArea,
        Some("extremes") => CellRule::LeverageExtremes,
        Some("fingerprint") => CellRule::Study2Fingerprint,
        Some(other) => bail!("cells must be per_area, extremes, or fingerprint, got '{other}'"),
        None => match covariates {
            CovariateSpec::Study1 => CellRule::LeverageExtremes,
            CovariateSpec::Study2 => CellRule::Study2Fingerprint,
            CovariateSpec::Fixed(_) => CellRule::PerArea,
        },
    };
    let cell_mode = overrides.cell_mode.unwrap_or(match get("cell_mode") {
        Some("single") => CellMode::SingleArea,
        Some("group") | None => CellMode::GroupAverage,
        Some(other) => bail!("cell_mode must be group or single, got '{other}'"),
    });
    let name = get("name")
        .map(|s| s.to_string())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into())
        });

    let spec = ScenarioSpec {
        name,
        m,
        covariates,
        beta,
        a_true,
        d_pattern,
        n_reps,
        alpha,
        methods,
        seed,
        cell_rule,
        cell_mode,
        search,
    };
    spec.validate()?;
    Ok(spec)
}

fn resolve_relative(config: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}
