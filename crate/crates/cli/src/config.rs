//! Scenario files are TOML documents:
//!
//! ```toml
//! capacities = [2.0, 2.0, 10.0, 10.0]   # bytes/sec, one entry per server
//! d = 2                                 # servers sampled per arrival
//! lambda_grid = [0.5, 1.0, 2.0]         # arrival rates (jobs/sec)
//! runs = 10                             # independent replications
//! busy_periods_per_run = 100000         # regeneration cycles per replication
//! seed = 1
//!
//! [distribution]
//! family = "hyperexponential"           # or exponential / weibull / deterministic
//! weights = [0.3333333333333333, 0.6666666666666666]
//! rates = [0.5, 2.0]
//! ```
//!
//! Parameters per family: `exponential` takes `rate`, `weibull` takes
//! `shape` and `scale` (survival exp(-(x/scale)^shape)), `deterministic`
//! takes `value`. `d`, `runs`, `busy_periods_per_run` and `seed` may be
//! omitted and default to 2, 10, 100000 and 1. Unknown keys are rejected.

use std::path::Path;

use sq2lt::model::{validate_scenario, RawScenario, ScenarioConfig};

use crate::error::CliError;

/// Scenario files shipped inside the binary.
pub const BUNDLED: [(&str, &str); 3] = [
    ("scenario1.cfg", include_str!("../scenarios/scenario1.cfg")),
    ("scenario2.cfg", include_str!("../scenarios/scenario2.cfg")),
    ("scenario3.cfg", include_str!("../scenarios/scenario3.cfg")),
];

/// Text of a bundled scenario, looked up with or without the `.cfg` suffix.
pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".cfg").unwrap_or(name);
    BUNDLED
        .iter()
        .find(|(file, _)| file.strip_suffix(".cfg") == Some(stem))
        .map(|(_, text)| *text)
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[line_start..].chars().count() + 1)
}

/// Parse without validating.
pub fn parse_raw(text: &str, origin: &str) -> Result<RawScenario, CliError> {
    toml::from_str::<RawScenario>(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map_or((1, 1), |span| line_column(text, span.start));
        CliError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })
}

pub fn parse_config_str(text: &str, origin: &str) -> Result<ScenarioConfig, CliError> {
    Ok(validate_scenario(parse_raw(text, origin)?)?)
}

/// Read and validate a scenario file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = read_config_text(path)?;
    parse_config_str(&text, &path.display().to_string())
}

/// File contents, or the bundled scenario of that name when no such file
/// exists.
pub fn read_config_text(path: &Path) -> Result<String, CliError> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let name = path.file_name().and_then(|n| n.to_str());
            let is_bare = path.parent().is_none_or(|p| p.as_os_str().is_empty());
            match name.filter(|_| is_bare).and_then(bundled) {
                Some(text) => {
                    log::info!("using bundled scenario {}", path.display());
                    Ok(text.to_string())
                }
                None => Err(CliError::FileNotFound(path.to_path_buf())),
            }
        }
        Err(e) => Err(CliError::io(format!("reading {}", path.display()), e)),
    }
}

/// Serialize a validated scenario with every field explicit.
pub fn emit_config(config: &ScenarioConfig) -> Result<String, CliError> {
    toml::to_string(&config.to_raw()).map_err(|e| CliError::Encode(e.to_string()))
}
