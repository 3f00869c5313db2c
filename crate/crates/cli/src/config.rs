//! Run configuration: a TOML file, then dotted `key=value` overrides, then
//! the dedicated flags. The result is validated before any work starts.

use std::fs;
use std::path::Path;

use fof_core::tracker::{Ablation, TrackerConfig};
use toml::{Table, Value};

use crate::CliError;

/// Parses a right-hand side as a TOML literal, falling back to a bare string
/// so that `kind=hog` works without quotes.
fn literal(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn split_assignment(spec: &str) -> Result<(&str, &str), CliError> {
    spec.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::Config(format!("expected key=value, got `{spec}`")))
}

const SOLVER_KEYS: [&str; 8] = ["lambda", "gamma", "mu0", "mu_max", "rho", "admm_iters", "nag_iters", "nag_step"];

/// Solver parameters may be given without their `solver.` prefix.
pub fn canonical_key(key: &str) -> String {
    if SOLVER_KEYS.contains(&key) {
        format!("solver.{key}")
    } else {
        key.to_string()
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or(key);
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn to_table(cfg: &TrackerConfig) -> Result<Table, CliError> {
    Table::try_from(cfg).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
}

fn from_table(table: Table) -> Result<TrackerConfig, CliError> {
    let cfg: TrackerConfig = Value::Table(table).try_into().map_err(|e| CliError::Config(format!("{e}")))?;
    Ok(cfg)
}

/// Applies `key=value` overrides to `cfg`. Unknown keys are rejected.
pub fn apply_overrides(cfg: &TrackerConfig, sets: &[String]) -> Result<TrackerConfig, CliError> {
    if sets.is_empty() {
        return Ok(cfg.clone());
    }
    let mut table = to_table(cfg)?;
    for spec in sets {
        let (key, raw) = split_assignment(spec)?;
        set_path(&mut table, &canonical_key(key), literal(raw))?;
    }
    from_table(table)
}

pub fn load_file(path: &Path) -> Result<TrackerConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Options shared by every subcommand that runs the tracker.
pub struct Layered<'a> {
    pub file: Option<&'a Path>,
    pub sets: &'a [String],
    pub seed: Option<u64>,
    pub ablation: Option<&'a str>,
}

pub fn resolve(opts: &Layered) -> Result<TrackerConfig, CliError> {
    let base = match opts.file {
        Some(p) => load_file(p)?,
        None => TrackerConfig::default(),
    };
    let mut cfg = apply_overrides(&base, opts.sets)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(list) = opts.ablation {
        cfg.ablation = Ablation::parse_list(list).map_err(|e| CliError::Config(e.to_string()))?;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn render(cfg: &TrackerConfig) -> Result<String, CliError> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
}

/// Writes the effective configuration next to the results.
pub fn echo(cfg: &TrackerConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), render(cfg)?)?;
    Ok(())
}

/// `key=v1,v2,...` into the key and its values. Commas inside brackets or
/// braces belong to the value.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, rest) = split_assignment(spec)?;
    let mut values = Vec::new();
    let (mut depth, mut cur) = (0i32, String::new());
    for ch in rest.chars() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                values.push(std::mem::take(&mut cur).trim().to_string());
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    values.push(cur.trim().to_string());
    if values.iter().any(|v| v.is_empty()) {
        return Err(CliError::Config(format!("empty value in sweep `{spec}`")));
    }
    Ok((key.to_string(), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = apply_overrides(&TrackerConfig::default(), &["solver.gamma=5".into(), "t1=0.3".into()]).unwrap();
        assert_eq!(cfg.solver.gamma, 5.0);
        assert_eq!(cfg.t1, 0.3);
        assert_eq!(cfg.solver.lambda, 0.5);
        let cfg = apply_overrides(&cfg, &["lambda=0.25".into()]).unwrap();
        assert_eq!(cfg.solver.lambda, 0.25);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(apply_overrides(&TrackerConfig::default(), &["solver.gama=5".into()]).is_err());
        assert!(apply_overrides(&TrackerConfig::default(), &["nonsense".into()]).is_err());
    }

    #[test]
    fn rendered_config_round_trips() {
        let mut cfg = TrackerConfig::default();
        cfg.seed = 9;
        cfg.ablation = Ablation::parse_list("noTR").unwrap();
        let back: TrackerConfig = toml::from_str(&render(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sweep_values_split_on_top_level_commas() {
        let (k, v) = parse_sweep("solver.gamma=5,10,15").unwrap();
        assert_eq!(k, "solver.gamma");
        assert_eq!(v, ["5", "10", "15"]);
        let (_, v) = parse_sweep("layers=[{kind=\"gray\",cell=2,weight=1.0}],[]").unwrap();
        assert_eq!(v.len(), 2);
        assert!(parse_sweep("gamma=").is_err());
    }
}
