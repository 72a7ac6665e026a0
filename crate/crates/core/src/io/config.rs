use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{invalid, Error, Result};
use crate::mpc::PlannerConfig;
use crate::sim::{preset, CbfParams, ControllerKind, Scenario, SimConfig, UncertaintyModel};

/// Operator-facing run description. Every section is optional in the file;
/// missing values take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Preset name or path to a scenario file (`.toml` or `.json`).
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    /// Monte Carlo runs per controller.
    pub runs: usize,
    pub out: PathBuf,
    pub planner: PlannerConfig,
    pub cbf: CbfParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyModel>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "scenario1".into(),
            controller: ControllerKind::ErpfMpc,
            seed: 0,
            runs: 20,
            out: PathBuf::from("out"),
            planner: PlannerConfig::default(),
            cbf: CbfParams::default(),
            uncertainty: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenario.trim().is_empty() {
            return Err(invalid("scenario", "must name a preset or a file"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        self.sim_config().validate()
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            planner: self.planner.clone(),
            cbf: self.cbf.clone(),
            uncertainty: self.uncertainty,
        }
    }

    /// Resolves the scenario field: a preset name, otherwise a file path.
    pub fn load_scenario(&self) -> Result<Scenario> {
        match preset(&self.scenario) {
            Ok(s) => Ok(s),
            Err(Error::Unknown { .. }) if Path::new(&self.scenario).is_file() => {
                load_scenario_file(Path::new(&self.scenario))
            }
            Err(e) => Err(e),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let scenario: Scenario = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        _ => toml::from_str(&text).map_err(|e| parse_error(path, e))?,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn parse_error(path: &Path, e: toml::de::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Parses configuration text, applies `key=value` overrides and validates.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a configuration file; `None` starts from the defaults.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config(&text, overrides).map_err(|e| match (e, path) {
        (Error::Parse(m), Some(p)) => Error::Parse(format!("{}: {m}", p.display())),
        (e, _) => e,
    })
}

/// Sets a dotted key such as `planner.risk.d_safe=8`. The value is read as a
/// TOML literal and falls back to a bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid("--set", format!("`{assignment}` is not key=value")))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(invalid("--set", format!("malformed key `{key}`")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{part}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_field::EvolutionMode;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn zero_d_safe_is_rejected() {
        let err = parse_config("", &["planner.risk.d_safe=0".into()]).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
        let err = parse_config("[planner.risk]\nd_safe = 0.0\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            parse_config("colour = 3", &[]),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_config("", &["planner.weights.delta=1".into()]),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn parse_error_reports_position() {
        let msg = parse_config("seed = 1\nrisk = [", &[])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let cfg = parse_config(
            "seed = 3",
            &[
                "planner.weights.gamma=80".into(),
                "planner.evolution=indicator".into(),
                "controller=\"cbf_filter\"".into(),
                "uncertainty.accel_bound=2".into(),
                "planner.bounds.y_min=0.5".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.planner.weights.gamma, 80.0);
        assert_eq!(cfg.planner.evolution, EvolutionMode::Indicator);
        assert_eq!(cfg.controller, ControllerKind::CbfFilter);
        assert_eq!(cfg.uncertainty.unwrap().accel_bound, 2.0);
        assert_eq!(cfg.planner.bounds.y_min, Some(0.5));
    }

    #[test]
    fn malformed_override() {
        assert!(parse_config("", &["gamma".into()]).is_err());
        assert!(parse_config("", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn serialized_config_reloads_identically() {
        let mut cfg = RunConfig {
            seed: 42,
            scenario: "highway".into(),
            uncertainty: Some(UncertaintyModel::default()),
            ..RunConfig::default()
        };
        cfg.planner.weights.gamma = 77.5;
        cfg.planner.risk.lambda = 1.25;
        for c in [RunConfig::default(), cfg] {
            let text = c.to_toml().unwrap();
            assert_eq!(parse_config(&text, &[]).unwrap(), c, "{text}");
        }
    }

    #[test]
    fn preset_scenario_resolves() {
        let s = RunConfig::default().load_scenario().unwrap();
        assert_eq!(s.ego.x, 0.0);
        assert_eq!(s.ego.y, 1.75);
        assert_eq!(s.ego.v, 30.0);
        let o: Vec<_> = s
            .obstacles
            .iter()
            .map(|o| (o.position[0], o.position[1], o.velocity[0]))
            .collect();
        assert_eq!(o, vec![(50.0, 1.75, 12.0), (40.0, 5.25, 20.0)]);
    }

    #[test]
    fn scenario_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let s = crate::sim::highway();
        std::fs::write(&path, toml::to_string(&s).unwrap()).unwrap();
        let cfg = RunConfig {
            scenario: path.to_string_lossy().into_owned(),
            ..RunConfig::default()
        };
        assert_eq!(cfg.load_scenario().unwrap(), s);
        let missing = RunConfig {
            scenario: "nowhere".into(),
            ..RunConfig::default()
        };
        assert!(matches!(
            missing.load_scenario(),
            Err(Error::Unknown { .. })
        ));
    }
}
