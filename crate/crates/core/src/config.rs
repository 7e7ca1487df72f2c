//! TOML scenario files.
//!
//! Speeds carry an explicit unit (`"51 km/h"` or `"14.2 m/s"`) and are stored
//! in m/s. Every other quantity is a bare number in SI units.

use std::path::{Path as FsPath, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use toml::{Table, Value};

use crate::geometry::{Approach, LayoutConfig, Maneuver};
use crate::mpc::MpcConfig;
use crate::priority::BidParams;
use crate::sim::{ConfigError, ScenarioConfig, ScenarioMode, ScriptedVehicle, SpawnConfig};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: ConfigError },
}

#[derive(Debug, Error, PartialEq)]
pub enum SpeedError {
    #[error("speed {0:?} needs a unit suffix (km/h or m/s)")]
    MissingUnit(String),
    #[error("bad speed value {0:?}")]
    BadNumber(String),
}

/// Parses `"<number> km/h"` or `"<number> m/s"` into m/s.
pub fn parse_speed(text: &str) -> Result<f64, SpeedError> {
    let t = text.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("km/h") {
        (n, 1.0 / 3.6)
    } else if let Some(n) = t.strip_suffix("m/s") {
        (n, 1.0)
    } else {
        return Err(SpeedError::MissingUnit(text.to_string()));
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| SpeedError::BadNumber(text.to_string()))?;
    if !v.is_finite() {
        return Err(SpeedError::BadNumber(text.to_string()));
    }
    Ok(v * scale)
}

const SPEED_KEYS: [(&str, &[&str]); 3] = [
    ("mpc", &["v_min", "v_max"]),
    ("spawn", &["v_ref_mean", "v_ref_std"]),
    ("vehicle", &["speed", "v_ref"]),
];

fn convert_speeds(table: &mut Table, section: &str, keys: &[&str]) -> Result<(), String> {
    for key in keys {
        let Some(value) = table.get_mut(*key) else {
            continue;
        };
        let mps = match value {
            Value::String(s) => parse_speed(s).map_err(|e| format!("{section}.{key}: {e}"))?,
            other => {
                return Err(format!(
                    "{section}.{key}: speed {other} needs a unit suffix (km/h or m/s)"
                ))
            }
        };
        *value = Value::Float(mps);
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawMode {
    Scripted,
    Generated,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVehicle {
    name: String,
    approach: Approach,
    maneuver: Maneuver,
    position: f64,
    speed: f64,
    v_ref: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpawn {
    probability: Option<f64>,
    v_ref_mean: Option<f64>,
    v_ref_std: Option<f64>,
    right_turn_probability: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    mode: Option<RawMode>,
    sampling_time: Option<f64>,
    duration: Option<f64>,
    rng_seed: Option<u64>,
    layout: Option<LayoutConfig>,
    mpc: Option<MpcConfig>,
    bid: Option<BidParams>,
    spawn: Option<RawSpawn>,
    #[serde(default)]
    vehicle: Vec<RawVehicle>,
}

/// Parses scenario text. Does not validate the result.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, String> {
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    for (section, keys) in SPEED_KEYS {
        match doc.get_mut(section) {
            Some(Value::Table(t)) => convert_speeds(t, section, keys)?,
            Some(Value::Array(items)) => {
                for item in items {
                    if let Value::Table(t) = item {
                        convert_speeds(t, section, keys)?;
                    }
                }
            }
            _ => {}
        }
    }
    let raw: RawScenario = doc.try_into().map_err(|e: toml::de::Error| e.to_string())?;
    let d = ScenarioConfig::default();
    let sp = raw.spawn.unwrap_or_default();
    let ds = SpawnConfig::default();
    Ok(ScenarioConfig {
        name: raw.name.unwrap_or(d.name),
        layout: raw.layout.unwrap_or(d.layout),
        sampling_time: raw.sampling_time.unwrap_or(d.sampling_time),
        mpc: raw.mpc.unwrap_or(d.mpc),
        bid: raw.bid.unwrap_or(d.bid),
        mode: match raw.mode {
            None | Some(RawMode::Scripted) => ScenarioMode::Scripted,
            Some(RawMode::Generated) => ScenarioMode::Generated,
        },
        vehicles: raw
            .vehicle
            .into_iter()
            .map(|v| ScriptedVehicle {
                name: v.name,
                approach: v.approach,
                maneuver: v.maneuver,
                position: v.position,
                speed: v.speed,
                v_ref: v.v_ref,
            })
            .collect(),
        spawn: SpawnConfig {
            probability: sp.probability.unwrap_or(ds.probability),
            v_ref_mean: sp.v_ref_mean.unwrap_or(ds.v_ref_mean),
            v_ref_std: sp.v_ref_std.unwrap_or(ds.v_ref_std),
            right_turn_probability: sp
                .right_turn_probability
                .unwrap_or(ds.right_turn_probability),
        },
        duration: raw.duration.unwrap_or(d.duration),
        rng_seed: raw.rng_seed.unwrap_or(d.rng_seed),
    })
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &FsPath) -> Result<ScenarioConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = parse_scenario(&text).map_err(|message| LoadError::Parse {
        path: path.to_path_buf(),
        message,
    })?;
    cfg.validate().map_err(|source| LoadError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speeds_need_units() {
        assert!((parse_speed("36 km/h").unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(parse_speed(" 12.5 m/s ").unwrap(), 12.5);
        assert_eq!(parse_speed("36km/h").unwrap(), 10.0);
        assert_eq!(parse_speed("36"), Err(SpeedError::MissingUnit("36".into())));
        assert_eq!(parse_speed("fast km/h"), Err(SpeedError::BadNumber("fast km/h".into())));
        assert!(parse_speed("inf m/s").is_err());
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_scenario("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn full_file() {
        let cfg = parse_scenario(
            r#"
            name = "demo"
            mode = "generated"
            duration = 12.0
            rng_seed = 7
            [mpc]
            horizon = 40
            v_max = "108 km/h"
            [spawn]
            probability = 0.02
            v_ref_mean = "10 m/s"
            [[vehicle]]
            name = "a"
            approach = "south"
            maneuver = "right"
            position = 3.0
            speed = "36 km/h"
            v_ref = "10 m/s"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.mode, ScenarioMode::Generated);
        assert_eq!(cfg.mpc.horizon, 40);
        assert!((cfg.mpc.v_max - 30.0).abs() < 1e-12);
        assert_eq!(cfg.mpc.a_min, -9.0);
        assert_eq!(cfg.spawn.v_ref_mean, 10.0);
        assert_eq!(cfg.spawn.right_turn_probability, 0.5);
        assert_eq!(cfg.vehicles[0].approach, Approach::South);
        assert!((cfg.vehicles[0].speed - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bare_speed_rejected() {
        let err = parse_scenario("[mpc]\nv_max = 36.1\n").unwrap_err();
        assert!(err.contains("mpc.v_max"), "{err}");
        let err = parse_scenario(
            "[[vehicle]]\nname='a'\napproach='s'\nmaneuver='right'\nposition=0.0\nspeed=3\nv_ref='3 m/s'\n",
        )
        .unwrap_err();
        assert!(err.contains("vehicle.speed"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_scenario("horizn = 3").is_err());
        assert!(parse_scenario("[mpc]\nhorizn = 3").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_scenario(FsPath::new("/nonexistent/x.scenario")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.scenario"));
    }
}
