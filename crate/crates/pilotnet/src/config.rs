//! Run configuration: file parsing, defaults and command-line overrides.
//!
//! Config files are flat `key = value` pairs under `[system]`, `[train]` and
//! `[mode]` sections. Unknown sections, unknown keys and duplicate keys are
//! rejected with the offending line number. Resolution order is defaults,
//! then file values, then command-line overrides.

use crate::mimo::SystemConfig;
use crate::trainer::{
    budgets_from_offsets, default_budget_offsets, snr_to_noise_variance, PilotInit, TrainConfig,
};
use crate::{Error, Result};

/// Values read from a config file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub users: Option<usize>,
    pub bs_antennas: Option<usize>,
    pub user_antennas: Option<Vec<usize>>,
    pub pilot_length: Option<usize>,
    pub snr_db: Option<f64>,
    pub budget_offsets_db: Option<Vec<f64>>,
    pub noise_variance: Option<f64>,
    pub power_budgets: Option<Vec<f64>>,

    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub hidden_width: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub seed: Option<u64>,
    pub pilot_init: Option<PilotInit>,
    pub sic_order: Option<Vec<usize>>,

    pub strict_paper: Option<bool>,
    pub snr_list: Option<Vec<f64>>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub snr_list: Option<Vec<f64>>,
    pub strict_paper: bool,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub strict_paper: bool,
    pub snr_db: f64,
    pub snr_list: Vec<f64>,
}

fn parse_scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigParse {
        line,
        message: format!("invalid value {value:?} for {key}"),
    })
}

/// Comma-separated floats, rejecting empty items and non-finite values.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::Config("empty number list".into()));
    }
    trimmed
        .split(',')
        .map(|item| {
            let item = item.trim();
            let v: f64 = item
                .parse()
                .map_err(|_| Error::Config(format!("invalid number {item:?} in list")))?;
            if !v.is_finite() {
                return Err(Error::Config(format!("non-finite number {item:?} in list")));
            }
            Ok(v)
        })
        .collect()
}

/// Comma-separated unsigned integers.
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::Config("empty integer list".into()));
    }
    trimmed
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| Error::Config(format!("invalid integer {item:?} in list")))
        })
        .collect()
}

fn list_err(line: usize, key: &str, e: Error) -> Error {
    Error::ConfigParse {
        line,
        message: format!("{key}: {e}"),
    }
}

/// Parses config text. Line numbers in errors are 1-based.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut section: Option<String> = None;
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::ConfigParse {
                line,
                message: "unterminated section header".into(),
            })?;
            match name {
                "system" | "train" | "mode" => section = Some(name.to_string()),
                other => {
                    return Err(Error::ConfigParse {
                        line,
                        message: format!("unknown section [{other}]"),
                    })
                }
            }
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(Error::ConfigParse {
            line,
            message: format!("expected key = value, got {content:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let section = section.as_deref().ok_or(Error::ConfigParse {
            line,
            message: format!("key {key:?} appears before any section header"),
        })?;
        let qualified = format!("{section}.{key}");
        if seen.contains(&qualified) {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key {qualified}"),
            });
        }
        seen.push(qualified.clone());

        match qualified.as_str() {
            "system.users" => cfg.users = Some(parse_scalar(line, key, value)?),
            "system.bs_antennas" => cfg.bs_antennas = Some(parse_scalar(line, key, value)?),
            "system.user_antennas" => {
                cfg.user_antennas =
                    Some(parse_usize_list(value).map_err(|e| list_err(line, key, e))?)
            }
            "system.pilot_length" => cfg.pilot_length = Some(parse_scalar(line, key, value)?),
            "system.snr_db" => cfg.snr_db = Some(parse_scalar(line, key, value)?),
            "system.budget_offsets_db" => {
                cfg.budget_offsets_db =
                    Some(parse_f64_list(value).map_err(|e| list_err(line, key, e))?)
            }
            "system.noise_variance" => cfg.noise_variance = Some(parse_scalar(line, key, value)?),
            "system.power_budgets" => {
                cfg.power_budgets = Some(parse_f64_list(value).map_err(|e| list_err(line, key, e))?)
            }
            "train.epochs" => cfg.epochs = Some(parse_scalar(line, key, value)?),
            "train.batch_size" => cfg.batch_size = Some(parse_scalar(line, key, value)?),
            "train.learning_rate" => cfg.learning_rate = Some(parse_scalar(line, key, value)?),
            "train.train_samples" => cfg.train_samples = Some(parse_scalar(line, key, value)?),
            "train.test_samples" => cfg.test_samples = Some(parse_scalar(line, key, value)?),
            "train.hidden_width" => cfg.hidden_width = Some(parse_scalar(line, key, value)?),
            "train.hidden_layers" => cfg.hidden_layers = Some(parse_scalar(line, key, value)?),
            "train.seed" => cfg.seed = Some(parse_scalar(line, key, value)?),
            "train.pilot_init" => {
                cfg.pilot_init = Some(match value {
                    "gaussian" => PilotInit::Gaussian,
                    "heuristic" => PilotInit::Heuristic,
                    other => {
                        return Err(Error::ConfigParse {
                            line,
                            message: format!(
                                "pilot_init must be gaussian or heuristic, got {other:?}"
                            ),
                        })
                    }
                })
            }
            "train.sic_order" => {
                cfg.sic_order = Some(parse_usize_list(value).map_err(|e| list_err(line, key, e))?)
            }
            "mode.strict_paper" => {
                cfg.strict_paper = Some(match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::ConfigParse {
                            line,
                            message: format!("strict_paper must be true or false, got {other:?}"),
                        })
                    }
                })
            }
            "mode.snr_list" => {
                cfg.snr_list = Some(parse_f64_list(value).map_err(|e| list_err(line, key, e))?)
            }
            _ => {
                return Err(Error::ConfigParse {
                    line,
                    message: format!("unknown key {key:?} in section [{section}]"),
                })
            }
        }
    }
    Ok(cfg)
}

pub fn parse_config_file(path: &std::path::Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

impl Settings {
    /// Defaults, file values, then command-line overrides.
    pub fn resolve(file: Option<&FileConfig>, overrides: &Overrides) -> Result<Settings> {
        let empty = FileConfig::default();
        let f = file.unwrap_or(&empty);

        let users = f.users.unwrap_or(3);
        let bs_antennas = f.bs_antennas.unwrap_or(4);
        let user_antennas = f.user_antennas.clone().unwrap_or_else(|| vec![4; users]);
        let pilot_length = f.pilot_length.unwrap_or(8);
        let snr_db = f.snr_db.unwrap_or(25.0);
        let strict_paper = overrides.strict_paper || f.strict_paper.unwrap_or(false);

        if strict_paper && f.power_budgets.is_some() {
            return Err(Error::Config(
                "strict_paper fixes unit power budgets; drop power_budgets".into(),
            ));
        }
        if strict_paper && f.budget_offsets_db.is_some() {
            return Err(Error::Config(
                "strict_paper fixes unit power budgets; drop budget_offsets_db".into(),
            ));
        }
        let power_budgets = if strict_paper {
            vec![1.0; users]
        } else if let Some(budgets) = &f.power_budgets {
            budgets.clone()
        } else {
            let offsets = f
                .budget_offsets_db
                .clone()
                .unwrap_or_else(|| default_budget_offsets(users));
            if offsets.len() != users {
                return Err(Error::Config(format!(
                    "budget_offsets_db lists {} entries for {users} users",
                    offsets.len()
                )));
            }
            budgets_from_offsets(&offsets)
        };
        let noise_variance = f
            .noise_variance
            .unwrap_or_else(|| snr_to_noise_variance(snr_db, pilot_length));

        let system = SystemConfig::new(
            users,
            bs_antennas,
            user_antennas,
            pilot_length,
            power_budgets,
            noise_variance,
        )?;

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: f.epochs.unwrap_or(defaults.epochs),
            batch_size: f.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: f.learning_rate.unwrap_or(defaults.learning_rate),
            train_samples: f.train_samples.unwrap_or(defaults.train_samples),
            test_samples: f.test_samples.unwrap_or(defaults.test_samples),
            hidden_width: f.hidden_width.unwrap_or(defaults.hidden_width),
            hidden_layers: f.hidden_layers.unwrap_or(defaults.hidden_layers),
            seed: overrides.seed.or(f.seed).unwrap_or(defaults.seed),
            pilot_init: f.pilot_init.unwrap_or(defaults.pilot_init),
            sic_order: f.sic_order.clone(),
        };
        train.validate()?;

        let snr_list = overrides
            .snr_list
            .clone()
            .or_else(|| f.snr_list.clone())
            .unwrap_or_else(|| vec![5.0, 15.0, 25.0]);
        if snr_list.is_empty() {
            return Err(Error::Config("snr_list must not be empty".into()));
        }

        Ok(Settings {
            system,
            train,
            strict_paper,
            snr_db,
            snr_list,
        })
    }

    /// Canonical key-sorted rendering of every resolved value. Reruns with
    /// identical settings produce identical text, which is what the output
    /// manifest hashes; timestamps never appear here.
    pub fn canonical_string(&self) -> String {
        let sig = crate::mimo::fmt_sig;
        let join_f = |v: &[f64]| v.iter().map(|x| sig(*x)).collect::<Vec<_>>().join(",");
        let join_u = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut lines = vec![
            format!("mode.snr_db={}", sig(self.snr_db)),
            format!("mode.snr_list={}", join_f(&self.snr_list)),
            format!("mode.strict_paper={}", self.strict_paper),
            format!("system.bs_antennas={}", self.system.bs_antennas),
            format!("system.noise_variance={}", sig(self.system.noise_variance)),
            format!("system.pilot_length={}", self.system.pilot_length),
            format!(
                "system.power_budgets={}",
                join_f(&self.system.power_budgets)
            ),
            format!(
                "system.user_antennas={}",
                join_u(&self.system.user_antennas)
            ),
            format!("system.users={}", self.system.users),
            format!("train.batch_size={}", self.train.batch_size),
            format!("train.epochs={}", self.train.epochs),
            format!("train.hidden_layers={}", self.train.hidden_layers),
            format!("train.hidden_width={}", self.train.hidden_width),
            format!("train.learning_rate={}", sig(self.train.learning_rate)),
            format!(
                "train.pilot_init={}",
                match self.train.pilot_init {
                    PilotInit::Gaussian => "gaussian",
                    PilotInit::Heuristic => "heuristic",
                }
            ),
            format!("train.seed={}", self.train.seed),
            format!(
                "train.sic_order={}",
                self.train
                    .sic_order
                    .as_ref()
                    .map(|o| join_u(o))
                    .unwrap_or_else(|| "descending_budget".into())
            ),
            format!("train.test_samples={}", self.train.test_samples),
            format!("train.train_samples={}", self.train.train_samples),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }
}
