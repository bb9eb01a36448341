//! Run configuration: a TOML file plus `--kebab-case` flag overrides.

use std::path::{Path, PathBuf};

use or2_core::stream::StreamConfig;
use or2_core::synth::NoiseSpec;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

/// Which exported variant of a dataset to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Clean,
    Noisy,
}

impl Variant {
    pub fn dir_name(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Noisy => "noisy",
        }
    }
}

/// Synthetic fixture and its noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene_seed: u64,
    pub n_static: usize,
    pub n_dynamic: usize,
    pub n_cameras: usize,
    pub frames: usize,
    pub resolution: usize,
    pub noise_sigma: f64,
    pub photons: f64,
    pub noise_seed: u64,
    /// World-space jitter of the initialization points.
    pub init_sigma: f64,
    pub init_keep: f64,
    pub init_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene_seed: 0,
            n_static: 300,
            n_dynamic: 20,
            n_cameras: 8,
            frames: 30,
            resolution: 64,
            noise_sigma: 0.02,
            photons: 500.0,
            noise_seed: 0,
            init_sigma: 0.02,
            init_keep: 0.5,
            init_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            gaussian_sigma: self.noise_sigma,
            poisson_photons: self.photons,
            seed: self.noise_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root holding `clean/`, `noisy/` and `init.json`.
    pub dataset: PathBuf,
    /// Run directory for checkpoints, logs and reports.
    pub output: PathBuf,
    /// Observations used for training.
    pub variant: Variant,
    /// Ground truth used by `eval`.
    pub reference: Variant,
    /// Cameras held out of training and used by `eval`.
    pub eval_cameras: Vec<usize>,
    /// Write checkpoints without residual maps.
    pub strip_residual: bool,
    pub synth: SynthConfig,
    pub stream: StreamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("run"),
            variant: Variant::Noisy,
            reference: Variant::Clean,
            eval_cameras: vec![3],
            strip_residual: false,
            synth: SynthConfig::default(),
            stream: StreamConfig::default(),
        }
    }
}

const SECTIONS: [&str; 2] = ["synth", "stream"];

/// Flags that are not plain key names.
const ALIASES: [(&str, &str, bool); 1] = [("no-residual", "use_residual_maps", false)];

impl RunConfig {
    /// Parses TOML text; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads `file` (or defaults), applies `overrides` and resolves paths:
    /// paths from the file are relative to its directory, paths from flags
    /// to `cwd`.
    pub fn load(file: Option<&Path>, overrides: &[String], cwd: &Path) -> Result<Self, CliError> {
        let (mut cfg, base) = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                let dir = p.parent().map(|d| cwd.join(d)).unwrap_or_else(|| cwd.to_path_buf());
                (Self::from_toml(&text)?, dir)
            }
            None => (RunConfig::default(), cwd.to_path_buf()),
        };
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output = base.join(&cfg.output);
        let mut cfg = cfg.with_overrides(overrides)?;
        cfg.dataset = cwd.join(&cfg.dataset);
        cfg.output = cwd.join(&cfg.output);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `--key value`, `--flag` and `--no-flag` overrides.
    pub fn with_overrides(&self, args: &[String]) -> Result<Self, CliError> {
        let mut root = Value::try_from(self).expect("config serializes");
        let mut i = 0;
        while i < args.len() {
            let flag = args[i]
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument '{}'", args[i])))?;
            let (flag, inline) = match flag.split_once('=') {
                Some((f, v)) => (f, Some(v.to_string())),
                None => (flag, None),
            };
            let next_is_value = inline.is_none()
                && args.get(i + 1).is_some_and(|a| !a.starts_with("--") || a.parse::<f64>().is_ok());
            i += 1;

            if let Some(&(_, key, value)) = ALIASES.iter().find(|(a, _, _)| *a == flag) {
                *lookup(&mut root, key).expect("alias key exists") = Value::Boolean(value);
                continue;
            }
            let key = flag.replace('-', "_");
            if let Some(slot) = lookup(&mut root, &key) {
                let raw = match inline {
                    Some(v) => v,
                    None if slot.is_bool() && !next_is_value => "true".into(),
                    None if next_is_value => {
                        i += 1;
                        args[i - 1].clone()
                    }
                    None => return Err(CliError::Usage(format!("--{flag} needs a value"))),
                };
                *slot = parse_like(slot, &raw).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))?;
                continue;
            }
            match key.strip_prefix("no_").and_then(|k| lookup(&mut root, k)) {
                Some(slot) if slot.is_bool() && inline.is_none() => *slot = Value::Boolean(false),
                _ => return Err(CliError::Usage(format!("unknown option --{flag}"))),
            }
        }
        root.try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.stream
            .validate()
            .map_err(|e| CliError::Usage(format!("stream config: {e}")))?;
        self.synth
            .noise()
            .validate()
            .map_err(|e| CliError::Usage(format!("synth config: {e}")))?;
        let mut seen = self.eval_cameras.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.eval_cameras.len() {
            return Err(CliError::Usage("eval_cameras contains duplicates".into()));
        }
        Ok(())
    }

    /// Training cameras: every rig camera not held out.
    pub fn train_cameras(&self, rig_cameras: usize) -> Result<Vec<usize>, CliError> {
        if let Some(&c) = self.eval_cameras.iter().find(|&&c| c >= rig_cameras) {
            return Err(CliError::Usage(format!(
                "eval camera {c} not in rig of {rig_cameras}"
            )));
        }
        let train: Vec<usize> = (0..rig_cameras).filter(|c| !self.eval_cameras.contains(c)).collect();
        if train.len() < 2 {
            return Err(CliError::Usage(format!(
                "only {} training cameras remain",
                train.len()
            )));
        }
        Ok(train)
    }

    pub fn variant_dir(&self, v: Variant) -> PathBuf {
        self.dataset.join(v.dir_name())
    }

    pub fn init_path(&self) -> PathBuf {
        self.dataset.join("init.json")
    }
}

/// Finds `key` at top level or in one of the sections.
fn lookup<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    let table = root.as_table_mut()?;
    if table.contains_key(key) && !SECTIONS.contains(&key) {
        return table.get_mut(key);
    }
    let section = SECTIONS
        .iter()
        .find(|s| table.get(**s).and_then(Value::as_table).is_some_and(|t| t.contains_key(key)))?;
    table.get_mut(*section)?.as_table_mut()?.get_mut(key)
}

/// Parses `raw` into the same TOML type as `like`.
fn parse_like(like: &Value, raw: &str) -> Result<Value, String> {
    let bad = |what: &str| format!("expected {what}, got '{raw}'");
    Ok(match like {
        Value::Boolean(_) => Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Integer(_) => Value::Integer(parse_int(raw).ok_or_else(|| bad("an integer"))?),
        Value::Float(_) => Value::Float(raw.parse().map_err(|_| bad("a number"))?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::Integer(0));
            let parts: Vec<&str> = if raw.is_empty() { Vec::new() } else { raw.split(',').collect() };
            Value::Array(
                parts
                    .into_iter()
                    .map(|p| parse_like(&elem, p.trim()))
                    .collect::<Result<_, _>>()?,
            )
        }
        _ => return Err(format!("cannot set '{raw}' from the command line")),
    })
}

fn parse_int(raw: &str) -> Option<i64> {
    raw.parse().ok().or_else(|| {
        let f: f64 = raw.parse().ok()?;
        (f.fract() == 0.0 && f.abs() < 9e15).then_some(f as i64)
    })
}
