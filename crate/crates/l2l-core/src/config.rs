//! Layered pipeline configuration.
//!
//! Precedence: built-in defaults < TOML config file < `L2L_`-prefixed
//! environment variables < command-line flags (applied by the CLI after
//! loading). Unknown keys anywhere are rejected with the offending key
//! named. All stage seeds are derived from the single root `seed`, so a run
//! is replayable from its config snapshot alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyConfig;
use crate::dataset::DEFAULT_HOT_PIXEL_K;
use crate::error::{Error, Result};
use crate::pix2pix::TranslatorConfig;
use crate::raster::ColorMode;
use crate::resvae::VAEConfig;
use crate::seed;

pub const ENV_PREFIX: &str = "L2L_";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Output color composition: "rgb" or "rgnir".
    #[serde(default = "d_mode")]
    pub mode: ColorMode,
    /// Square output size after resize.
    #[serde(default = "d_size")]
    pub size: usize,
    /// Total samples per source leaf (1 = original only).
    #[serde(default = "d_augment")]
    pub augment_factor: usize,
    /// Hot-pixel rejection threshold multiplier over the 3x3 median.
    #[serde(default = "d_hot_k")]
    pub hot_pixel_k: f32,
    #[serde(default)]
    pub seed: u64,
}

fn d_mode() -> ColorMode {
    ColorMode::Rgb
}
fn d_size() -> usize {
    256
}
fn d_augment() -> usize {
    3
}
fn d_hot_k() -> f32 {
    DEFAULT_HOT_PIXEL_K
}

impl Default for DatasetConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).unwrap()
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.augment_factor < 1 || self.size < 16 || self.hot_pixel_k <= 0.0 {
            return Err(Error::Config {
                key: "dataset".into(),
                message: "augment_factor >= 1, size >= 16, hot_pixel_k > 0 required".into(),
            });
        }
        Ok(())
    }
}

/// Whole-pipeline configuration: one section per stage plus the root seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; every stage's RNG stream is derived from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub vae: VAEConfig,
    pub translator: TranslatorConfig,
    pub eval: AnomalyConfig,
}

impl PipelineConfig {
    /// Re-derive each stage seed from the root seed. Called after every
    /// load/override so stage streams always follow the root.
    pub fn derive_stage_seeds(&mut self) {
        self.dataset.seed = seed::derive(self.seed, "dataset");
        self.vae.seed = seed::derive(self.seed, "vae");
        self.translator.seed = seed::derive(self.seed, "translator");
        self.eval.seed = seed::derive(self.seed, "eval");
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.vae.validate()?;
        self.translator.validate()?;
        self.eval.validate()
    }
}

/// Load configuration with full precedence handling. `path` is optional (no
/// file = defaults); `env` is an iterator of environment pairs, normally
/// `std::env::vars()`.
pub fn load_config(
    path: Option<&Path>,
    env: impl Iterator<Item = (String, String)>,
) -> Result<PipelineConfig> {
    let mut table = to_table(&PipelineConfig::default());
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let file_table: toml::Table = text.parse().map_err(|e| Error::Config {
            key: p.display().to_string(),
            message: format!("TOML parse error: {e}"),
        })?;
        merge_into(&mut table, file_table);
    }
    apply_env(&mut table, env)?;
    let mut config: PipelineConfig =
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config {
                key: "config".into(),
                message: e.to_string(),
            })?;
    config.derive_stage_seeds();
    config.validate()?;
    Ok(config)
}

fn to_table(config: &PipelineConfig) -> toml::Table {
    match toml::Value::try_from(config).expect("default config serializes") {
        toml::Value::Table(t) => t,
        _ => unreachable!("config serializes to a table"),
    }
}

fn merge_into(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(bt)), toml::Value::Table(ot)) => merge_into(bt, ot),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Apply `L2L_SEED=…` and `L2L_<SECTION>_<KEY>=…` overrides. Values are
/// parsed as integer, float or boolean when possible, else kept as strings.
fn apply_env(
    table: &mut toml::Table,
    env: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    let mut pairs: Vec<(String, String)> = env
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    pairs.sort(); // deterministic application order
    for (key, value) in pairs {
        let rest = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let parsed = parse_scalar(&value);
        if rest == "seed" {
            table.insert("seed".into(), parsed);
            continue;
        }
        let (section, field) = rest.split_once('_').ok_or_else(|| Error::Config {
            key: key.clone(),
            message: "expected L2L_SEED or L2L_<SECTION>_<FIELD>".into(),
        })?;
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(field.to_string(), parsed);
            }
            _ => {
                return Err(Error::Config {
                    key: key.clone(),
                    message: format!("{section} is not a config section"),
                })
            }
        }
    }
    Ok(())
}

fn parse_scalar(value: &str) -> toml::Value {
    if let Ok(i) = value.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = value.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = value.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(value.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn no_env() -> impl Iterator<Item = (String, String)> {
        std::iter::empty()
    }

    fn write_config(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l2l.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_file_yields_all_defaults() {
        let (_d, path) = write_config("");
        let cfg = load_config(Some(&path), no_env()).unwrap();
        assert_eq!(cfg.vae.beta, 75.0);
        assert_eq!(cfg.vae.learning_rate, 0.001);
        assert_eq!(cfg.vae.latent_dim, 32);
        assert_eq!(cfg.vae.epochs, 2000);
        assert_eq!(cfg.vae.batch_size, 64);
        assert_eq!(cfg.translator.lambda_l1, 100.0);
        assert_eq!(cfg.translator.learning_rate, 0.0002);
        assert_eq!(cfg.translator.steps, 12000);
        assert_eq!(cfg.translator.batch_size, 1);
        assert_eq!(cfg.translator.init_std, 0.002);
    }

    #[test]
    fn no_file_equals_empty_file() {
        let (_d, path) = write_config("");
        let a = load_config(None, no_env()).unwrap();
        let b = load_config(Some(&path), no_env()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_overrides_defaults() {
        let (_d, path) = write_config("seed = 9\n[vae]\nbeta = 0.0\nepochs = 5\n");
        let cfg = load_config(Some(&path), no_env()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.vae.beta, 0.0, "beta = 0 is a valid degenerate VAE");
        assert_eq!(cfg.vae.epochs, 5);
        assert_eq!(cfg.translator.lambda_l1, 100.0, "untouched sections keep defaults");
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let (_d, path) = write_config("[vae]\nbetaa = 75\n");
        let err = load_config(Some(&path), no_env()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("betaa"), "error must name the key: {msg}");

        let (_d2, path2) = write_config("unknown_section = 1\n");
        let err = load_config(Some(&path2), no_env()).unwrap_err();
        assert!(err.to_string().contains("unknown_section"));
    }

    #[test]
    fn invalid_value_rejected() {
        let (_d, path) = write_config("[vae]\nlearning_rate = -1.0\n");
        assert!(load_config(Some(&path), no_env()).is_err());
        let (_d2, path2) = write_config("[dataset]\naugment_factor = 0\n");
        assert!(load_config(Some(&path2), no_env()).is_err());
    }

    #[test]
    fn env_overrides_file() {
        let (_d, path) = write_config("[vae]\nbeta = 10.0\n");
        let env = vec![
            ("L2L_VAE_BETA".to_string(), "20.5".to_string()),
            ("L2L_SEED".to_string(), "123".to_string()),
            ("L2L_TRANSLATOR_STEPS".to_string(), "7".to_string()),
            ("HOME".to_string(), "/root".to_string()), // ignored
        ];
        let cfg = load_config(Some(&path), env.into_iter()).unwrap();
        assert_eq!(cfg.vae.beta, 20.5);
        assert_eq!(cfg.seed, 123);
        assert_eq!(cfg.translator.steps, 7);
    }

    #[test]
    fn env_string_values_parse() {
        let env = vec![("L2L_DATASET_MODE".to_string(), "rgnir".to_string())];
        let cfg = load_config(None, env.into_iter()).unwrap();
        assert_eq!(cfg.dataset.mode, ColorMode::Rgnir);
    }

    #[test]
    fn bad_env_key_rejected() {
        let env = vec![("L2L_NOSUCH".to_string(), "1".to_string())];
        assert!(load_config(None, env.into_iter()).is_err());
        let env = vec![("L2L_VAE_NOPE".to_string(), "1".to_string())];
        let err = load_config(None, env.into_iter()).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn stage_seeds_derived_from_root() {
        let a = load_config(None, vec![("L2L_SEED".into(), "1".into())].into_iter()).unwrap();
        let b = load_config(None, vec![("L2L_SEED".into(), "1".into())].into_iter()).unwrap();
        assert_eq!(a.vae.seed, b.vae.seed);
        let c = load_config(None, vec![("L2L_SEED".into(), "2".into())].into_iter()).unwrap();
        assert_ne!(a.vae.seed, c.vae.seed);
        // Stage streams differ from each other.
        let seeds = [a.dataset.seed, a.vae.seed, a.translator.seed, a.eval.seed];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }

    #[test]
    fn config_round_trips_through_json_snapshot() {
        let cfg = load_config(None, no_env()).unwrap();
        let snap = serde_json::to_value(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_value(snap).unwrap();
        assert_eq!(cfg, back);
    }
}
