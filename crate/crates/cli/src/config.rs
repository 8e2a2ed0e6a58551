use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use craft_core::dataprep::SplitSpec;
use craft_core::model::ModelConfig;
use craft_core::numerics::Precision;
use craft_core::pipeline::FitOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a run needs, loaded from TOML and patched by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Ingested bundle directory.
    pub dataset: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: FitOptions,
}

fn default_precision() -> Precision {
    Precision::Single
}

/// Command-line overrides shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub precision: Option<Precision>,
    pub dataset: Option<PathBuf>,
    /// `section.key=value` assignments, the value parsed as a TOML literal.
    pub set: Vec<String>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, overrides).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_toml(text: &str, overrides: &Overrides) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)?;
        for assignment in &overrides.set {
            apply_assignment(&mut value, assignment)?;
        }
        let mut config: RunConfig = value.try_into()?;
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            config.out = Some(out.clone());
        }
        if let Some(p) = overrides.precision {
            config.precision = p;
        }
        if let Some(d) = &overrides.dataset {
            config.dataset = d.clone();
        }
        config.model.validate()?;
        config.split.validate()?;
        if config.training.batch_size == 0 || config.training.eval_batch_size == 0 {
            bail!("batch sizes must be >= 1");
        }
        Ok(config)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .context("a seed is required: pass --seed or set `seed` in the config")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("an output directory is required: pass --out or set `out` in the config")
    }

    /// Hash of every setting that influences results, plus the dataset
    /// checksum. Paths are excluded.
    pub fn fingerprint(&self, dataset_checksum: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Material<'a> {
            dataset_checksum: &'a str,
            seed: Option<u64>,
            precision: Precision,
            split: &'a SplitSpec,
            model: &'a ModelConfig,
            training: &'a FitOptions,
        }
        let bytes = serde_json::to_vec(&Material {
            dataset_checksum,
            seed: self.seed,
            precision: self.precision,
            split: &self.split,
            model: &self.model,
            training: &self.training,
        })?;
        Ok(hex(&Sha256::digest(bytes))[..16].to_string())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_assignment(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not of the form key=value"))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .map(|mut t| t.remove("v").expect("key v"))
        .or_else(|_| Ok::<_, anyhow::Error>(toml::Value::String(raw.to_string())))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override {path}: {key} is not a table"))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .with_context(|| format!("override {path}: parent is not a table"))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
dataset = "data/x"
[model]
dim = 32
heads = 2
[training]
batch_size = 100
"#;

    #[test]
    fn overrides_patch_nested_fields() {
        let o = Overrides {
            seed: Some(3),
            set: vec![
                "model.dim=16".into(),
                "training.adam.lr=0.01".into(),
                "model.use_repeat=true".into(),
            ],
            ..Overrides::default()
        };
        let c = RunConfig::from_toml(BASE, &o).unwrap();
        assert_eq!(c.model.dim, 16);
        assert!(c.model.use_repeat);
        assert_eq!(c.training.adam.lr, 0.01);
        assert_eq!(c.training.batch_size, 100);
        assert_eq!(c.seed().unwrap(), 3);
        assert_eq!(c.precision, Precision::Single);
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_fail() {
        let c = RunConfig::from_toml(BASE, &Overrides::default()).unwrap();
        assert!(c.seed().is_err());
        assert!(RunConfig::from_toml("dataset = \"x\"\nbogus = 1", &Overrides::default()).is_err());
        assert!(
            RunConfig::from_toml("dataset = \"x\"\n[model]\ndim = 3", &Overrides::default())
                .is_err()
        );
    }

    #[test]
    fn fingerprint_tracks_settings_not_paths() {
        let a = RunConfig::from_toml(BASE, &Overrides::default()).unwrap();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        b.dataset = "moved".into();
        assert_eq!(a.fingerprint("c").unwrap(), b.fingerprint("c").unwrap());
        b.model.dim = 8;
        assert_ne!(a.fingerprint("c").unwrap(), b.fingerprint("c").unwrap());
        assert_ne!(a.fingerprint("c").unwrap(), a.fingerprint("d").unwrap());
    }
}
