//! Run configuration: one TOML file, unknown keys rejected, every key
//! overridable from the environment as `INVKIT_<SECTION>_<KEY>`
//! (`INVKIT_ATTACK_EPSILON=30`, `INVKIT_ATTACK_STEP_MOMENTUM=0.5`,
//! `INVKIT_SEED=7`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{GreedyConfig, Norm, StepConfig};
use crate::error::{Error, Result};
use crate::eval::PairScope;
use crate::models::{derive_seed, Access, WorldConfig};
use crate::pipeline::AttackConfig;
use crate::pool::PoolSpec;
use crate::stats::NormalityMode;

pub const ENV_PREFIX: &str = "INVKIT_";

/// Per-candidate iterations for white-box runs that leave `t_max` unset.
pub const DEFAULT_T_MAX: usize = 100;

/// Every settable key, as a dotted path.
pub const KEYS: &[&str] = &[
    "seed",
    "backend.kind",
    "backend.generator",
    "backend.embedders",
    "backend.detector",
    "world.latent_dim",
    "world.image_shape",
    "world.embed_dims",
    "world.identities",
    "world.images_per_identity",
    "world.identity_spread",
    "world.generator_gain",
    "world.bias_scale",
    "world.shared_features",
    "world.model_specific",
    "pool.volume",
    "pool.tau_k",
    "pool.tau_d",
    "pool.max_draws",
    "pool.normality.kind",
    "pool.normality.channels",
    "attack.mode",
    "attack.norm",
    "attack.epsilon",
    "attack.tau_c",
    "attack.top_n",
    "attack.t_max",
    "attack.q_max",
    "attack.step.momentum",
    "attack.step.initial_step",
    "attack.step.first_checkpoint",
    "attack.step.checkpoint_shrink",
    "attack.step.min_checkpoint_gap",
    "attack.step.rho",
    "attack.greedy.initial_step",
    "attack.greedy.min_step",
    "attack.greedy.gain_decay",
    "attack.greedy.max_touched",
    "targets.model",
    "targets.count",
    "targets.file",
    "calibration.scope",
    "calibration.file",
    "paths.pool",
    "paths.thresholds",
    "paths.results",
    "paths.report",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    Synthetic,
    /// External models speaking the line protocol; each entry is a command
    /// line (program followed by its arguments).
    Adapters {
        generator: Vec<String>,
        embedders: Vec<Vec<String>>,
        detector: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauC {
    Fixed(f64),
    Keyword(CalibrateKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrateKeyword {
    Calibrate,
}

impl TauC {
    pub const CALIBRATE: TauC = TauC::Keyword(CalibrateKeyword::Calibrate);

    pub fn fixed(self) -> Option<f64> {
        match self {
            TauC::Fixed(v) => Some(v),
            TauC::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSection {
    pub volume: usize,
    pub tau_k: f64,
    pub tau_d: f64,
    pub max_draws: Option<u64>,
    pub normality: NormalityMode,
}

impl Default for PoolSection {
    fn default() -> Self {
        let spec = PoolSpec::default();
        Self {
            volume: spec.volume,
            tau_k: spec.tau_k,
            tau_d: spec.tau_d,
            max_draws: None,
            normality: spec.normality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub mode: Access,
    pub norm: Norm,
    pub epsilon: f64,
    pub tau_c: TauC,
    pub top_n: usize,
    pub t_max: Option<usize>,
    pub q_max: Option<u64>,
    pub step: StepConfig,
    pub greedy: GreedyConfig,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            mode: a.mode,
            norm: a.norm,
            epsilon: a.epsilon,
            tau_c: TauC::Fixed(a.tau_c),
            top_n: a.top_n,
            t_max: None,
            q_max: None,
            step: a.step,
            greedy: a.greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetsSection {
    /// Recognition model whose embeddings leak.
    pub model: String,
    /// Number of synthetic gallery targets.
    pub count: usize,
    /// JSON-lines target file (adapter backend).
    pub file: Option<PathBuf>,
}

impl Default for TargetsSection {
    fn default() -> Self {
        Self {
            model: crate::models::embedder_id(0),
            count: 50,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub scope: PairScope,
    /// Identity-grouped images as JSON (adapter backend).
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub pool: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: Backend,
    pub world: WorldConfig,
    pub pool: PoolSection,
    pub attack: AttackSection,
    pub targets: TargetsSection,
    pub calibration: CalibrationSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: Backend::Synthetic,
            world: WorldConfig::default(),
            pool: PoolSection::default(),
            attack: AttackSection::default(),
            targets: TargetsSection::default(),
            calibration: CalibrationSection::default(),
            paths: Paths::default(),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(e.to_string())
}

/// Map `INVKIT_ATTACK_STEP_RHO` to `attack.step.rho`.
pub fn env_key(var: &str) -> Option<&'static str> {
    let rest = var.strip_prefix(ENV_PREFIX)?;
    KEYS.iter()
        .copied()
        .find(|k| k.replace('.', "_").eq_ignore_ascii_case(rest))
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(format!("`{p}` must be a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty::<(String, String)>())
    }

    /// Parse `text`, then apply `INVKIT_*` entries from `env`. Variables
    /// with the prefix that name no known key are rejected.
    pub fn from_toml_with_env<I, K, V>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(invalid)?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.as_ref().starts_with(ENV_PREFIX))
            .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
            .collect();
        overrides.sort();
        for (var, raw) in overrides {
            let key = env_key(&var).ok_or_else(|| invalid(format!("unknown override variable {var}")))?;
            set_path(&mut table, key, parse_env_value(&raw))?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(invalid)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(invalid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend == Backend::Synthetic {
            self.world.validate()?;
        }
        if let Backend::Adapters {
            generator,
            embedders,
            detector,
        } = &self.backend
        {
            if generator.is_empty() || detector.is_empty() || embedders.is_empty() || embedders.iter().any(Vec::is_empty) {
                return Err(invalid("adapter commands must not be empty"));
            }
        }
        self.pool_spec().validate()?;
        if let Some(t) = self.attack.tau_c.fixed() {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid(format!("attack.tau_c = {t} is outside [0, 1]")));
            }
        }
        self.attack_config(1.0).validate()
    }

    pub fn pool_spec(&self) -> PoolSpec {
        PoolSpec {
            volume: self.pool.volume,
            tau_k: self.pool.tau_k,
            tau_d: self.pool.tau_d,
            build_seed: derive_seed(self.seed, "pool"),
            max_draws: self.pool.max_draws,
            normality: self.pool.normality,
        }
    }

    /// Attack settings with the confidence threshold resolved.
    pub fn attack_config(&self, tau_c: f64) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            mode: a.mode,
            norm: a.norm,
            epsilon: a.epsilon,
            tau_c: a.tau_c.fixed().unwrap_or(tau_c),
            top_n: a.top_n,
            t_max: match a.mode {
                Access::WhiteBox => a.t_max.or(Some(DEFAULT_T_MAX)),
                Access::BlackBox => a.t_max,
            },
            q_max: a.q_max,
            step: a.step.clone(),
            greedy: a.greedy.clone(),
        }
    }

    pub fn checksum(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_fail_closed() {
        assert!(matches!(
            RunConfig::from_toml_str("[attack]\nepsilom = 3.0\n"),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(matches!(RunConfig::from_toml_str("sed = 1\n"), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn tau_c_keyword() {
        let c = RunConfig::from_toml_str("[attack]\ntau_c = \"calibrate\"\n").unwrap();
        assert_eq!(c.attack.tau_c, TauC::CALIBRATE);
        assert_eq!(c.attack_config(0.93).tau_c, 0.93);
        assert!(RunConfig::from_toml_str("[attack]\ntau_c = \"sometimes\"\n").is_err());
        assert!(RunConfig::from_toml_str("[attack]\ntau_c = 1.5\n").is_err());
    }

    #[test]
    fn mode_budget_pairing() {
        let bb = "[attack]\nmode = \"blackbox\"\nt_max = 100\n";
        assert!(RunConfig::from_toml_str(bb).is_err());
        let bb = "[attack]\nmode = \"blackbox\"\nq_max = 5000\n";
        let c = RunConfig::from_toml_str(bb).unwrap();
        assert_eq!(c.attack_config(1.0).t_max, None);
        assert!(RunConfig::from_toml_str("[attack]\nmode = \"blackbox\"\n").is_err());
        assert!(RunConfig::from_toml_str("[attack]\nq_max = 5000\n").is_err());
        let wb = RunConfig::from_toml_str("").unwrap();
        assert_eq!(wb.attack_config(1.0).t_max, Some(DEFAULT_T_MAX));
        assert!(RunConfig::from_toml_with_env("", [("INVKIT_ATTACK_T_MAX", "0")]).is_err());
    }

    #[test]
    fn env_overrides() {
        let c = RunConfig::from_toml_with_env(
            "seed = 1\n",
            [
                ("INVKIT_SEED", "9"),
                ("INVKIT_ATTACK_EPSILON", "12"),
                ("INVKIT_ATTACK_STEP_MOMENTUM", "0.5"),
                ("INVKIT_TARGETS_MODEL", "synthetic-1"),
                ("HOME", "/root"),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.attack.epsilon, 12.0);
        assert_eq!(c.attack.step.momentum, 0.5);
        assert_eq!(c.targets.model, "synthetic-1");
        assert!(RunConfig::from_toml_with_env("", [("INVKIT_ATTACK_EPSILOM", "1")]).is_err());
    }

    #[test]
    fn env_key_lookup() {
        assert_eq!(env_key("INVKIT_ATTACK_TAU_C"), Some("attack.tau_c"));
        assert_eq!(env_key("INVKIT_POOL_NORMALITY_KIND"), Some("pool.normality.kind"));
        assert_eq!(env_key("INVKIT_NOPE"), None);
        assert_eq!(env_key("OTHER_SEED"), None);
    }

    fn leaf_paths(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    leaf_paths(&p, v, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }

    #[test]
    fn key_table_matches_schema() {
        let mut full = RunConfig::default();
        full.backend = Backend::Adapters {
            generator: vec!["g".into()],
            embedders: vec![vec!["e".into()]],
            detector: vec!["d".into()],
        };
        full.pool.max_draws = Some(1);
        full.pool.normality = NormalityMode::PerChannel { channels: 3 };
        full.attack.t_max = Some(1);
        full.attack.q_max = Some(1);
        full.attack.greedy.max_touched = Some(1);
        full.targets.file = Some("t".into());
        full.calibration.file = Some("c".into());
        full.paths = Paths {
            pool: Some("p".into()),
            thresholds: Some("t".into()),
            results: Some("r".into()),
            report: Some("o".into()),
        };
        let mut paths = Vec::new();
        leaf_paths("", &toml::Value::try_from(&full).unwrap(), &mut paths);
        let mut keys: Vec<&str> = KEYS.to_vec();
        keys.sort_unstable();
        paths.sort_unstable();
        assert_eq!(paths, keys);
    }
}
