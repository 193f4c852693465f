//! Experiment configuration: one TOML file describing the instance, the
//! policy class, the critic features, the run and the analysis grid.
//!
//! ```toml
//! n_seeds = 5
//! out_dir = "out"
//!
//! [mdp]
//! kind = "random"          # or: kind = "file", path = "mdp.json"
//! n_states = 3
//! n_actions = 2
//! gamma = 0.9
//! seed = 7
//!
//! [features]
//! kind = "tabular"         # "tabular_prefix" {k}, "random" {k, seed}, "file" {path}
//!
//! [policy]
//! epsilon_floor = 0.05
//! psi = { kind = "tabular" }   # "inline" {rows}, "random" {dim, scale, seed}, "file" {path}
//!
//! [ac]
//! total_steps = 200000
//! actor_scale = "auto"     # or a number
//! omega_radius = "auto"    # or a number
//! diag_stride = 16
//!
//! [sampler]
//! seed = 0
//! critic_mode = "exact"    # or "rollout"
//!
//! [grid]
//! count = 32
//! radius = 2.0
//! seed = 0
//!
//! # Optional: run logs (CSV) whose recorded θ values join the grid.
//! # visited_logs = ["out/run_seed0.csv"]
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::actor_critic::{default_omega_radius, AcConfig, Schedule};
use crate::analysis::{default_actor_scale, ConstantSet, EstimateConfig};
use crate::critic::{FeatureFile, FeatureMatrix};
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, MdpFile, RandomMdpSpec};
use crate::oracle::ThetaGridSpec;
use crate::policy::SoftmaxPolicy;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    File { path: PathBuf },
    Random(RandomMdpSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSource {
    #[default]
    Tabular,
    /// First `k` columns of the identity.
    TabularPrefix {
        k: usize,
    },
    /// Gaussian rank-`k` features, rescaled to unit max row norm.
    Random {
        k: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

/// Source of the policy features `ψ(s,a)`, one row per state-action pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiSource {
    #[default]
    Tabular,
    Inline {
        rows: Vec<Vec<f64>>,
    },
    /// Entries uniform in `[−scale, scale]`.
    Random {
        dim: usize,
        scale: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub epsilon_floor: f64,
    #[serde(default)]
    pub psi: PsiSource,
}

/// A number, or `"auto"` to derive it from the estimated constants.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Setting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Setting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Setting::Auto => s.serialize_str("auto"),
            Setting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Setting::Fixed(v)),
            Raw::Int(v) => Ok(Setting::Fixed(v as f64)),
            Raw::Str(s) if s == "auto" => Ok(Setting::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got {s:?}"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Auto => f.write_str("auto"),
            Setting::Fixed(v) => write!(f, "{v}"),
        }
    }
}

fn default_diag_stride() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcSection {
    pub total_steps: usize,
    #[serde(default)]
    pub actor_scale: Setting,
    #[serde(default)]
    pub omega_radius: Setting,
    #[serde(default)]
    pub alpha_schedule: Schedule,
    #[serde(default)]
    pub beta_schedule: Schedule,
    #[serde(default = "default_diag_stride")]
    pub diag_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_init: Option<Vec<f64>>,
}

impl AcSection {
    pub fn needs_constants(&self) -> bool {
        self.actor_scale == Setting::Auto || self.omega_radius == Setting::Auto
    }
}

fn one() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    #[serde(default)]
    pub features: FeatureSource,
    pub policy: PolicySpec,
    pub ac: AcSection,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub grid: ThetaGridSpec,
    #[serde(default)]
    pub visited_logs: Vec<PathBuf>,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

/// Everything needed to run an experiment, built from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub mdp: FiniteMdp,
    pub policy_class: SoftmaxPolicy,
    pub features: FeatureMatrix,
    pub thetas: Vec<DVector<f64>>,
}

/// A parsed config together with the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, detail: impl fmt::Display) -> Error {
    Error::Parse { path: path.display().to_string(), detail: detail.to_string() }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `dotted.key.path = value`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::InvalidConfig(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String], origin: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err(origin, e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e| parse_err(origin, e))?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    /// Files the config refers to, in a fixed order.
    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let MdpSource::File { path } = &self.mdp {
            out.push(path.as_path());
        }
        if let FeatureSource::File { path } = &self.features {
            out.push(path.as_path());
        }
        if let PsiSource::File { path } = &self.policy.psi {
            out.push(path.as_path());
        }
        out.extend(self.visited_logs.iter().map(PathBuf::as_path));
        out
    }
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config = ExperimentConfig::from_toml_str(&text, overrides, path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that referenced files exist and counts are sensible.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        for p in c.referenced_files() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::InvalidConfig(format!("referenced file does not exist: {}", full.display())));
            }
        }
        if c.n_seeds == 0 {
            return Err(Error::InvalidConfig("n_seeds must be >= 1".into()));
        }
        if c.grid.count == 0 {
            return Err(Error::InvalidConfig("grid.count must be >= 1".into()));
        }
        if !(c.grid.radius >= 0.0 && c.grid.radius.is_finite()) {
            return Err(Error::InvalidConfig("grid.radius must be finite and non-negative".into()));
        }
        for (name, s) in [("ac.actor_scale", c.ac.actor_scale), ("ac.omega_radius", c.ac.omega_radius)] {
            if let Setting::Fixed(v) = s {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidConfig(format!("{name} = {v} must be positive")));
                }
            }
        }
        if c.ac.total_steps < 2 {
            return Err(Error::InvalidConfig("ac.total_steps must be >= 2".into()));
        }
        if c.ac.diag_stride == 0 {
            return Err(Error::InvalidConfig("ac.diag_stride must be >= 1".into()));
        }
        c.sampler.validate()
    }

    /// SHA-256 over the canonical JSON form of the config followed by the
    /// bytes of every referenced file. The output directory and seed count
    /// do not change any single run and are left out.
    pub fn hash(&self) -> Result<String> {
        let mut value =
            serde_json::to_value(&self.config).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("n_seeds");
        }
        let mut h = Sha256::new();
        h.update(value.to_string().as_bytes());
        for p in self.config.referenced_files() {
            let full = self.resolve(p);
            let bytes = std::fs::read(&full).map_err(|e| io_err(&full, e))?;
            h.update(b"\0file\0");
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn build(&self) -> Result<Experiment> {
        let c = &self.config;
        let mdp = match &c.mdp {
            MdpSource::Random(spec) => spec.generate()?,
            MdpSource::File { path } => {
                let f: MdpFile = read_json_file(&self.resolve(path))?;
                FiniteMdp::try_from(f)?
            }
        };
        let n_sa = mdp.n_sa();
        let features = match &c.features {
            FeatureSource::Tabular => FeatureMatrix::tabular(n_sa),
            FeatureSource::TabularPrefix { k } => FeatureMatrix::tabular_prefix(n_sa, *k)?,
            FeatureSource::Random { k, seed } => FeatureMatrix::random(n_sa, *k, *seed)?,
            FeatureSource::File { path } => {
                let f: FeatureFile = read_json_file(&self.resolve(path))?;
                FeatureMatrix::try_from(f)?
            }
        };
        let (s, a, eps) = (mdp.n_states(), mdp.n_actions(), c.policy.epsilon_floor);
        let policy_class = match &c.policy.psi {
            PsiSource::Tabular => SoftmaxPolicy::tabular(s, a, eps)?,
            PsiSource::Inline { rows } => {
                let dim = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidPolicy("psi rows have unequal lengths".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                let psi = DMatrix::from_row_slice(rows.len(), dim, &flat);
                SoftmaxPolicy::new(s, a, psi, eps, DVector::zeros(dim))?
            }
            PsiSource::Random { dim, scale, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let psi = DMatrix::from_fn(n_sa, *dim, |_, _| rng.random_range(-1.0..=1.0) * scale);
                SoftmaxPolicy::new(s, a, psi, eps, DVector::zeros(*dim))?
            }
            PsiSource::File { path } => {
                let f: FeatureFile = read_json_file(&self.resolve(path))?;
                if f.d == 0 || !f.entries.len().is_multiple_of(f.d) {
                    return Err(Error::InvalidPolicy("psi file entries do not split into rows".into()));
                }
                let psi = DMatrix::from_row_slice(f.entries.len() / f.d, f.d, &f.entries);
                SoftmaxPolicy::new(s, a, psi, eps, DVector::zeros(f.d))?
            }
        };
        let mut thetas = c.grid.points(policy_class.dim());
        for p in &c.visited_logs {
            let full = self.resolve(p);
            for row in crate::cli_io::files::read_log_csv(&full)? {
                if row.theta.len() != policy_class.dim() {
                    return Err(parse_err(
                        &full,
                        format!("logged θ has {} entries, policy has {}", row.theta.len(), policy_class.dim()),
                    ));
                }
                thetas.push(DVector::from_vec(row.theta));
            }
        }
        Ok(Experiment { mdp, policy_class, features, thetas })
    }

    /// Concrete run parameters for seed index `i`. `consts` must be given
    /// when either scale is `"auto"`.
    pub fn ac_config(&self, consts: Option<&ConstantSet>, seed_index: usize) -> Result<AcConfig> {
        let ac = &self.config.ac;
        let need = || consts.ok_or_else(|| Error::InvalidConfig("\"auto\" settings need estimated constants".into()));
        let actor_scale = match ac.actor_scale {
            Setting::Fixed(v) => v,
            Setting::Auto => default_actor_scale(need()?),
        };
        let omega_radius = match ac.omega_radius {
            Setting::Fixed(v) => v,
            Setting::Auto => {
                let c = need()?;
                default_omega_radius(c.mu, c.c_max)
            }
        };
        let mut out = AcConfig::new(ac.total_steps, actor_scale, omega_radius);
        out.alpha_schedule = ac.alpha_schedule;
        out.beta_schedule = ac.beta_schedule;
        out.diag_stride = ac.diag_stride;
        out.theta_init = ac.theta_init.clone();
        out.omega_init = ac.omega_init.clone();
        out.sampler = self.config.sampler.clone();
        out.sampler.seed = derived_seed(self.config.sampler.seed, seed_index);
        Ok(out)
    }
}

/// Seed of the `i`-th run in a multi-seed experiment.
pub fn derived_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

pub(crate) fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
n_seeds = 2
[mdp]
kind = "random"
n_states = 3
n_actions = 2
gamma = 0.9
seed = 4
[policy]
epsilon_floor = 0.05
[ac]
total_steps = 100
"#;

    fn load(text: &str, overrides: &[&str]) -> LoadedConfig {
        let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        let config = ExperimentConfig::from_toml_str(text, &ov, Path::new("test.toml")).unwrap();
        LoadedConfig { config, base_dir: PathBuf::new() }
    }

    #[test]
    fn defaults_fill_in() {
        let c = load(BASIC, &[]).config;
        assert_eq!(c.features, FeatureSource::Tabular);
        assert_eq!(c.ac.actor_scale, Setting::Auto);
        assert_eq!(c.ac.diag_stride, 100);
        assert_eq!(c.grid, ThetaGridSpec::default());
        assert_eq!(c.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c =
            load(BASIC, &["ac.actor_scale=0.5", "sampler.critic_mode=rollout", "features.kind=tabular_prefix", "features.k=3"])
                .config;
        assert_eq!(c.ac.actor_scale, Setting::Fixed(0.5));
        assert_eq!(c.sampler.critic_mode, crate::sampler::CriticMode::Rollout);
        assert_eq!(c.features, FeatureSource::TabularPrefix { k: 3 });
    }

    #[test]
    fn malformed_override_rejected() {
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let text = format!("{BASIC}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text, &[], Path::new("x")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = load(
            BASIC,
            &["ac.omega_radius=12", "policy.psi.kind=random", "policy.psi.dim=2", "policy.psi.scale=1.5", "policy.psi.seed=3"],
        )
        .config;
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, &[], Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_tracks_behavior_but_not_output_dir() {
        let base = load(BASIC, &[]).hash().unwrap();
        assert_eq!(base, load(BASIC, &["out_dir=\"elsewhere\"", "n_seeds=7"]).hash().unwrap());
        for o in [
            "ac.total_steps=101",
            "sampler.seed=1",
            "mdp.seed=5",
            "grid.count=8",
            "policy.epsilon_floor=0.1",
            "estimate.noise_draws=2000",
            "ac.beta_schedule={kind=\"zero\"}",
        ] {
            assert_ne!(base, load(BASIC, &[o]).hash().unwrap(), "{o}");
        }
    }

    #[test]
    fn builds_and_resolves_fixed_settings() {
        let l = load(BASIC, &["ac.actor_scale=0.25", "ac.omega_radius=9"]);
        let exp = l.build().unwrap();
        assert_eq!(exp.mdp.n_sa(), 6);
        assert_eq!(exp.features.dim(), 6);
        assert_eq!(exp.thetas.len(), 32);
        let ac = l.ac_config(None, 3).unwrap();
        assert_eq!((ac.actor_scale, ac.omega_radius, ac.sampler.seed), (0.25, 9.0, 3));
    }

    #[test]
    fn auto_settings_need_constants() {
        assert!(load(BASIC, &[]).ac_config(None, 0).is_err());
    }

    #[test]
    fn inline_psi_shape_checked() {
        let l = load(BASIC, &["policy.psi={kind=\"inline\", rows=[[1.0],[2.0]]}"]);
        assert!(l.build().is_err());
        let l = load(BASIC, &["policy.psi={kind=\"inline\", rows=[[1.0],[0.0],[0.5],[0.0],[-1.0],[0.0]]}"]);
        assert_eq!(l.build().unwrap().policy_class.dim(), 1);
    }

    #[test]
    fn missing_file_named() {
        let l = load(BASIC, &["mdp={kind=\"file\", path=\"nope.json\"}"]);
        let msg = l.validate().unwrap_err().to_string();
        assert!(msg.contains("nope.json"), "{msg}");
    }

    #[test]
    fn visited_logs_extend_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let row = |t: usize, th: f64| crate::actor_critic::IterateRow {
            t,
            grad_sq: 0.0,
            delta_sq: 0.0,
            value: 0.0,
            omega_norm: 0.0,
            theta_norm: 0.0,
            omega: vec![0.0; 6],
            theta: vec![th; 6],
        };
        let log = dir.path().join("seen.csv");
        crate::cli_io::files::write_log_csv(&log, &[row(0, 5.0), row(1, -7.5)]).unwrap();
        let mut l = load(BASIC, &["grid.count=3", &format!("visited_logs=[{:?}]", log.display().to_string())]);
        l.validate().unwrap();
        let thetas = l.build().unwrap().thetas;
        assert_eq!(thetas.len(), 5);
        assert_eq!(thetas[4][2], -7.5);
        let h = l.hash().unwrap();
        crate::cli_io::files::write_log_csv(&log, &[row(0, 5.0)]).unwrap();
        assert_ne!(h, l.hash().unwrap());
        l.config.visited_logs = vec!["gone.csv".into()];
        assert!(l.validate().unwrap_err().to_string().contains("gone.csv"));
    }
}
