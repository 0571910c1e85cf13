//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gensr_core::analysis::{GaussianSandboxConfig, MiMode, MineConfig};
use gensr_core::cf::CfConfig;
use gensr_core::corpus::GeneratorConfig;
use gensr_core::genmodel::{Mode, ModelConfig};
use gensr_core::par::Exec;
use gensr_core::training::TrainConfig;

use crate::CliError;

/// Every accepted key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("out", "run"),
    ("data_dir", ""),
    ("seed", "0"),
    ("exec", "parallel"),
    // corpus
    ("users", "50"),
    ("items", "300"),
    ("category_depth", "2"),
    ("category_branching", "4"),
    ("mean_interactions", "20"),
    ("interaction_spread", "5"),
    ("rec_ratio", "0.5"),
    ("latent_dim", "8"),
    ("affinity_sharpness", "8"),
    ("affinity_offset", "8"),
    ("filler_tokens", "2"),
    // cf
    ("cf_dim", "32"),
    ("cf_layers", "2"),
    ("cf_epochs", "60"),
    ("cf_lr", "0.05"),
    ("cf_batch", "32"),
    ("cf_init_std", "0.1"),
    ("cf_weight_decay", "0.0001"),
    // training
    ("paradigm", "gensr"),
    ("mode", "rerank"),
    ("tau", "0.05"),
    ("beta", "0.1"),
    ("gamma", "1"),
    ("lr", "0.05"),
    ("epochs", "20"),
    ("max_steps", ""),
    ("batch_size", "8"),
    ("width", "64"),
    ("heads", "4"),
    ("ffn", "128"),
    ("enc_layers", "2"),
    ("dec_layers", "2"),
    ("max_history", "20"),
    ("max_input", "128"),
    ("positional", "true"),
    // evaluation
    ("split", "test"),
    ("beam", "20"),
    // analysis
    ("mine_hidden", "64"),
    ("mine_steps", "300"),
    ("mine_batch", "256"),
    ("mine_lr", "0.002"),
    ("mine_ema", "0.9"),
    ("mine_holdout", "0.3"),
    ("kde_grid", "80"),
    ("sandbox_dim", "5"),
    ("sandbox_n", "30"),
    ("sandbox_trials", "200"),
    ("sandbox_noise", "1"),
    ("mi_mode", "analytic"),
];

/// Effective configuration: defaults, then the config file, then overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `key = value` lines; `#` starts a comment line, blank lines are skipped.
pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| config_error(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(config_error(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn new(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Missing(format!("config file {}: {e}", path.display())))?;
            pairs.extend(parse_flat(&text)?);
        }
        pairs.extend(overrides.iter().cloned());
        for (k, v) in pairs {
            if !values.contains_key(&k) {
                return Err(config_error(format!("unknown key `{k}`")));
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("`{key}` has no default"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key);
        raw.parse().map_err(|_| config_error(format!("`{key}`: cannot parse `{raw}`")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    /// Corpus directory: `data_dir` when set, else `<out>/data`.
    pub fn data_dir(&self) -> PathBuf {
        match self.raw("data_dir") {
            "" => self.out().join("data"),
            d => PathBuf::from(d),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn exec(&self) -> Result<Exec, CliError> {
        match self.raw("exec") {
            "parallel" => Ok(Exec::auto()),
            "sequential" => Ok(Exec::Sequential),
            other => Err(config_error(format!("`exec` must be parallel or sequential, got `{other}`"))),
        }
    }

    pub fn paradigm(&self) -> Result<Paradigm, CliError> {
        match self.raw("paradigm") {
            "gensr" => Ok(Paradigm::Gensr),
            "disc" => Ok(Paradigm::Disc),
            other => Err(config_error(format!("`paradigm` must be gensr or disc, got `{other}`"))),
        }
    }

    pub fn mode(&self) -> Result<Mode, CliError> {
        match self.raw("mode") {
            "rerank" => Ok(Mode::Rerank),
            "fullrank" => Ok(Mode::Fullrank),
            other => Err(config_error(format!("`mode` must be rerank or fullrank, got `{other}`"))),
        }
    }

    pub fn generator(&self) -> Result<GeneratorConfig, CliError> {
        Ok(GeneratorConfig {
            users: self.get("users")?,
            items: self.get("items")?,
            category_depth: self.get("category_depth")?,
            category_branching: self.get("category_branching")?,
            mean_interactions: self.get("mean_interactions")?,
            interaction_spread: self.get("interaction_spread")?,
            rec_ratio: self.get("rec_ratio")?,
            latent_dim: self.get("latent_dim")?,
            affinity_sharpness: self.get("affinity_sharpness")?,
            affinity_offset: self.get("affinity_offset")?,
            filler_tokens: self.get("filler_tokens")?,
            seed: self.seed()?,
        })
    }

    pub fn cf(&self) -> Result<CfConfig, CliError> {
        Ok(CfConfig {
            dim: self.get("cf_dim")?,
            layers: self.get("cf_layers")?,
            epochs: self.get("cf_epochs")?,
            lr: self.get("cf_lr")?,
            batch: self.get("cf_batch")?,
            init_std: self.get("cf_init_std")?,
            weight_decay: self.get("cf_weight_decay")?,
            seed: self.seed()?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            tau: self.get("tau")?,
            beta: self.get("beta")?,
            gamma: self.get("gamma")?,
            lr: self.get("lr")?,
            epochs: self.get("epochs")?,
            max_steps: self.optional("max_steps")?,
            batch_size: self.get("batch_size")?,
            seed: self.seed()?,
            mode: self.mode()?,
            model: ModelConfig {
                width: self.get("width")?,
                heads: self.get("heads")?,
                ffn: self.get("ffn")?,
                enc_layers: self.get("enc_layers")?,
                dec_layers: self.get("dec_layers")?,
                max_history: self.get("max_history")?,
                max_input: self.get("max_input")?,
                positional: self.get("positional")?,
            },
        })
    }

    pub fn mine(&self) -> Result<MineConfig, CliError> {
        Ok(MineConfig {
            hidden: self.get("mine_hidden")?,
            steps: self.get("mine_steps")?,
            batch_size: self.get("mine_batch")?,
            lr: self.get("mine_lr")?,
            ema: self.get("mine_ema")?,
            holdout: self.get("mine_holdout")?,
            seed: self.seed()?,
        })
    }

    pub fn sandbox(&self) -> Result<GaussianSandboxConfig, CliError> {
        let mut cfg = GaussianSandboxConfig::with_size(self.get("sandbox_dim")?, self.get("sandbox_n")?, self.get("sandbox_trials")?);
        cfg.noise_var = self.get("sandbox_noise")?;
        cfg.seed = self.seed()?;
        cfg.mi_mode = match self.raw("mi_mode") {
            "analytic" => MiMode::Analytic,
            "literal" => MiMode::Literal,
            other => return Err(config_error(format!("`mi_mode` must be analytic or literal, got `{other}`"))),
        };
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paradigm {
    Gensr,
    Disc,
}

impl Paradigm {
    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Gensr => "gensr",
            Paradigm::Disc => "disc",
        }
    }
}
