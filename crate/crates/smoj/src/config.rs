//! Layered command settings. Each key is taken from the first source that
//! sets it: `SMOJ_*` environment variables, then command-line flags, then
//! the `--config` TOML file, then built-in defaults.

use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use smoj_core::RenderMode;

pub const ENV_PREFIX: &str = "SMOJ_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config file {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("environment variable {name}={value:?}: {reason}")]
    Env {
        name: String,
        value: String,
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
pub enum Mode {
    #[default]
    #[serde(rename = "3dgs")]
    Volumetric,
    #[serde(rename = "2dgs")]
    Surfel,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "3dgs" => Ok(Mode::Volumetric),
            "2dgs" => Ok(Mode::Surfel),
            other => Err(format!("unknown mode {other:?} (3dgs or 2dgs)")),
        }
    }
}

impl From<Mode> for RenderMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Volumetric => RenderMode::Volumetric,
            Mode::Surfel => RenderMode::Surfel,
        }
    }
}

/// One layer of settings; `None` defers to the next layer.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub mode: Option<Mode>,
    pub fps: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub port: Option<u16>,
    pub endpoint: Option<String>,
    pub threads: Option<usize>,
}

fn env_value<T: FromStr>(vars: &[(String, String)], key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let name = format!("{ENV_PREFIX}{key}");
    match vars.iter().rev().find(|(k, _)| *k == name) {
        None => Ok(None),
        Some((_, v)) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::Env {
            name,
            value: v.clone(),
            reason: e.to_string(),
        }),
    }
}

impl Overrides {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        Self::from_toml(&text, &shown)
    }

    /// Reads `SMOJ_WIDTH`, `SMOJ_HEIGHT`, `SMOJ_MODE`, `SMOJ_FPS`,
    /// `SMOJ_ITERATIONS`, `SMOJ_SEED`, `SMOJ_PORT`, `SMOJ_ENDPOINT` and
    /// `SMOJ_THREADS` from `vars`; later duplicates win.
    pub fn from_env<I, K, V>(vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let vars: Vec<(String, String)> = vars
            .into_iter()
            .map(|(k, v)| (k.into(), v.into()))
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        Ok(Self {
            width: env_value(&vars, "WIDTH")?,
            height: env_value(&vars, "HEIGHT")?,
            mode: env_value(&vars, "MODE")?,
            fps: env_value(&vars, "FPS")?,
            iterations: env_value(&vars, "ITERATIONS")?,
            seed: env_value(&vars, "SEED")?,
            port: env_value(&vars, "PORT")?,
            endpoint: env_value(&vars, "ENDPOINT")?,
            threads: env_value(&vars, "THREADS")?,
        })
    }

    /// Keys set in `self` win over `lower`.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            width: self.width.or(lower.width),
            height: self.height.or(lower.height),
            mode: self.mode.or(lower.mode),
            fps: self.fps.or(lower.fps),
            iterations: self.iterations.or(lower.iterations),
            seed: self.seed.or(lower.seed),
            port: self.port.or(lower.port),
            endpoint: self.endpoint.or(lower.endpoint),
            threads: self.threads.or(lower.threads),
        }
    }
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub width: u32,
    pub height: u32,
    pub mode: Mode,
    pub fps: f64,
    pub iterations: usize,
    pub seed: u64,
    pub port: u16,
    pub endpoint: String,
    /// 0 uses every core.
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            mode: Mode::Volumetric,
            fps: 30.0,
            iterations: 2000,
            seed: 0,
            port: 8080,
            endpoint: "http://127.0.0.1:8188".into(),
            threads: 0,
        }
    }
}

impl Settings {
    /// Resolves `env > flags > file > defaults`.
    pub fn resolve(env: Overrides, flags: Overrides, file: Overrides) -> Settings {
        let o = env.over(flags).over(file);
        let d = Settings::default();
        Settings {
            width: o.width.unwrap_or(d.width),
            height: o.height.unwrap_or(d.height),
            mode: o.mode.unwrap_or(d.mode),
            fps: o.fps.unwrap_or(d.fps),
            iterations: o.iterations.unwrap_or(d.iterations),
            seed: o.seed.unwrap_or(d.seed),
            port: o.port.unwrap_or(d.port),
            endpoint: o.endpoint.unwrap_or(d.endpoint),
            threads: o.threads.unwrap_or(d.threads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_wins_then_flags_then_file() {
        let file = Overrides::from_toml("width = 10\nheight = 11\nport = 12\nmode = \"2dgs\"", "f")
            .unwrap();
        let flags = Overrides {
            width: Some(20),
            height: Some(21),
            ..Overrides::default()
        };
        let env = Overrides::from_env([("SMOJ_WIDTH", "30"), ("PATH", "/bin")]).unwrap();
        let s = Settings::resolve(env, flags, file);
        assert_eq!(
            (s.width, s.height, s.port, s.mode),
            (30, 21, 12, Mode::Surfel)
        );
        assert_eq!(s.seed, 0);
    }

    #[test]
    fn bad_sources_are_reported() {
        assert!(matches!(
            Overrides::from_env([("SMOJ_PORT", "high")]),
            Err(ConfigError::Env { .. })
        ));
        assert!(Overrides::from_env([("SMOJ_MODE", "4dgs")]).is_err());
        assert!(Overrides::from_toml("colour = 1", "f").is_err());
        assert!(Overrides::from_toml("mode = \"4dgs\"", "f").is_err());
    }
}
