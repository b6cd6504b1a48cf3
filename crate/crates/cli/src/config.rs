//! Model flags and the optional `key = value` config file they override.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use structattn::attention_init::{InitConfig, InitMethod, ScaleMode};
use structattn::conv_matrix::{GridShape, PaddingMode};
use structattn::Error;

pub const SEED_ENV: &str = "STRUCTATTN_SEED";

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    /// Token grid as ROWS COLS.
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"])]
    pub grid: Option<Vec<usize>>,
    /// Embedding dimension D.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Per-head width d.
    #[arg(long)]
    pub dhead: Option<usize>,
    /// Odd convolution kernel size f.
    #[arg(long)]
    pub filter: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// impulse | default | mimetic
    #[arg(long)]
    pub method: Option<String>,
    /// zero | circular
    #[arg(long)]
    pub padding: Option<String>,
    /// inv_sqrt_d | paper_exact
    #[arg(long)]
    pub scale_mode: Option<String>,
    /// Master seed; falls back to the config file, then $STRUCTATTN_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Std of the truncated-normal positional encoding.
    #[arg(long)]
    pub std_pos: Option<f64>,
    /// Identity strength of the mimetic comparator.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Plain-text `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub struct Resolved {
    pub config: InitConfig,
    pub method: InitMethod,
    pub seed: u64,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn read_file(path: &Path) -> Result<HashMap<String, String>, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1)));
        };
        out.insert(key.trim().replace('-', "_"), value.trim().to_string());
    }
    Ok(out)
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<Resolved, Error> {
        let mut file = match &self.config {
            Some(path) => read_file(path)?,
            None => HashMap::new(),
        };
        let mut take = |key: &str| file.remove(key);

        let mut cfg = InitConfig::default();
        let mut method = InitMethod::Impulse;
        let mut seed = None;

        // config file first, then flags on top
        if let Some(v) = take("grid") {
            let parts: Vec<&str> = v.split(|c: char| c == 'x' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let [r, c] = parts.as_slice() else {
                return Err(Error::Config(format!("bad grid `{v}`")));
            };
            cfg.grid = GridShape::new(parse("grid", r)?, parse("grid", c)?)?;
        }
        macro_rules! from_file {
            ($key:literal, $field:expr) => {
                if let Some(v) = take($key) {
                    $field = parse($key, &v)?;
                }
            };
        }
        from_file!("dim", cfg.dim);
        from_file!("heads", cfg.heads);
        from_file!("layers", cfg.layers);
        from_file!("dhead", cfg.d_head);
        from_file!("filter", cfg.filter);
        from_file!("alpha", cfg.alpha);
        from_file!("beta", cfg.beta);
        from_file!("gamma", cfg.gamma);
        from_file!("std_pos", cfg.pos_std);
        from_file!("mu", cfg.mimetic_mu);
        from_file!("method", method);
        from_file!("padding", cfg.padding);
        from_file!("scale_mode", cfg.scale_mode);
        if let Some(v) = take("seed") {
            seed = Some(parse::<u64>("seed", &v)?);
        }
        if let Some(key) = file.keys().next() {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }

        if let Some(g) = &self.grid {
            cfg.grid = GridShape::new(g[0], g[1])?;
        }
        macro_rules! from_flag {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        from_flag!(self.dim, cfg.dim);
        from_flag!(self.heads, cfg.heads);
        from_flag!(self.layers, cfg.layers);
        from_flag!(self.dhead, cfg.d_head);
        from_flag!(self.filter, cfg.filter);
        from_flag!(self.alpha, cfg.alpha);
        from_flag!(self.beta, cfg.beta);
        from_flag!(self.gamma, cfg.gamma);
        from_flag!(self.std_pos, cfg.pos_std);
        from_flag!(self.mu, cfg.mimetic_mu);
        if let Some(v) = &self.method {
            method = v.parse::<InitMethod>()?;
        }
        if let Some(v) = &self.padding {
            cfg.padding = v.parse::<PaddingMode>()?;
        }
        if let Some(v) = &self.scale_mode {
            cfg.scale_mode = v.parse::<ScaleMode>()?;
        }

        let seed = match self.seed.or(seed) {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => parse(SEED_ENV, &v)?,
                Err(_) => 0,
            },
        };
        cfg.validate()?;
        Ok(Resolved { config: cfg, method, seed })
    }
}
