//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every [`TrainConfig`] field and
//! the network shape have a key; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub network: NetworkConfig,
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let n = &mut self.network;
        match key {
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "eps" => t.eps = parse(key, v)?,
            "plateau_factor" => t.plateau_factor = parse(key, v)?,
            "plateau_patience" => t.plateau_patience = parse(key, v)?,
            "min_lr" => t.min_lr = parse(key, v)?,
            "plateau_threshold" => t.plateau_threshold = parse(key, v)?,
            "teacher_forcing_p" => t.teacher_forcing_p = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "hidden_dims" => {
                n.hidden_dims = v
                    .split(',')
                    .map(|d| parse(key, d.trim()))
                    .collect::<Result<_>>()?
            }
            "kernel" => {
                let (a, b) = v
                    .split_once('x')
                    .ok_or_else(|| Error::invalid(format!("kernel must look like 3x3, got {v:?}")))?;
                n.kernel = (parse(key, a.trim())?, parse(key, b.trim())?);
            }
            "dropout_p" => n.dropout_p = parse(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.network.validate()
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let n = &self.network;
        let dims: Vec<String> = n.hidden_dims.iter().map(|d| d.to_string()).collect();
        format!(
            "batch_size = {}\nlr = {:?}\nepochs = {}\nbeta1 = {:?}\nbeta2 = {:?}\neps = {:?}\n\
             plateau_factor = {:?}\nplateau_patience = {}\nmin_lr = {:?}\nplateau_threshold = {:?}\n\
             teacher_forcing_p = {:?}\nseed = {}\nhidden_dims = {}\nkernel = {}x{}\ndropout_p = {:?}\n",
            t.batch_size,
            t.lr,
            t.epochs,
            t.beta1,
            t.beta2,
            t.eps,
            t.plateau_factor,
            t.plateau_patience,
            t.min_lr,
            t.plateau_threshold,
            t.teacher_forcing_p,
            t.seed,
            dims.join(","),
            n.kernel.0,
            n.kernel.1,
            n.dropout_p
        )
    }
}
