//! Run checkpoints: classifier and decoder parameters, both optimizers,
//! counters and the effective config, in one container file.

use std::path::Path;

use bimg_tensor::{Adam, AdamConfig, Container, ParameterStore, Scalar, Tensor};
use indexmap::IndexMap;

use super::TrainState;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub state: TrainState<T>,
    /// Config echo the run was started with.
    pub config: String,
    /// Best validation score seen so far.
    pub best_score: Option<f64>,
}

fn put_adam<T: Scalar>(c: &mut Container, prefix: &str, opt: &Adam<T>) {
    for (kind, map) in [("m", &opt.m), ("v", &opt.v)] {
        for (name, t) in map {
            c.put_tensor(format!("{prefix}.{kind}/{name}"), t);
        }
    }
}

fn get_adam<T: Scalar>(c: &Container, prefix: &str, step: u64) -> Result<Adam<T>> {
    let load = |kind: &str| -> Result<IndexMap<String, Tensor<T>>> {
        let store: ParameterStore<T> = c.store(&format!("{prefix}.{kind}"))?;
        Ok(store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect())
    };
    Ok(Adam { config: AdamConfig::default(), step, m: load("m")?, v: load("v")? })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, state: &TrainState<T>, config: &str, best_score: Option<f64>) -> Result<()> {
    let mut c = Container::new();
    c.put_store("asyc", &state.asyc);
    c.put_store("decoder", &state.decoder);
    put_adam(&mut c, "opt_asyc", &state.opt_asyc);
    put_adam(&mut c, "opt_decoder", &state.opt_decoder);
    let best = best_score.map(|b| format!("{:016x}", b.to_bits())).unwrap_or_default();
    c.put_text(
        "meta",
        format!(
            "version={CHECKPOINT_VERSION}\nstep={}\nepoch={}\nopt_asyc_step={}\nopt_decoder_step={}\nbest_score_bits={best}\n",
            state.step, state.epoch, state.opt_asyc.step, state.opt_decoder.step
        ),
    );
    c.put_text("config", config);
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    c.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let c = Container::load(path)?;
    let meta: IndexMap<&str, &str> = c.text("meta")?.lines().filter_map(|l| l.split_once('=')).collect();
    let field = |k: &str| -> Result<&str> {
        meta.get(k).copied().ok_or_else(|| Error::Validation(format!("{}: checkpoint lacks `{k}`", path.display())))
    };
    let num = |k: &str| -> Result<u64> {
        field(k)?.parse().map_err(|_| Error::Validation(format!("{}: bad `{k}` in checkpoint", path.display())))
    };
    let version = num("version")?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Validation(format!("{}: unsupported checkpoint version {version}", path.display())));
    }
    let best = match field("best_score_bits")? {
        "" => None,
        s => Some(f64::from_bits(
            u64::from_str_radix(s, 16).map_err(|_| Error::Validation(format!("{}: bad best score", path.display())))?,
        )),
    };
    let asyc: ParameterStore<T> = c.store("asyc")?;
    let state = TrainState {
        disc: asyc.clone(),
        asyc,
        decoder: c.store("decoder")?,
        opt_asyc: get_adam(&c, "opt_asyc", num("opt_asyc_step")?)?,
        opt_decoder: get_adam(&c, "opt_decoder", num("opt_decoder_step")?)?,
        step: num("step")?,
        epoch: num("epoch")?,
    };
    Ok(Checkpoint { state, config: c.text("config")?.to_string(), best_score: best })
}

/// Parsed config echo of a checkpoint.
pub fn checkpoint_config(path: &Path) -> Result<crate::config::RunConfig> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    crate::config::RunConfig::parse(Container::load(path)?.text("config")?)
}
