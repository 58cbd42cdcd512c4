//! Model checkpoints: `model.cfg`, `manifest.txt` and `weights.bnkt` in one
//! directory.
//!
//! The manifest has one line per tensor, `name=<param> entry=<i>
//! shape=<n,c,h,w>`, where `entry` indexes the records of `weights.bnkt`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bnkt;
use crate::config::RunConfig;
use crate::error::{config_err, Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CONFIG_FILE: &str = "model.cfg";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.bnkt";

pub fn manifest<T: Scalar>(store: &ParamStore<T>) -> String {
    let mut s = String::new();
    for (i, (name, t)) in store.tensors().into_iter().enumerate() {
        let d = t.shape().dims();
        writeln!(s, "name={name} entry={i} shape={},{},{},{}", d[0], d[1], d[2], d[3]).unwrap();
    }
    s
}

pub fn save<T: Scalar>(dir: impl AsRef<Path>, cfg: &RunConfig, store: &ParamStore<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut weights = Vec::new();
    for (_, t) in store.tensors() {
        bnkt::encode(t, &mut weights);
    }
    fs::write(dir.join(CONFIG_FILE), cfg.to_kv())?;
    fs::write(dir.join(MANIFEST_FILE), manifest(store))?;
    fs::write(dir.join(WEIGHTS_FILE), weights)?;
    Ok(())
}

fn parse_manifest(text: &str) -> Result<Vec<(String, usize)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::Parse {
                offset: 0,
                message: format!("bad checkpoint manifest line {line:?}"),
            };
            let mut name = None;
            let mut entry = None;
            for field in line.split_whitespace() {
                match field.split_once('=') {
                    Some(("name", v)) => name = Some(v.to_string()),
                    Some(("entry", v)) => entry = Some(v.parse().map_err(|_| bad())?),
                    Some(("shape", _)) => {}
                    _ => return Err(bad()),
                }
            }
            Ok((name.ok_or_else(bad)?, entry.ok_or_else(bad)?))
        })
        .collect()
}

/// Loads a checkpoint into precision `T`; every parameter the config
/// implies must be present with its exact shape.
pub fn load<T: Scalar>(dir: impl AsRef<Path>) -> Result<(RunConfig, ParamStore<T>)> {
    let dir = dir.as_ref();
    let cfg = RunConfig::load(dir.join(CONFIG_FILE))?;
    let mut store = ParamStore::<T>::init(&cfg.model, 0)?;
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let entries = parse_manifest(&text)?;
    let records = bnkt::decode_all(&fs::read(dir.join(WEIGHTS_FILE))?)?;
    let expected: Vec<String> = store.tensors().into_iter().map(|(n, _)| n).collect();
    if entries.len() != expected.len() {
        return Err(config_err!(
            "checkpoint lists {} tensors, config implies {}",
            entries.len(),
            expected.len()
        ));
    }
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(expected.len());
    for (want, (name, entry)) in expected.iter().zip(&entries) {
        if want != name {
            return Err(config_err!("checkpoint tensor {name:?} where {want:?} was expected"));
        }
        let rec = records
            .get(*entry)
            .ok_or_else(|| config_err!("{name}: entry {entry} missing from weights"))?;
        values.push(rec.clone().into_tensor());
    }
    store.load_tensors(values)?;
    Ok((cfg, store))
}
