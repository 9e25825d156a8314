//! On-disk formats.
//!
//! `LFMD` (datasets), all integers little-endian `u32`, values little-endian
//! `f64`:
//!
//! ```text
//! offset  field
//! 0       magic "LFMD"
//! 4       version (1)
//! 8       N, example count
//! 12      C, class count
//! 16      R, per-example rank (1 = features, 3 = channels/height/width)
//! 20      R dimensions
//! ..      N labels
//! ..      N * prod(dims) values, row-major
//! ```
//!
//! `LFMW` (named tensors, e.g. search checkpoints):
//!
//! ```text
//! magic "LFMW", version (1), entry count E, then E times:
//!   name length L, L bytes of UTF-8 name, rank R, R dimensions,
//!   prod(dims) f64 values
//! ```
//!
//! Architectures are text, one edge per line: `src->dst: op[,op]`.

use std::fs;
use std::path::Path;

use lfm_core::data::{ByteReader, Dataset};
use lfm_core::params::ParamSet;
use lfm_core::search_space::{DiscreteArchitecture, OpSet};
use lfm_core::tensor::Array;
use lfm_core::trilevel::SearchState;

use crate::error::{Error, Result};

const WEIGHTS_MAGIC: &[u8; 4] = b"LFMW";
const WEIGHTS_VERSION: u32 = 1;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(Dataset::from_bytes(&read(path)?)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write(path, &ds.to_bytes())
}

pub fn weights_to_bytes(set: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for (name, value) in set.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.rank() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let parse = |position: usize, detail: String| lfm_core::Error::Parse { position, detail };
    let mut r = ByteReader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(parse(4, format!("unsupported version {version}")).into());
    }
    let count = r.u32("entry count")?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let at = r.position();
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| parse(at + 4, "name is not UTF-8".into()))?
            .to_string();
        if set.get(&name).is_some() {
            return Err(parse(at, format!("duplicate entry `{name}`")).into());
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= r.remaining() / 8)
            .ok_or_else(|| parse(r.position(), format!("shape {shape:?} exceeds the payload")))?;
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f64("value")?);
        }
        set.push(name, Array::new(&shape, values)?);
    }
    r.finish()?;
    Ok(set)
}

pub fn load_weights(path: &Path) -> Result<ParamSet> {
    weights_from_bytes(&read(path)?)
}

pub fn save_weights(set: &ParamSet, path: &Path) -> Result<()> {
    write(path, &weights_to_bytes(set))
}

/// All five search variables under `arch`, `r`, `w1.*`, `w2.*` and `v.*`.
pub fn state_to_weights(state: &SearchState) -> ParamSet {
    let mut set = ParamSet::new().with("arch", state.arch.logits().clone()).with("r", state.r.clone());
    for (prefix, part) in [("w1", &state.w1), ("w2", &state.w2), ("v", &state.v)] {
        for (name, value) in part.iter() {
            set.push(format!("{prefix}.{name}"), value.clone());
        }
    }
    set
}

pub fn load_architecture(path: &Path, op_set: &OpSet) -> Result<DiscreteArchitecture> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    Ok(DiscreteArchitecture::parse(&text, op_set)?)
}

pub fn save_architecture(arch: &DiscreteArchitecture, path: &Path) -> Result<()> {
    write(path, arch.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        ParamSet::new()
            .with("a", Array::new(&[2, 3], vec![1.0, -2.5, 3.0, 0.1, f64::MIN_POSITIVE, -0.0]).unwrap())
            .with("scalar", Array::new(&[1], vec![7.0]).unwrap())
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let set = sample();
        let back = weights_from_bytes(&weights_to_bytes(&set)).unwrap();
        assert_eq!(back.signature(), set.signature());
        let bits = |p: &ParamSet| p.flatten().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&set));
    }

    #[test]
    fn truncated_or_foreign_weights_fail() {
        let bytes = weights_to_bytes(&sample());
        assert!(matches!(
            weights_from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Core(lfm_core::Error::Parse { .. }))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(weights_from_bytes(&bad), Err(Error::Core(lfm_core::Error::Parse { position: 0, .. }))));
        let mut long = bytes;
        long.push(0);
        assert!(weights_from_bytes(&long).is_err());
    }
}
