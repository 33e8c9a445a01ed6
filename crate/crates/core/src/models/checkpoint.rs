//! Model checkpoint files (`.fdck`): model kind, hyperparameters, the
//! scenario config and normalization statistics the model was trained
//! against, and the full parameter store. SHA-256 trailer like the dataset
//! format; layout documented in `docs/formats.md`.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Hyperparams, ModelKind};
use crate::dataset::io::{push_config, read_config, read_stats, FileError, Reader};
use crate::dataset::NormStats;
use crate::nn::ParameterStore;
use crate::scalar::Scalar;
use crate::scenario::ScenarioConfig;

pub const MAGIC: &[u8; 8] = b"FD2DCKPT";
pub const VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "fdck";

pub struct Checkpoint<F> {
    pub kind: ModelKind,
    pub hp: Hyperparams,
    pub config: ScenarioConfig<F>,
    pub stats: NormStats<F>,
    pub store: ParameterStore<F>,
}

pub fn to_bytes<F: Scalar>(ckpt: &Checkpoint<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ckpt.kind.tag());
    let hp = &ckpt.hp;
    for v in [
        hp.f_h,
        hp.r_blocks,
        hp.f_b,
        hp.f_d,
        hp.conv_filters,
        hp.batch,
        hp.epochs,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&hp.lr.to_le_bytes());
    out.extend_from_slice(&hp.dropout.to_le_bytes());
    out.extend_from_slice(&hp.seed.to_le_bytes());
    push_config(&mut out, &ckpt.config);
    crate::dataset::io::push_stats(&mut out, &ckpt.stats);
    ckpt.store.write_to(&mut out);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>, FileError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FileError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(FileError::Truncated("header".into()));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(payload).as_slice() != trailer {
        return Err(FileError::ChecksumMismatch);
    }

    let mut r = Reader {
        buf: payload,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FileError::VersionMismatch(version));
    }
    let kind = ModelKind::from_tag(r.u8("model kind")?)
        .ok_or_else(|| FileError::InvalidField("model kind".into()))?;
    let f_h = r.u32("f_h")? as usize;
    let r_blocks = r.u32("r_blocks")? as usize;
    let f_b = r.u32("f_b")? as usize;
    let f_d = r.u32("f_d")? as usize;
    let conv_filters = r.u32("conv_filters")? as usize;
    let batch = r.u32("batch")? as usize;
    let epochs = r.u32("epochs")? as usize;
    let lr = r.f64("lr")?;
    let dropout = r.f64("dropout")?;
    let seed = r.u64("seed")?;
    let hp = Hyperparams {
        f_h,
        r_blocks,
        f_b,
        f_d,
        conv_filters,
        batch,
        epochs,
        lr,
        dropout,
        seed,
    };
    let config: ScenarioConfig<F> = read_config(&mut r)?;
    let nodes = config.n_nodes();
    let stats = read_stats(&mut r, &[config.n_channels, nodes, nodes])?;
    let store = ParameterStore::read_from(&mut &payload[r.pos..])
        .map_err(|e| FileError::Truncated(format!("parameter store: {e}")))?;
    Ok(Checkpoint {
        kind,
        hp,
        config,
        stats,
        store,
    })
}

pub fn write_file<F: Scalar>(ckpt: &Checkpoint<F>, path: &Path) -> Result<(), FileError> {
    std::fs::write(path, to_bytes(ckpt))?;
    Ok(())
}

pub fn read_file<F: Scalar>(path: &Path) -> Result<Checkpoint<F>, FileError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
