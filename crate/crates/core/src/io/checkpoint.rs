//! Model checkpoints.
//!
//! Layout: 8-byte magic, u32 version, u64 header length, a JSON header,
//! then little-endian f32 arrays in order: coarse params, fine params, and
//! when present the Adam first and second moments of coarse then fine.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageDims;
use crate::field::{FieldArch, FieldParams, PositionNormalizer};
use crate::model::SceneModel;
use crate::render::SamplerConfig;
use crate::train::AdamState;

pub const CKPT_MAGIC: [u8; 8] = *b"PNRDCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: FieldArch,
    pub normalizer: PositionNormalizer,
    pub sampler: SamplerConfig,
    pub iteration: usize,
    /// Resolution of the training panoramas.
    pub dims: Option<ImageDims>,
    pub param_count: usize,
    /// Optimizer step count; absent when moments are not stored.
    pub adam_step: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SceneModel<f32>,
    pub iteration: usize,
    pub dims: Option<ImageDims>,
    pub optimizer: Option<(AdamState<f32>, AdamState<f32>)>,
}

fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let m = &ckpt.model;
    let header = CheckpointHeader {
        arch: *m.arch(),
        normalizer: m.normalizer,
        sampler: m.sampler,
        iteration: ckpt.iteration,
        dims: ckpt.dims,
        param_count: m.coarse.len(),
        adam_step: ckpt.optimizer.as_ref().map(|(c, _)| c.step),
    };
    let json = serde_json::to_vec(&header)?;
    let mut body = Vec::new();
    push_f32s(&mut body, m.coarse.as_slice());
    push_f32s(&mut body, m.fine.as_slice());
    if let Some((c, f)) = &ckpt.optimizer {
        for v in [&c.m, &c.v, &f.m, &f.v] {
            push_f32s(&mut body, v);
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 20 || bytes[..8] != CKPT_MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version} is not supported")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body_start = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("checkpoint header is truncated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..body_start])?;
    header.arch.validate()?;
    let body = &bytes[body_start..];
    if body.len() % 4 != 0 {
        return Err(Error::Format("checkpoint payload is not a whole number of floats".into()));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n = header.param_count;
    let arrays = if header.adam_step.is_some() { 6 } else { 2 };
    if floats.len() != arrays * n {
        return Err(Error::Format(format!(
            "checkpoint payload holds {} floats, expected {}",
            floats.len(),
            arrays * n
        )));
    }
    let part = |i: usize| floats[i * n..(i + 1) * n].to_vec();
    let model = SceneModel {
        coarse: FieldParams::from_flat(header.arch, part(0))?,
        fine: FieldParams::from_flat(header.arch, part(1))?,
        normalizer: header.normalizer,
        sampler: header.sampler,
    };
    let optimizer = header.adam_step.map(|step| {
        let state = |m: Vec<f32>, v: Vec<f32>| AdamState {
            m,
            v,
            step,
            ..AdamState::new(0)
        };
        (state(part(2), part(3)), state(part(4), part(5)))
    });
    Ok(Checkpoint {
        model,
        iteration: header.iteration,
        dims: header.dims,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::EncodingConfig;

    fn model() -> SceneModel<f32> {
        let arch = FieldArch {
            depth: 2,
            width: 8,
            skip: None,
            branch_width: 4,
            encoding: EncodingConfig { pos_freqs: 2, dir_freqs: 1, include_input: true },
        };
        SceneModel::init(9, arch, PositionNormalizer::identity(), SamplerConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let m = model();
        let mut adam = AdamState::new(m.coarse.len());
        adam.step = 7;
        adam.m[3] = 0.25;
        let ckpt = Checkpoint {
            model: m.clone(),
            iteration: 12,
            dims: Some(ImageDims::new(4, 8).unwrap()),
            optimizer: Some((adam.clone(), adam.clone())),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.iteration, 12);
        assert_eq!(back.dims, ckpt.dims);
        let (c, _) = back.optimizer.unwrap();
        assert_eq!((c.step, c.m[3]), (7, 0.25));

        save_checkpoint(&path, &Checkpoint { optimizer: None, ..ckpt }).unwrap();
        assert!(load_checkpoint(&path).unwrap().optimizer.is_none());
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        std::fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        save_checkpoint(&path, &Checkpoint { model: model(), iteration: 0, dims: None, optimizer: None }).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
