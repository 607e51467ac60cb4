//! On-disk formats: binary grid files and model checkpoints.
//!
//! Grid file: `"XMGR"`, version `u16`, dims `u32 x 3` (width, height, depth),
//! dtype tag `u8` (0 = f32, 1 = f64), then little-endian values, row-major
//! within a slice, slice after slice.
//!
//! Checkpoint: 8-byte magic (one per model kind), version `u16`, header length
//! `u32`, JSON header (architecture, schedule or resolution, optimizer), value
//! count `u64`, then little-endian f32 parameters followed by the optimizer
//! moments when the header says they are present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DenoiserParams, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grid::{GridImage, GridVolume};
use crate::nn::{OptimizerKind, OptimizerState, TrainState, UNetConfig};
use crate::tomo::{ProjectionGeometry, Sinogram};
use crate::xmodal::{TranslationConfig, TranslationModel};

pub const GRID_MAGIC: &[u8; 4] = b"XMGR";
pub const GRID_VERSION: u16 = 1;
pub const DENOISER_MAGIC: &[u8; 8] = b"XMCTDNSR";
pub const TRANSLATOR_MAGIC: &[u8; 8] = b"XMCTXLAT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Little-endian cursor over a byte buffer; errors name `path`.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_grid(volume: &GridVolume, dtype: Dtype) -> Vec<u8> {
    let n = volume.width() * volume.height() * volume.depth();
    let mut out = Vec::with_capacity(19 + n * dtype.size());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    for d in [volume.width(), volume.height(), volume.depth()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(dtype.tag());
    for v in volume.iter().flat_map(|s| s.values()) {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<(GridVolume, Dtype)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != GRID_MAGIC {
        return Err(Error::format(path, "not a grid file (bad magic)"));
    }
    let version = r.u16()?;
    if version != GRID_VERSION {
        return Err(Error::format(path, format!("unsupported grid version {version}")));
    }
    let (w, h, d) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let dtype = match r.u8()? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        t => return Err(Error::format(path, format!("unknown dtype tag {t}"))),
    };
    if w == 0 || h == 0 || d == 0 {
        return Err(Error::format(path, "zero dimension"));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(d))
        .and_then(|p| p.checked_mul(dtype.size()))
        .ok_or_else(|| Error::format(path, "size overflow"))?;
    if bytes.len() - r.pos != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, dims imply {expected}", bytes.len() - r.pos),
        ));
    }
    let mut slices = Vec::with_capacity(d);
    for _ in 0..d {
        let raw = r.take(w * h * dtype.size())?;
        let values = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        slices.push(GridImage::from_vec(w, h, values)?);
    }
    Ok((GridVolume::new(slices)?, dtype))
}

pub fn write_grid(path: &Path, volume: &GridVolume, dtype: Dtype) -> Result<()> {
    write_atomic(path, &encode_grid(volume, dtype))
}

pub fn read_grid(path: &Path) -> Result<GridVolume> {
    Ok(decode_grid(&read(path)?, path)?.0)
}

/// A sinogram stack as a grid: width = detector bins, height = views,
/// depth = slices. Geometry travels separately.
pub fn sinograms_to_grid(stack: &[Sinogram]) -> Result<GridVolume> {
    let slices = stack
        .iter()
        .map(|s| {
            let g = s.geometry();
            GridImage::from_vec(g.num_detector_bins(), g.num_angles(), s.values().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    GridVolume::new(slices)
}

pub fn grid_to_sinograms(volume: &GridVolume, geom: &ProjectionGeometry) -> Result<Vec<Sinogram>> {
    volume.iter().map(|s| Sinogram::from_vec(geom, s.values().to_vec())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    arch: UNetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<NoiseSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_channels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TranslationConfig>,
    step: u64,
    /// Present when optimizer moments follow the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerKind>,
}

fn encode_checkpoint(magic: &[u8; 8], header: &CheckpointHeader, theta: &[f32], moments: Option<&OptimizerState>) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut values: Vec<f32> = theta.to_vec();
    if let Some(m) = moments {
        values.extend_from_slice(&m.first_moment);
        values.extend_from_slice(&m.second_moment);
    }
    let mut out = Vec::with_capacity(22 + json.len() + 4 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct DecodedCheckpoint {
    header: CheckpointHeader,
    theta: Vec<f32>,
    state: Option<TrainState>,
}

fn decode_checkpoint(magic: &[u8; 8], bytes: &[u8], path: &Path, param_count: impl Fn(&UNetConfig) -> Result<usize>) -> Result<DecodedCheckpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != magic {
        return Err(Error::format(
            path,
            format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let count = r.u64()? as usize;
    let n = param_count(&header.arch)?;
    let expected = if header.optimizer == Some(OptimizerKind::Adam) { 3 * n } else { n };
    if count != expected {
        return Err(Error::format(path, format!("payload holds {count} values, header implies {expected}")));
    }
    let mut values = r.f32s(count)?;
    r.finish()?;
    let rest = values.split_off(n);
    let state = header.optimizer.map(|_| {
        let (first, second) = rest.split_at(rest.len() / 2);
        TrainState {
            theta: values.clone(),
            optimizer: OptimizerState {
                step: header.step,
                first_moment: first.to_vec(),
                second_moment: second.to_vec(),
            },
            step: header.step,
        }
    });
    Ok(DecodedCheckpoint {
        header,
        theta: values,
        state,
    })
}

fn unet_params(arch: &UNetConfig) -> Result<usize> {
    Ok(crate::nn::UNet::new(arch.clone())?.param_count())
}

/// Optional training continuation data stored alongside parameters.
#[derive(Debug, Clone, Copy)]
pub struct Resume<'a> {
    pub kind: OptimizerKind,
    pub state: &'a TrainState,
}

fn resume_parts(resume: Option<Resume<'_>>) -> (u64, Option<OptimizerKind>, Option<&OptimizerState>) {
    match resume {
        None => (0, None, None),
        Some(r) => {
            let moments = (r.kind == OptimizerKind::Adam).then_some(&r.state.optimizer);
            (r.state.step, Some(r.kind), moments)
        }
    }
}

pub fn encode_denoiser(params: &DenoiserParams, sched: &NoiseSchedule, resume: Option<Resume<'_>>) -> Vec<u8> {
    let (step, optimizer, moments) = resume_parts(resume);
    let header = CheckpointHeader {
        arch: params.arch().clone(),
        schedule: Some(sched.clone()),
        resolution: None,
        input_channels: None,
        training: None,
        step,
        optimizer,
    };
    encode_checkpoint(DENOISER_MAGIC, &header, params.theta(), moments)
}

/// Parameters, schedule, and the training state if one was saved.
pub fn decode_denoiser(bytes: &[u8], path: &Path) -> Result<(DenoiserParams, NoiseSchedule, Option<TrainState>)> {
    let d = decode_checkpoint(DENOISER_MAGIC, bytes, path, unet_params)?;
    let sched = d
        .header
        .schedule
        .ok_or_else(|| Error::format(path, "denoiser checkpoint lacks a schedule"))?;
    let state = d.state.or_else(|| {
        d.header.optimizer.map(|_| TrainState {
            theta: d.theta.clone(),
            optimizer: OptimizerState::default(),
            step: d.header.step,
        })
    });
    let params = DenoiserParams::new(d.header.arch, d.theta)?;
    Ok((params, sched, state))
}

pub fn save_denoiser(path: &Path, params: &DenoiserParams, sched: &NoiseSchedule, resume: Option<Resume<'_>>) -> Result<()> {
    write_atomic(path, &encode_denoiser(params, sched, resume))
}

pub fn load_denoiser(path: &Path) -> Result<(DenoiserParams, NoiseSchedule, Option<TrainState>)> {
    decode_denoiser(&read(path)?, path)
}

pub fn encode_translator(model: &TranslationModel, resume: Option<Resume<'_>>) -> Vec<u8> {
    let (step, optimizer, moments) = resume_parts(resume);
    let header = CheckpointHeader {
        arch: model.arch().clone(),
        schedule: None,
        resolution: Some(model.resolution()),
        input_channels: Some(vec!["estimate".into(), "aux".into()]),
        training: Some(model.training().clone()),
        step,
        optimizer,
    };
    encode_checkpoint(TRANSLATOR_MAGIC, &header, model.theta(), moments)
}

pub fn decode_translator(bytes: &[u8], path: &Path) -> Result<(TranslationModel, Option<TrainState>)> {
    let d = decode_checkpoint(TRANSLATOR_MAGIC, bytes, path, unet_params)?;
    let resolution = d
        .header
        .resolution
        .ok_or_else(|| Error::format(path, "translator checkpoint lacks a resolution"))?;
    if d.header.input_channels.as_deref() != Some(&["estimate".to_string(), "aux".to_string()][..]) {
        return Err(Error::format(path, "translator input channels must be (estimate, aux)"));
    }
    let state = d.state.or_else(|| {
        d.header.optimizer.map(|_| TrainState {
            theta: d.theta.clone(),
            optimizer: OptimizerState::default(),
            step: d.header.step,
        })
    });
    let model = TranslationModel::new(d.header.arch, d.theta, resolution, d.header.training.unwrap_or_default())?;
    Ok((model, state))
}

pub fn save_translator(path: &Path, model: &TranslationModel, resume: Option<Resume<'_>>) -> Result<()> {
    write_atomic(path, &encode_translator(model, resume))
}

pub fn load_translator(path: &Path) -> Result<(TranslationModel, Option<TrainState>)> {
    decode_translator(&read(path)?, path)
}
