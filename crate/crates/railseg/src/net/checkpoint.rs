//! Portable binary checkpoint format.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! offset 0   magic bytes        "RSEG" (4 bytes)
//!        4   format version     u16 (currently 1)
//!        6   class count        u16, then per class: u16 name length + UTF-8 bytes
//!        ..  patch size         u64
//!        ..  SA level count     u16, then per level:
//!              npoint u64, radius f64, nsample u64,
//!              width count u16, widths u64 each
//!        ..  FP level count     u16, then per level: width count u16, widths u64 each
//!        ..  head width count   u16, widths u64 each
//!        ..  tensor count       u32, then per tensor (canonical parameter
//!              order: SA levels, FP levels, head; weight then bias):
//!              ndim u8, dims u64 each, values f64 each
//!        ..  optimizer flag     u8; if 1: step u64, then first-moment then
//!              second-moment values (f64 each, shapes mirror the parameters)
//!        ..  epoch counter      u64
//!        ..  rng seed           u64
//!        ..  rng word position  u128 (16 bytes)
//! ```
//!
//! Save → load → forward is bit-identical to the pre-save forward pass.

use std::io::{Read, Write};
use std::path::Path;

use crate::cloud::LabelSchema;
use crate::error::{Error, Result};
use crate::net::model::{NetConfig, SaConfig, SegNetwork};
use crate::net::optim::AdamState;
use crate::net::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSEG";
pub const FORMAT_VERSION: u16 = 1;

/// Network parameters plus everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: SegNetwork,
    pub schema: LabelSchema,
    pub optimizer: Option<AdamState>,
    pub epoch: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingPrerequisite(format!("checkpoint {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u16(&mut w, FORMAT_VERSION);

        let names = self.schema.class_names();
        put_u16(&mut w, names.len() as u16);
        for name in names {
            put_u16(&mut w, name.len() as u16);
            w.extend_from_slice(name.as_bytes());
        }

        let cfg = &self.network.config;
        put_u64(&mut w, cfg.patch_size as u64);
        put_u16(&mut w, cfg.sa.len() as u16);
        for sa in &cfg.sa {
            put_u64(&mut w, sa.npoint as u64);
            put_f64(&mut w, sa.radius);
            put_u64(&mut w, sa.nsample as u64);
            put_widths(&mut w, &sa.mlp);
        }
        put_u16(&mut w, cfg.fp.len() as u16);
        for fp in &cfg.fp {
            put_widths(&mut w, fp);
        }
        put_widths(&mut w, &cfg.head);

        let tensors = self.network.param_tensors();
        put_u32(&mut w, tensors.len() as u32);
        for t in &tensors {
            w.push(t.shape().len() as u8);
            for &d in t.shape() {
                put_u64(&mut w, d as u64);
            }
            for &v in t.data() {
                put_f64(&mut w, v);
            }
        }

        match &self.optimizer {
            None => w.push(0),
            Some(state) => {
                w.push(1);
                put_u64(&mut w, state.step);
                for t in state.m.iter().chain(state.v.iter()) {
                    for &v in t.data() {
                        put_f64(&mut w, v);
                    }
                }
            }
        }

        put_u64(&mut w, self.epoch);
        put_u64(&mut w, self.rng_seed);
        w.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::CheckpointFormat(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported format version {version}"
            )));
        }

        let class_count = r.u16()? as usize;
        let mut names = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            names.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::CheckpointFormat("class name not UTF-8".into()))?,
            );
        }
        let schema = LabelSchema::new(names)?;

        let patch_size = r.u64()? as usize;
        let sa_count = r.u16()? as usize;
        let mut sa = Vec::with_capacity(sa_count);
        for _ in 0..sa_count {
            let npoint = r.u64()? as usize;
            let radius = r.f64()?;
            let nsample = r.u64()? as usize;
            let mlp = r.widths()?;
            sa.push(SaConfig {
                npoint,
                radius,
                nsample,
                mlp,
            });
        }
        let fp_count = r.u16()? as usize;
        let mut fp = Vec::with_capacity(fp_count);
        for _ in 0..fp_count {
            fp.push(r.widths()?);
        }
        let head = r.widths()?;
        let config = NetConfig {
            patch_size,
            num_classes: schema.num_classes(),
            sa,
            fp,
            head,
        };

        let mut network = SegNetwork::new(config, crate::rng::RngSeed(0))?;
        let tensor_count = r.u32()? as usize;
        {
            let mut params = network.param_tensors_mut();
            if tensor_count != params.len() {
                return Err(Error::CheckpointFormat(format!(
                    "tensor count {tensor_count} does not match architecture ({})",
                    params.len()
                )));
            }
            for p in params.iter_mut() {
                let ndim = r.u8()? as usize;
                let mut shape = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    shape.push(r.u64()? as usize);
                }
                if shape != p.shape() {
                    return Err(Error::CheckpointFormat(format!(
                        "tensor shape {shape:?} does not match architecture {:?}",
                        p.shape()
                    )));
                }
                for v in p.data_mut() {
                    *v = r.f64()?;
                }
            }
        }

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let shapes: Vec<Vec<usize>> = network
                    .param_tensors()
                    .iter()
                    .map(|t| t.shape().to_vec())
                    .collect();
                let read_moments = |r: &mut Reader| -> Result<Vec<Tensor>> {
                    shapes
                        .iter()
                        .map(|shape| {
                            let mut t = Tensor::zeros(shape);
                            for v in t.data_mut() {
                                *v = r.f64()?;
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let m = read_moments(&mut r)?;
                let v = read_moments(&mut r)?;
                Some(AdamState { step, m, v })
            }
            other => {
                return Err(Error::CheckpointFormat(format!(
                    "bad optimizer flag {other}"
                )))
            }
        };

        let epoch = r.u64()?;
        let rng_seed = r.u64()?;
        let pos_bytes: [u8; 16] = r.take(16)?.try_into().unwrap();
        let rng_word_pos = u128::from_le_bytes(pos_bytes);
        if r.pos != bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        Ok(Checkpoint {
            network,
            schema,
            optimizer,
            epoch,
            rng_seed,
            rng_word_pos,
        })
    }
}

fn put_u16(w: &mut Vec<u8>, v: u16) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_widths(w: &mut Vec<u8>, widths: &[usize]) {
    put_u16(w, widths.len() as u16);
    for &x in widths {
        put_u64(w, x as u64);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointFormat("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn widths(&mut self) -> Result<Vec<usize>> {
        let count = self.u16()? as usize;
        (0..count).map(|_| Ok(self.u64()? as usize)).collect()
    }
}

// Dummy use of Read/Write so the std imports stay honest if helpers change.
#[allow(dead_code)]
fn _assert_io_traits<T: Read + Write>() {}
