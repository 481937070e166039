//! Binary checkpoint format shared by both architectures.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ODNT"            4 ASCII magic bytes
//! version           u32, currently 1
//! n, m, L           u32 each
//! T                 f64 (horizon; 0 for residual checkpoints)
//! activation        u8 tag (see Activation::tag)
//! kind              u8: 0 = continuous-depth parameters (L+1 grid samples),
//!                       1 = residual parameters (L layers)
//! A                 m·n f64, row-major
//! alpha             (L+1 | L)·m f64
//! beta              (L+1 | L)·n·n f64, row-major per step
//! gamma             (L+1 | L)·n f64
//! ```

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{OdeNetSpec, ParamPath};
use crate::resnet::ResNetParams;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ODNT";
const VERSION: u32 = 1;
const KIND_ODENET: u8 = 0;
const KIND_RESNET: u8 = 1;

#[derive(Clone, Debug)]
pub enum Checkpoint {
    OdeNet {
        spec: OdeNetSpec,
        params: ParamPath,
    },
    ResNet(ResNetParams),
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::BadCheckpoint(format!("truncated at {what}")))?;
        Ok(u32::from_le_bytes(b))
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::BadCheckpoint(format!("truncated at {what}")))?;
        Ok(b[0])
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::BadCheckpoint(format!("truncated at {what}")))?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.f64(what)?);
        }
        Ok(out)
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer(std::io::BufWriter::new(file));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    match checkpoint {
        Checkpoint::OdeNet { spec, params } => {
            params.validate(spec)?;
            w.u32(spec.input_dim() as u32)?;
            w.u32(spec.output_dim() as u32)?;
            w.u32(spec.steps() as u32)?;
            w.f64(spec.t_horizon())?;
            w.u8(spec.activation().tag())?;
            w.u8(KIND_ODENET)?;
            w.f64s(spec.readout().data())?;
            for a in &params.alpha {
                w.f64s(a)?;
            }
            for b in &params.beta {
                w.f64s(b.data())?;
            }
            for g in &params.gamma {
                w.f64s(g)?;
            }
        }
        Checkpoint::ResNet(params) => {
            params.validate()?;
            w.u32(params.input_dim() as u32)?;
            w.u32(params.output_dim() as u32)?;
            w.u32(params.depth() as u32)?;
            w.f64(0.0)?;
            w.u8(params.activation.tag())?;
            w.u8(KIND_RESNET)?;
            w.f64s(params.a.data())?;
            for a in &params.alpha {
                w.f64s(a)?;
            }
            for b in &params.beta {
                w.f64s(b.data())?;
            }
            for g in &params.gamma {
                w.f64s(g)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader(std::io::BufReader::new(file));
    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic)
        .map_err(|_| Error::BadCheckpoint("magic: file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!(
            "version {version}, this build reads {VERSION}"
        )));
    }
    let n = r.u32("n")? as usize;
    let m = r.u32("m")? as usize;
    let steps = r.u32("L")? as usize;
    let t_horizon = r.f64("T")?;
    let activation = Activation::from_tag(r.u8("activation")?)?;
    let kind = r.u8("kind")?;
    let a = Mat::from_vec(m, n, r.f64s(m * n, "A")?);

    let grid = match kind {
        KIND_ODENET => steps + 1,
        KIND_RESNET => steps,
        other => return Err(Error::BadCheckpoint(format!("unknown kind {other}"))),
    };
    let mut alpha = Vec::with_capacity(grid);
    for _ in 0..grid {
        alpha.push(r.f64s(m, "alpha")?);
    }
    let mut beta = Vec::with_capacity(grid);
    for _ in 0..grid {
        beta.push(Mat::from_vec(n, n, r.f64s(n * n, "beta")?));
    }
    let mut gamma = Vec::with_capacity(grid);
    for _ in 0..grid {
        gamma.push(r.f64s(n, "gamma")?);
    }

    match kind {
        KIND_ODENET => {
            let spec = OdeNetSpec::new(n, m, a, t_horizon, steps, activation)
                .map_err(|e| Error::BadCheckpoint(format!("invalid stored spec: {e}")))?;
            let params = ParamPath { alpha, beta, gamma };
            params
                .validate(&spec)
                .map_err(|e| Error::BadCheckpoint(format!("invalid stored parameters: {e}")))?;
            Ok(Checkpoint::OdeNet { spec, params })
        }
        _ => {
            let params = ResNetParams {
                alpha,
                beta,
                gamma,
                a,
                activation,
            };
            params
                .validate()
                .map_err(|e| Error::BadCheckpoint(format!("invalid stored parameters: {e}")))?;
            Ok(Checkpoint::ResNet(params))
        }
    }
}
