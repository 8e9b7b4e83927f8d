//! Little-endian binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "GRPHTCKP"
//! version  u32      1
//! epoch    u64
//! config   u64 length + UTF-8 bytes
//! nparams  u64
//!   name   u64 length + UTF-8 bytes
//!   dims   3 x u64
//!   data   prod(dims) x f64
//! adam     u8 (0 = absent, 1 = present)
//!   lr beta1 beta2 eps weight_decay   5 x f64
//!   step   u64
//!   m, v   per parameter, prod(dims) x f64 each, in parameter order
//! ```
//!
//! Values are always stored as `f64` whatever the training precision.

use std::io::{self, Read, Write};

use super::{Adam, AdamConfig, ParamStore, Tensor};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRPHTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

// Upper bound on any single length field; guards allocation on corrupt input.
const MAX_LEN: u64 = 1 << 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub epoch: u64,
    pub config: String,
    pub params: ParamStore<T>,
    pub adam: Option<Adam<T>>,
}

fn put_u64(w: &mut impl Write, x: u64) -> io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_f64(w: &mut impl Write, x: f64) -> io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn put_data<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> io::Result<()> {
    t.data().iter().try_for_each(|&x| put_f64(w, x.as_f64()))
}

pub fn write_checkpoint<T: Scalar>(
    w: &mut impl Write,
    epoch: u64,
    config: &str,
    params: &ParamStore<T>,
    adam: Option<&Adam<T>>,
) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u64(w, epoch)?;
    put_str(w, config)?;
    put_u64(w, params.len() as u64)?;
    for (name, t) in params.iter() {
        put_str(w, name)?;
        for d in t.shape() {
            put_u64(w, d as u64)?;
        }
        put_data(w, t)?;
    }
    match adam {
        None => w.write_all(&[0])?,
        Some(a) => {
            w.write_all(&[1])?;
            let c = a.config;
            for x in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                put_f64(w, x)?;
            }
            put_u64(w, a.step_count())?;
            let (m, v) = a.moments();
            for (mi, vi) in m.iter().zip(v) {
                put_data(w, mi)?;
                put_data(w, vi)?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => CheckpointError::Corrupt("truncated".into()),
            _ => CheckpointError::Io(e),
        })?;
        Ok(b)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn len(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(CheckpointError::Corrupt(format!("{what} length {n} is implausible")));
        }
        Ok(n as usize)
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let n = self.len(what)?;
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|_| CheckpointError::Corrupt("truncated".into()))?;
        String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }

    fn data<T: Scalar>(&mut self, shape: [usize; 3]) -> Result<Tensor<T>, CheckpointError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.f64().map(T::of)).collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::from_vec(shape, data))
    }
}

pub fn read_checkpoint<T: Scalar>(r: impl Read) -> Result<Checkpoint<T>, CheckpointError> {
    let mut rd = Reader { r };
    if &rd.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(rd.bytes()?);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let epoch = rd.u64()?;
    let config = rd.string("config")?;
    let count = rd.len("parameter count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = rd.string("parameter name")?;
        let mut shape = [0usize; 3];
        for d in &mut shape {
            *d = rd.len("dimension")?;
        }
        if shape.iter().map(|&d| d as u64).product::<u64>() > MAX_LEN {
            return Err(CheckpointError::Corrupt(format!("parameter `{name}` is implausibly large")));
        }
        if params.index_of(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate parameter `{name}`")));
        }
        let t = rd.data(shape)?;
        params.add(name, t);
    }
    let adam = match rd.bytes::<1>()?[0] {
        0 => None,
        1 => {
            let mut c = [0.0; 5];
            for x in &mut c {
                *x = rd.f64()?;
            }
            let config = AdamConfig { lr: c[0], beta1: c[1], beta2: c[2], eps: c[3], weight_decay: c[4] };
            let step = rd.u64()?;
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for p in params.values() {
                m.push(rd.data(p.shape())?);
                v.push(rd.data(p.shape())?);
            }
            Some(Adam::from_state(config, step, m, v))
        }
        b => return Err(CheckpointError::Corrupt(format!("bad optimizer flag {b}"))),
    };
    let mut rest = [0u8; 1];
    if rd.r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(Checkpoint { epoch, config, params, adam })
}
