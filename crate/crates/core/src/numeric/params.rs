//! Learnable parameters and their checkpoint format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    UserEmb,
    EntityEmb,
    RelationEmb,
    W1,
    B1,
    W2,
    B2,
    W3,
    B3,
    RnnW,
    RnnH,
    RnnU,
}

impl ParamId {
    pub const ALL: [ParamId; 12] = [
        ParamId::UserEmb,
        ParamId::EntityEmb,
        ParamId::RelationEmb,
        ParamId::W1,
        ParamId::B1,
        ParamId::W2,
        ParamId::B2,
        ParamId::W3,
        ParamId::B3,
        ParamId::RnnW,
        ParamId::RnnH,
        ParamId::RnnU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::UserEmb => "user_emb",
            ParamId::EntityEmb => "entity_emb",
            ParamId::RelationEmb => "relation_emb",
            ParamId::W1 => "w1",
            ParamId::B1 => "b1",
            ParamId::W2 => "w2",
            ParamId::B2 => "b2",
            ParamId::W3 => "w3",
            ParamId::B3 => "b3",
            ParamId::RnnW => "rnn_w",
            ParamId::RnnH => "rnn_h",
            ParamId::RnnU => "rnn_u",
        }
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, ParamId::UserEmb | ParamId::EntityEmb | ParamId::RelationEmb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub users: usize,
    pub entities: usize,
    pub relations: usize,
    /// Embedding width.
    pub d: usize,
    /// Hidden width of the attention MLP.
    pub d_h: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("users", self.users),
            ("entities", self.entities),
            ("relations", self.relations),
            ("d", self.d),
            ("d_h", self.d_h),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn shape(&self, id: ParamId) -> Vec<usize> {
        let (d, h) = (self.d, self.d_h);
        match id {
            ParamId::UserEmb => vec![self.users, d],
            ParamId::EntityEmb => vec![self.entities, d],
            ParamId::RelationEmb => vec![self.relations, d],
            ParamId::W1 => vec![h, 3 * d],
            ParamId::B1 | ParamId::B2 => vec![h],
            ParamId::W2 => vec![h, h],
            ParamId::W3 => vec![1, h],
            ParamId::B3 => vec![1],
            ParamId::RnnW | ParamId::RnnH | ParamId::RnnU => vec![d, d],
        }
    }
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, embeddings uniform in
    /// `[-0.1/sqrt(d), 0.1/sqrt(d)]`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for (i, id) in ParamId::ALL.into_iter().enumerate() {
            let shape = dims.shape(id);
            let mut t = Tensor::zeros(shape.clone());
            let bound = if id.is_embedding() {
                0.1 / (dims.d as f64).sqrt()
            } else if shape.len() == 2 {
                (6.0 / (shape[0] + shape[1]) as f64).sqrt()
            } else {
                0.0
            };
            if bound > 0.0 {
                let mut rng = stream_rng(seed, Stream::Init, i as u64);
                let dist = Uniform::new_inclusive(-bound, bound);
                for v in t.values_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
            tensors.push(t);
        }
        Ok(ModelParams { dims, tensors })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let tensors = ParamId::ALL.into_iter().map(|id| Tensor::zeros(dims.shape(id))).collect();
        Ok(ModelParams { dims, tensors })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::squared_norm).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn check_finite(&self) -> Result<()> {
        for id in ParamId::ALL {
            if !self.get(id).is_finite() {
                return Err(Error::Numeric(format!("non-finite value in {}", id.name())));
            }
        }
        Ok(())
    }

    /// Writes the checkpoint: magic, version, fingerprint, dims, then each
    /// tensor as name, shape and little-endian `f64` values.
    pub fn save(&self, path: &Path, fingerprint: &Fingerprint) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in fingerprint.as_array() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let d = &self.dims;
        for v in [d.users, d.entities, d.relations, d.d, d.d_h] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (id, t) in ParamId::ALL.iter().zip(&self.tensors) {
            let name = id.name().as_bytes();
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &s in t.shape() {
                buf.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for v in t.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Fingerprint)> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader {
            bytes: &bytes,
            pos: 0,
            path,
        };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.corrupt(&format!("unsupported checkpoint version {version}")));
        }
        let mut fp = [0u64; 6];
        for v in &mut fp {
            *v = r.u64()?;
        }
        let mut dv = [0usize; 5];
        for v in &mut dv {
            *v = r.u64()? as usize;
        }
        let dims = ModelDims {
            users: dv[0],
            entities: dv[1],
            relations: dv[2],
            d: dv[3],
            d_h: dv[4],
        };
        dims.validate()?;
        let count = r.u32()? as usize;
        if count != ParamId::ALL.len() {
            return Err(r.corrupt("wrong tensor count"));
        }
        let mut tensors = Vec::with_capacity(count);
        for id in ParamId::ALL {
            let name_len = r.u16()? as usize;
            if r.take(name_len)? != id.name().as_bytes() {
                return Err(r.corrupt(&format!("expected tensor {}", id.name())));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            if shape != dims.shape(id) {
                return Err(r.corrupt(&format!("shape mismatch for {}", id.name())));
            }
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, values)?);
        }
        Ok((ModelParams { dims, tensors }, Fingerprint::from_array(fp)))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KGRECKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Hyperparameters a checkpoint was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub d: usize,
    pub d_h: usize,
    pub levels: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

impl Fingerprint {
    fn as_array(&self) -> [u64; 6] {
        [
            self.d as u64,
            self.d_h as u64,
            self.levels as u64,
            self.k as u64,
            self.n as u64,
            self.seed,
        ]
    }

    fn from_array(a: [u64; 6]) -> Self {
        Fingerprint {
            d: a[0] as usize,
            d_h: a[1] as usize,
            levels: a[2] as usize,
            k: a[3] as usize,
            n: a[4] as usize,
            seed: a[5],
        }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn corrupt(&self, msg: &str) -> Error {
        Error::Data(format!("{}: corrupt checkpoint: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
}
