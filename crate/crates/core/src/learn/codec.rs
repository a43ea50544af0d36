//! Model files: magic `BLMD`, `u16` version, `f64` decision threshold,
//! `u32` layer count, then per layer `u32` input width, `u32` output
//! width, `u8` activation (0 ReLU, 1 identity), the weights row-major and
//! the biases; finally the normalization means and standard deviations
//! (one per input). Integers and `f64` values are little-endian.

use thiserror::Error;

use super::net::{Activation, Layer, Network};
use super::{ClassifierModel, NormStats};

pub const MODEL_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"BLMD";
const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelCodecError {
    #[error("not a model file")]
    BadMagic,
    #[error("model version {0} is not supported")]
    VersionMismatch(u16),
    #[error("model file is truncated")]
    Truncated,
    #[error("invalid model: {0}")]
    Invalid(String),
}

pub fn encode_model(model: &ClassifierModel) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&model.threshold.to_le_bytes());
    out.extend_from_slice(&(model.net.layers.len() as u32).to_le_bytes());
    let f64s = |out: &mut Vec<u8>, v: &[f64]| {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for l in &model.net.layers {
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        out.push(l.act.code());
        f64s(&mut out, &l.w);
        f64s(&mut out, &l.b);
    }
    f64s(&mut out, &model.stats.mean);
    f64s(&mut out, &model.stats.std);
    out
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], ModelCodecError> {
        if self.0.len() < k {
            return Err(ModelCodecError::Truncated);
        }
        let (h, t) = self.0.split_at(k);
        self.0 = t;
        Ok(h)
    }

    fn u32(&mut self) -> Result<usize, ModelCodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ModelCodecError> {
        let bytes = count.checked_mul(8).ok_or(ModelCodecError::Truncated)?;
        let raw = self.take(bytes)?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelCodecError::Invalid("non-finite parameter".into()));
        }
        Ok(v)
    }
}

pub fn decode_model(data: &[u8]) -> Result<ClassifierModel, ModelCodecError> {
    let mut r = Reader(data);
    if r.take(4).map_err(|_| ModelCodecError::Truncated)? != MAGIC {
        return Err(ModelCodecError::BadMagic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(ModelCodecError::VersionMismatch(version));
    }
    let threshold = r.f64s(1)?[0];
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ModelCodecError::Invalid(format!("threshold {threshold}")));
    }
    let count = r.u32()?;
    if count == 0 || count > 64 {
        return Err(ModelCodecError::Invalid(format!("{count} layers")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let in_dim = r.u32()?;
        let out_dim = r.u32()?;
        if in_dim == 0 || out_dim == 0 || in_dim > MAX_WIDTH || out_dim > MAX_WIDTH {
            return Err(ModelCodecError::Invalid(format!(
                "layer shape {in_dim}x{out_dim}"
            )));
        }
        let act = Activation::from_code(r.take(1)?[0])
            .ok_or_else(|| ModelCodecError::Invalid("unknown activation".into()))?;
        let w = r.f64s(in_dim * out_dim)?;
        let b = r.f64s(out_dim)?;
        layers.push(Layer {
            in_dim,
            out_dim,
            w,
            b,
            act,
        });
    }
    let net = Network { layers };
    net.validate().map_err(ModelCodecError::Invalid)?;
    let dim = net.input_dim();
    let mean = r.f64s(dim)?;
    let std = r.f64s(dim)?;
    if std.iter().any(|&s| s < 0.0) {
        return Err(ModelCodecError::Invalid(
            "negative standard deviation".into(),
        ));
    }
    if !r.0.is_empty() {
        return Err(ModelCodecError::Invalid(format!(
            "{} trailing bytes",
            r.0.len()
        )));
    }
    Ok(ClassifierModel {
        net,
        stats: NormStats { mean, std },
        threshold,
    })
}
