//! Lossy compression functions and error-compensation state.
//!
//! Wire layouts (little-endian, element count carried by the caller):
//!
//! ```text
//! identity : [f32; N]
//! uniform8 : [min: f32][max: f32][level: u8; N]
//! onebit   : [scale: f32][sign bits: ceil(N/8) bytes, LSB first, 1 = non-negative]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    Identity,
    Uniform8,
    Onebit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    Nearest,
    Stochastic {
        seed: u64,
    },
}

/// A compression function `Q`. Immutable; per-worker randomness lives in
/// the [`Quantizer`] it hands out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    pub kind: CodecKind,
    #[serde(default)]
    pub rounding: Rounding,
}

impl Codec {
    pub fn identity() -> Self {
        Self {
            kind: CodecKind::Identity,
            rounding: Rounding::Nearest,
        }
    }

    pub fn uniform8(rounding: Rounding) -> Self {
        Self {
            kind: CodecKind::Uniform8,
            rounding,
        }
    }

    pub fn onebit() -> Self {
        Self {
            kind: CodecKind::Onebit,
            rounding: Rounding::Nearest,
        }
    }

    pub fn is_lossless(&self) -> bool {
        self.kind == CodecKind::Identity
    }

    /// Encoded size in bytes for `n` elements.
    pub fn payload_len(&self, n: usize) -> usize {
        match self.kind {
            CodecKind::Identity => 4 * n,
            CodecKind::Uniform8 => 8 + n,
            CodecKind::Onebit => 4 + n.div_ceil(8),
        }
    }

    /// Encoder owned by one worker. Stochastic rounding streams are derived
    /// from the codec seed and the worker rank.
    pub fn quantizer(&self, rank: usize) -> Quantizer {
        let rng = match self.rounding {
            Rounding::Stochastic { seed } => Some(ChaCha8Rng::seed_from_u64(
                seed ^ (rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )),
            Rounding::Nearest => None,
        };
        Quantizer { codec: *self, rng }
    }

    pub fn decode(&self, payload: &[u8], n: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0; n];
        self.decode_into(payload, &mut out)?;
        Ok(out)
    }

    pub fn decode_into(&self, payload: &[u8], out: &mut [f32]) -> Result<()> {
        let n = out.len();
        if payload.len() != self.payload_len(n) {
            return Err(Error::MalformedPayload(format!(
                "{:?} payload for {n} elements must be {} bytes, got {}",
                self.kind,
                self.payload_len(n),
                payload.len()
            )));
        }
        match self.kind {
            CodecKind::Identity => {
                for (o, b) in out.iter_mut().zip(payload.chunks_exact(4)) {
                    *o = f32::from_le_bytes(b.try_into().unwrap());
                }
            }
            CodecKind::Uniform8 => {
                let min = read_f32(payload, 0);
                let max = read_f32(payload, 4);
                if !min.is_finite() || !max.is_finite() || min > max {
                    return Err(Error::MalformedPayload(format!(
                        "bad uniform8 range [{min}, {max}]"
                    )));
                }
                for (o, &level) in out.iter_mut().zip(&payload[8..]) {
                    *o = dequantize_level(min, max, level);
                }
            }
            CodecKind::Onebit => {
                let scale = read_f32(payload, 0);
                if !scale.is_finite() || scale < 0.0 {
                    return Err(Error::MalformedPayload(format!("bad onebit scale {scale}")));
                }
                let bits = &payload[4..];
                for (k, o) in out.iter_mut().enumerate() {
                    let positive = bits[k / 8] >> (k % 8) & 1 == 1;
                    *o = if positive { scale } else { -scale };
                }
            }
        }
        Ok(())
    }
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn dequantize_level(min: f32, max: f32, level: u8) -> f32 {
    match level {
        0 => min,
        255 => max,
        k => (min as f64 + (max as f64 - min as f64) * k as f64 / 255.0) as f32,
    }
}

/// Stateful encoder for one worker.
#[derive(Debug, Clone)]
pub struct Quantizer {
    codec: Codec,
    rng: Option<ChaCha8Rng>,
}

impl Quantizer {
    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn encode(&mut self, x: &[f32]) -> Result<Vec<u8>> {
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut out = Vec::with_capacity(self.codec.payload_len(x.len()));
        match self.codec.kind {
            CodecKind::Identity => {
                for v in x {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            CodecKind::Uniform8 => self.encode_uniform8(x, &mut out),
            CodecKind::Onebit => encode_onebit(x, &mut out),
        }
        Ok(out)
    }

    fn encode_uniform8(&mut self, x: &[f32], out: &mut Vec<u8>) {
        let (min, max) = if x.is_empty() {
            (0.0, 0.0)
        } else {
            x.iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        };
        out.extend_from_slice(&min.to_le_bytes());
        out.extend_from_slice(&max.to_le_bytes());
        if max == min {
            out.resize(out.len() + x.len(), 0);
            return;
        }
        let width = max as f64 - min as f64;
        for &v in x {
            let t = (v as f64 - min as f64) / width * 255.0;
            let level = match self.rng.as_mut() {
                None => t.round(),
                Some(rng) => {
                    let floor = t.floor();
                    let u: f64 = rng.random();
                    if u < t - floor {
                        floor + 1.0
                    } else {
                        floor
                    }
                }
            };
            out.push(level.clamp(0.0, 255.0) as u8);
        }
    }

    /// Encodes `x + delta` and returns the new residual
    /// `(x + delta) - Q(x + delta)`, held exactly.
    pub fn compensate_encode(&mut self, x: &[f32], delta: &Residual) -> Result<(Vec<u8>, Residual)> {
        if x.len() != delta.len() {
            return Err(Error::LengthMismatch {
                expected: delta.len(),
                actual: x.len(),
            });
        }
        let input = delta.compensated_input(x);
        let payload = self.encode(&input)?;
        let sent = self.codec.decode(&payload, input.len())?;
        Ok((payload, Residual::between(&input, &sent)))
    }
}

fn encode_onebit(x: &[f32], out: &mut Vec<u8>) {
    let total: f64 = x.iter().map(|v| v.abs() as f64).sum();
    let scale = if x.is_empty() {
        0.0f32
    } else {
        (total / x.len() as f64) as f32
    };
    out.extend_from_slice(&scale.to_le_bytes());
    for chunk in x.chunks(8) {
        let mut byte = 0u8;
        for (bit, &v) in chunk.iter().enumerate() {
            if v >= 0.0 {
                byte |= 1 << bit;
            }
        }
        out.push(byte);
    }
}

/// `a - b` as an unevaluated sum `hi + lo` with no rounding error.
fn two_diff(a: f32, b: f32) -> (f32, f32) {
    let nb = -b;
    let s = a + nb;
    let bv = s - a;
    let av = s - bv;
    (s, (a - av) + (nb - bv))
}

/// Compression error carried between rounds.
///
/// Stored as a pair of `f32` vectors whose elementwise sum is the residual
/// without rounding, so `Q(y) + hi + lo == y` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    hi: Vec<f32>,
    lo: Vec<f32>,
}

impl Residual {
    pub fn zeros(len: usize) -> Self {
        Self {
            hi: vec![0.0; len],
            lo: vec![0.0; len],
        }
    }

    pub fn from_f32(values: &[f32]) -> Self {
        Self {
            hi: values.to_vec(),
            lo: vec![0.0; values.len()],
        }
    }

    /// Residual `input - sent`.
    pub fn between(input: &[f32], sent: &[f32]) -> Self {
        let (hi, lo) = input.iter().zip(sent).map(|(&a, &b)| two_diff(a, b)).unzip();
        Self { hi, lo }
    }

    pub fn len(&self) -> usize {
        self.hi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hi.is_empty()
    }

    pub fn hi(&self) -> &[f32] {
        &self.hi
    }

    pub fn lo(&self) -> &[f32] {
        &self.lo
    }

    /// `x + residual`, rounded to f32. This is what gets compressed, so
    /// error dropped in one round is sent in the next.
    pub fn compensated_input(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(&self.hi)
            .zip(&self.lo)
            .map(|((&x, &h), &l)| (x + h) + l)
            .collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.hi.iter().zip(&self.lo).map(|(h, l)| h + l).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.hi.iter().chain(&self.lo).all(|&v| v == 0.0)
    }
}

/// Worker-side error `delta` over a whole bucket and server-side error
/// `epsilon` over the partition this worker owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub(crate) delta: Residual,
    pub(crate) epsilon: Residual,
}

impl ErrorState {
    pub fn new(bucket_len: usize, owned_len: usize) -> Self {
        Self {
            delta: Residual::zeros(bucket_len),
            epsilon: Residual::zeros(owned_len),
        }
    }

    pub fn delta(&self) -> &Residual {
        &self.delta
    }

    pub fn epsilon(&self) -> &Residual {
        &self.epsilon
    }
}
