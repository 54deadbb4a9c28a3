//! Payload size and worst-case error of each codec on one vector.

use relaxcomm::codec::{Codec, Rounding};
use relaxcomm::Result;

/// `(name, payload bytes, max abs error)` per codec.
pub fn run() -> Result<Vec<(String, usize, f32)>> {
    let x: Vec<f32> = (0..1000).map(|i| ((i * 37) % 101) as f32 / 50.0 - 1.0).collect();
    let codecs = [
        Codec::identity(),
        Codec::uniform8(Rounding::Nearest),
        Codec::uniform8(Rounding::Stochastic { seed: 1 }),
        Codec::onebit(),
    ];
    codecs
        .iter()
        .map(|c| {
            let mut q = c.quantizer(0);
            let payload = q.encode(&x)?;
            let y = c.decode(&payload, x.len())?;
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            Ok((format!("{:?}", c.kind), payload.len(), err))
        })
        .collect()
}

pub fn main() -> Result<()> {
    for (name, bytes, err) in run()? {
        println!("{name:<40} {bytes:>5} bytes, max error {err:.4}");
    }
    Ok(())
}
