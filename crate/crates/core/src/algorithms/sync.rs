use std::collections::HashMap;

use crate::codec::{Codec, ErrorState, Quantizer};
use crate::collectives::{Mode, Topology, TopologyKind};
use crate::engine::{Algorithm, BucketContext};
use crate::error::Result;

/// `p -= lr * (g / n)`.
fn sgd(params: &mut [f32], grads: &[f32], lr: f32, n: f32) {
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * (g / n);
    }
}

fn quantizer<'a>(slot: &'a mut Option<Quantizer>, codec: Codec, rank: usize) -> &'a mut Quantizer {
    slot.get_or_insert_with(|| codec.quantizer(rank))
}

/// Data-parallel SGD on full-precision gradient sums.
#[derive(Debug, Clone)]
pub struct Allreduce {
    lr: f32,
}

impl Allreduce {
    pub fn new(lr: f32) -> Self {
        Self { lr }
    }
}

impl Algorithm for Allreduce {
    fn name(&self) -> &str {
        "allreduce"
    }

    fn communicate(&mut self, ctx: &mut BucketContext<'_>) -> Result<()> {
        ctx.comm.c_fp_s(ctx.tag(), ctx.grads)?;
        sgd(ctx.params, ctx.grads, self.lr, ctx.comm.world_size() as f32);
        Ok(())
    }
}

/// Data-parallel SGD on compressed gradient sums, no error feedback.
#[derive(Debug, Clone)]
pub struct Qsgd {
    lr: f32,
    codec: Codec,
    quantizer: Option<Quantizer>,
}

impl Qsgd {
    pub fn new(lr: f32, codec: Codec) -> Self {
        Self {
            lr,
            codec,
            quantizer: None,
        }
    }
}

impl Algorithm for Qsgd {
    fn name(&self) -> &str {
        "qsgd8"
    }

    fn communicate(&mut self, ctx: &mut BucketContext<'_>) -> Result<()> {
        let segments = ctx.segments();
        let q = quantizer(&mut self.quantizer, self.codec, ctx.comm.rank());
        ctx.comm.c_lp_s_segmented(ctx.tag(), ctx.grads, &segments, q, None)?;
        sgd(ctx.params, ctx.grads, self.lr, ctx.comm.world_size() as f32);
        Ok(())
    }
}

/// Adam whose second moment freezes after `warmup_steps`; from then on the
/// first moment is averaged through a compressed, error-compensated sum.
/// Both moments are bias corrected, the second one with the step count at
/// which it froze.
#[derive(Debug, Clone)]
pub struct OnebitAdam {
    lr: f32,
    warmup_steps: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
    codec: Codec,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    quantizer: Option<Quantizer>,
    errors: HashMap<usize, ErrorState>,
}

impl OnebitAdam {
    pub fn new(lr: f32, warmup_steps: u64) -> Self {
        Self {
            lr,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            codec: Codec::onebit(),
            m: Vec::new(),
            v: Vec::new(),
            quantizer: None,
            errors: HashMap::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f32, beta2: f32, eps: f32) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn with_codec(mut self, codec: Codec) -> Self {
        self.codec = codec;
        self
    }

    /// Error state of a bucket, if it has been compressed yet.
    pub fn error_state(&self, bucket: usize) -> Option<&ErrorState> {
        self.errors.get(&bucket)
    }
}

impl Algorithm for OnebitAdam {
    fn name(&self) -> &str {
        "onebit_adam"
    }

    fn init(&mut self, layer_lens: &[usize]) {
        self.m = layer_lens.iter().map(|&n| vec![0.0; n]).collect();
        self.v = self.m.clone();
    }

    fn communicate(&mut self, ctx: &mut BucketContext<'_>) -> Result<()> {
        let n = ctx.comm.world_size() as f32;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = ctx.step + 1;
        let c1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(t.min(self.warmup_steps).min(i32::MAX as u64) as i32);
        let lr = self.lr;
        let eps = self.eps;
        let update = move |m: f32, v: f32| lr * (m / c1) / ((v / c2).sqrt() + eps);
        if ctx.step < self.warmup_steps {
            ctx.comm.c_fp_s(ctx.tag(), ctx.grads)?;
            for member in ctx.members {
                let (m, v) = (&mut self.m[member.layer], &mut self.v[member.layer]);
                let params = &mut ctx.params[member.range.clone()];
                for (j, &g) in ctx.grads[member.range.clone()].iter().enumerate() {
                    let g = g / n;
                    m[j] = b1 * m[j] + (1.0 - b1) * g;
                    v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                    params[j] -= update(m[j], v[j]);
                }
            }
            return Ok(());
        }

        let mut local = vec![0.0f32; ctx.grads.len()];
        for member in ctx.members {
            let m = &self.m[member.layer];
            for (j, i) in member.range.clone().enumerate() {
                local[i] = b1 * m[j] + (1.0 - b1) * ctx.grads[i];
            }
        }
        let segments = ctx.segments();
        let q = quantizer(&mut self.quantizer, self.codec, ctx.comm.rank());
        let state = self
            .errors
            .entry(ctx.bucket)
            .or_insert_with(|| ctx.comm.error_state_segmented(&segments));
        ctx.comm
            .c_lp_s_segmented(ctx.tag(), &mut local, &segments, q, Some(state))?;
        for member in ctx.members {
            let (m, v) = (&mut self.m[member.layer], &self.v[member.layer]);
            let params = &mut ctx.params[member.range.clone()];
            for (j, i) in member.range.clone().enumerate() {
                m[j] = local[i] / n;
                params[j] -= update(m[j], v[j]);
            }
        }
        Ok(())
    }

    fn relayout(&mut self) {
        self.errors.clear();
    }
}

/// Local SGD step followed by neighbourhood averaging of the models,
/// optionally through a codec.
#[derive(Debug, Clone)]
pub struct Decentralized {
    lr: f32,
    topology: TopologyKind,
    codec: Option<Codec>,
    quantizer: Option<Quantizer>,
}

impl Decentralized {
    pub fn new(lr: f32, topology: TopologyKind, codec: Option<Codec>) -> Self {
        Self {
            lr,
            topology,
            codec,
            quantizer: None,
        }
    }
}

impl Algorithm for Decentralized {
    fn name(&self) -> &str {
        if self.codec.is_some() {
            "decen8"
        } else {
            "decen32"
        }
    }

    fn communicate(&mut self, ctx: &mut BucketContext<'_>) -> Result<()> {
        sgd(ctx.params, ctx.grads, self.lr, 1.0);
        let topo = Topology::new(self.topology, ctx.comm.world_size())?;
        match self.codec {
            None => ctx
                .comm
                .d_fp_s(ctx.tag(), ctx.params, &topo, ctx.step, Mode::Average),
            Some(codec) => {
                let segments = ctx.segments();
                let q = quantizer(&mut self.quantizer, codec, ctx.comm.rank());
                ctx.comm
                    .d_lp_s_segmented(ctx.tag(), ctx.params, &segments, &topo, ctx.step, q, Mode::Average)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collectives::Communicator;
    use crate::engine::Engine;
    use crate::harness::Gradients;
    use crate::tensor::FlatTensor;
    use crate::transport::{NetworkProfile, SimCluster};

    /// Quadratic `1/2 (x - a_rank)^2` on every coordinate.
    fn run(n: usize, algo: impl Fn() -> Box<dyn Algorithm> + Sync, targets: &[f32], steps: usize) -> Vec<Vec<f32>> {
        let cluster = SimCluster::flat(n, NetworkProfile::uniform(0.0, 1e9)).unwrap();
        cluster
            .run(|ep| {
                let comm = Communicator::new(ep);
                let a = targets[comm.rank()];
                let params = vec![
                    FlatTensor::vector("x0", vec![0.0; 2])?,
                    FlatTensor::vector("x1", vec![0.0; 3])?,
                ];
                let mut e = Engine::new(comm, params, algo())?;
                let grad = |p: &[&[f32]]| -> Result<Gradients> {
                    Ok(Gradients {
                        loss: 0.0,
                        grads: p.iter().map(|l| l.iter().map(|x| x - a).collect()).collect(),
                    })
                };
                for _ in 0..steps {
                    e.step(&grad)?;
                }
                Ok(e.flat_params())
            })
            .unwrap()
    }

    #[test]
    fn allreduce_single_step_example() {
        let out = run(2, || Box::new(Allreduce::new(0.1)), &[1.0, 3.0], 1);
        assert!(out.iter().all(|x| x.iter().all(|&v| (v - 0.2).abs() < 1e-7)));
    }

    #[test]
    fn qsgd_with_identity_codec_is_allreduce() {
        let a = run(3, || Box::new(Allreduce::new(0.1)), &[1.0, -2.0, 0.5], 5);
        let b = run(3, || Box::new(Qsgd::new(0.1, Codec::identity())), &[1.0, -2.0, 0.5], 5);
        assert_eq!(a, b);
    }

    #[test]
    fn onebit_adam_leaves_residual_after_first_compressed_step() {
        let cluster = SimCluster::flat(2, NetworkProfile::uniform(0.0, 1e9)).unwrap();
        let out = cluster
            .run(|ep| {
                let comm = Communicator::new(ep);
                let r = comm.rank() as f32;
                let params = vec![FlatTensor::vector("w", vec![0.0; 3])?];
                let mut e = Engine::new(comm, params, Box::new(OnebitAdam::new(0.01, 1)))?;
                let grad = |p: &[&[f32]]| -> Result<Gradients> {
                    Ok(Gradients {
                        loss: 0.0,
                        grads: vec![p[0].iter().enumerate().map(|(i, x)| x - (i as f32 + r) * 0.3).collect()],
                    })
                };
                e.step(&grad)?;
                e.step(&grad)?;
                Ok(e.flat_params())
            })
            .unwrap();
        assert_eq!(out[0], out[1]);
        assert!(out[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decentralized_full_topology_keeps_replicas_equal() {
        let out = run(
            4,
            || Box::new(Decentralized::new(0.1, TopologyKind::Full, None)),
            &[1.0, 2.0, 3.0, 4.0],
            3,
        );
        assert!(out.iter().all(|x| x == &out[0]));
        let out = run(1, || Box::new(Decentralized::new(0.1, TopologyKind::Ring, None)), &[1.0], 2);
        // Plain SGD: 0 -> 0.1 -> 0.19.
        assert!(out[0].iter().all(|&v| v == 0.1f32 - 0.1 * (0.1 - 1.0)));
    }
}
