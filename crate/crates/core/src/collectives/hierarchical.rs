//! Node-aware centralized primitives: members hand their vectors to the
//! node leader, leaders run the inter-node exchange, leaders broadcast the
//! result back inside their node.

use super::{
    add_assign, compressed_scatter_reduce, f32_bytes, frame, partition_range, read_f32s, stagger,
    tag, unframe, LpTrace, Phase,
};
use crate::codec::{ErrorState, Quantizer, Residual};
use crate::error::{Error, Result};
use crate::transport::Transport;

/// Full-precision sum. Leaders forward every member's chunk unreduced, so
/// each partition owner still adds contributions in ascending global rank
/// and the result is bitwise equal to the flat primitive.
pub(super) fn c_fp_s(t: &dyn Transport, bucket: u32, x: &mut [f32]) -> Result<()> {
    let layout = t.layout().clone();
    let me = t.rank();
    let node = layout.node_of(me);
    let leader = layout.leader(node);
    let len = x.len();
    if me != leader {
        return member_roundtrip(t, bucket, leader, x);
    }

    let mut contributions = vec![(me, x.to_vec())];
    for &m in &layout.members(node)[1..] {
        let bytes = t.recv(m, tag(bucket, Phase::IntraReduce))?;
        let mut v = vec![0.0f32; len];
        read_f32s(unframe(&bytes, len, len)?, &mut v)?;
        contributions.push((m, v));
    }

    let leaders = layout.leaders();
    let g = leaders.len();
    let li = node_index(&leaders, me)?;
    let inter = tag(bucket, Phase::Inter);
    for k in stagger(li, g) {
        let r = partition_range(len, g, k);
        let mut body = Vec::with_capacity(4 + contributions.len() * (4 + 4 * r.len()));
        body.extend_from_slice(&(contributions.len() as u32).to_le_bytes());
        for (rank, v) in &contributions {
            body.extend_from_slice(&(*rank as u32).to_le_bytes());
            body.extend_from_slice(&f32_bytes(&v[r.clone()]));
        }
        t.send(leaders[k], inter, frame(len, r.len(), &body))?;
    }

    let own = partition_range(len, g, li);
    let mut chunks: Vec<(usize, Vec<f32>)> = contributions
        .iter()
        .map(|(rank, v)| (*rank, v[own.clone()].to_vec()))
        .collect();
    for k in stagger(li, g) {
        let bytes = t.recv(leaders[k], inter)?;
        chunks.extend(parse_bundle(unframe(&bytes, len, own.len())?, own.len())?);
    }
    chunks.sort_by_key(|(rank, _)| *rank);
    let mut acc = chunks[0].1.clone();
    for (_, c) in &chunks[1..] {
        add_assign(&mut acc, c);
    }

    let gather = tag(bucket, Phase::InterGather);
    for k in stagger(li, g) {
        t.send(leaders[k], gather, frame(len, own.len(), &f32_bytes(&acc)))?;
    }
    x[own].copy_from_slice(&acc);
    for k in stagger(li, g) {
        let r = partition_range(len, g, k);
        let bytes = t.recv(leaders[k], gather)?;
        read_f32s(unframe(&bytes, len, r.len())?, &mut x[r])?;
    }
    broadcast_to_members(t, bucket, node, x)
}

/// Compressed sum. Only the inter-node exchange is compressed; leaders
/// carry the worker-side residual of their node. Lossless codecs and
/// single-node clusters reduce to [`c_fp_s`].
pub(super) fn c_lp_s(
    t: &dyn Transport,
    bucket: u32,
    x: &mut [f32],
    segments: &[usize],
    q: &mut Quantizer,
    error: Option<&mut ErrorState>,
) -> Result<LpTrace> {
    let layout = t.layout().clone();
    if q.codec().is_lossless() || layout.n_nodes() == 1 {
        let mut y = match error.as_deref() {
            Some(e) => e.delta.compensated_input(x),
            None => x.to_vec(),
        };
        let input = y.clone();
        c_fp_s(t, bucket, &mut y)?;
        x.copy_from_slice(&y);
        if let Some(e) = error {
            e.delta = Residual::zeros(e.delta.len());
            e.epsilon = Residual::zeros(e.epsilon.len());
        }
        return Ok(LpTrace {
            sent: input.clone(),
            input,
            ..LpTrace::default()
        });
    }

    let me = t.rank();
    let node = layout.node_of(me);
    let leader = layout.leader(node);
    let len = x.len();
    if me != leader {
        member_roundtrip(t, bucket, leader, x)?;
        return Ok(LpTrace::default());
    }

    for &m in &layout.members(node)[1..] {
        let bytes = t.recv(m, tag(bucket, Phase::IntraReduce))?;
        let mut v = vec![0.0f32; len];
        read_f32s(unframe(&bytes, len, len)?, &mut v)?;
        add_assign(x, &v);
    }
    let trace = compressed_scatter_reduce(
        t,
        &layout.leaders(),
        me,
        bucket,
        (Phase::Inter, Phase::InterGather),
        x,
        segments,
        q,
        error,
    )?;
    broadcast_to_members(t, bucket, node, x)?;
    Ok(trace)
}

fn member_roundtrip(t: &dyn Transport, bucket: u32, leader: usize, x: &mut [f32]) -> Result<()> {
    let len = x.len();
    t.send(leader, tag(bucket, Phase::IntraReduce), frame(len, len, &f32_bytes(x)))?;
    let bytes = t.recv(leader, tag(bucket, Phase::Bcast))?;
    read_f32s(unframe(&bytes, len, len)?, x)
}

fn broadcast_to_members(t: &dyn Transport, bucket: u32, node: usize, x: &[f32]) -> Result<()> {
    let layout = t.layout();
    let payload = frame(x.len(), x.len(), &f32_bytes(x));
    for &m in &layout.members(node)[1..] {
        t.send(m, tag(bucket, Phase::Bcast), payload.clone())?;
    }
    Ok(())
}

fn node_index(leaders: &[usize], rank: usize) -> Result<usize> {
    leaders
        .iter()
        .position(|&r| r == rank)
        .ok_or_else(|| Error::InvalidLayout(format!("rank {rank} is not a node leader")))
}

fn parse_bundle(body: &[u8], count: usize) -> Result<Vec<(usize, Vec<f32>)>> {
    let malformed = || Error::MalformedPayload("truncated member bundle".into());
    let header = body.get(0..4).ok_or_else(malformed)?;
    let members = u32::from_le_bytes(header.try_into().unwrap()) as usize;
    let stride = 4 + 4 * count;
    if body.len() != 4 + members * stride {
        return Err(malformed());
    }
    body[4..]
        .chunks_exact(stride)
        .map(|rec| {
            let rank = u32::from_le_bytes(rec[0..4].try_into().unwrap()) as usize;
            let mut v = vec![0.0f32; count];
            read_f32s(&rec[4..], &mut v)?;
            Ok((rank, v))
        })
        .collect()
}
