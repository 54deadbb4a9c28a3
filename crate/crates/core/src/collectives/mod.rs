//! The four communication primitives.
//!
//! | primitive | result on worker `i`              |
//! |-----------|-----------------------------------|
//! | `c_fp_s`  | `sum_j x_j`                       |
//! | `c_lp_s`  | `Q(sum_j Q(x_j + d_j) + e)`       |
//! | `d_fp_s`  | `sum_{j in N(i)} x_j`             |
//! | `d_lp_s`  | `sum_{j in N(i)} Q(x_j)`          |
//!
//! Centralized primitives run ScatterReduce: the vector is cut into one
//! partition per worker, worker `k` reduces partition `k` in ascending rank
//! order and sends the result back to everyone. Reductions therefore have a
//! fixed order and are bitwise reproducible on any backend.
//!
//! Every chunk on the wire starts with an 8-byte header
//! `[vector_len: u32][element_count: u32]` so receivers can detect length
//! mismatches before decoding. Tags are `bucket * 16 + phase`, see [`Phase`].

mod hierarchical;
pub mod topology;

use std::ops::Range;
use std::sync::Arc;

use crate::codec::{Codec, ErrorState, Quantizer, Residual};
use crate::error::{Error, Result};
use crate::transport::{ClusterLayout, Tag, Transport};

pub use topology::{Topology, TopologyKind};

/// Half-open element range of partition `k` when `len` elements are split
/// into `parts` pieces. The first `len % parts` pieces get one extra element.
pub fn partition_range(len: usize, parts: usize, k: usize) -> Range<usize> {
    let base = len / parts;
    let extra = len % parts;
    let start = k * base + k.min(extra);
    let size = base + usize::from(k < extra);
    start..start + size
}

/// Which partition element `index` falls into.
pub fn partition_owner(index: usize, len: usize, parts: usize) -> usize {
    let base = len / parts;
    let extra = len % parts;
    let wide = extra * (base + 1);
    if index < wide {
        index / (base + 1)
    } else {
        extra + (index - wide) / base
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub owner: usize,
    pub range: Range<usize>,
}

pub fn partitions(len: usize, parts: usize) -> Vec<Partition> {
    (0..parts)
        .map(|owner| Partition {
            owner,
            range: partition_range(len, parts, owner),
        })
        .collect()
}

/// Low four bits of a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Phase {
    /// Chunks to partition owners.
    Scatter = 0,
    /// Reduced partitions back from owners.
    Gather = 1,
    /// Chunks between node leaders.
    Inter = 2,
    /// Leader to node members.
    Bcast = 3,
    /// Node members to leader.
    IntraReduce = 4,
    /// Reduced partitions between node leaders.
    InterGather = 5,
    /// Decentralized neighbour exchange.
    Neighbor = 6,
}

pub const PHASES_PER_BUCKET: u32 = 16;

pub fn tag(bucket: u32, phase: Phase) -> Tag {
    bucket * PHASES_PER_BUCKET + phase as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Sum,
    Average,
}

/// Vectors involved in one compressed round on this worker.
///
/// `input` is what was compressed (`x + d`), `sent` its decoded form,
/// and `owner_input` / `owner_sent` the same for the re-encode at the
/// partition this worker owns (empty if it owns none).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpTrace {
    pub input: Vec<f32>,
    pub sent: Vec<f32>,
    pub owner_input: Vec<f32>,
    pub owner_sent: Vec<f32>,
}

/// Collective endpoint of one worker.
#[derive(Clone)]
pub struct Communicator {
    transport: Arc<dyn Transport>,
    hierarchical: bool,
}

impl Communicator {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            hierarchical: false,
        }
    }

    /// Centralized primitives go through node leaders when enabled.
    pub fn with_hierarchical(mut self, on: bool) -> Self {
        self.hierarchical = on;
        self
    }

    pub fn set_hierarchical(&mut self, on: bool) {
        self.hierarchical = on;
    }

    pub fn is_hierarchical(&self) -> bool {
        self.hierarchical
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn world_size(&self) -> usize {
        self.transport.world_size()
    }

    pub fn layout(&self) -> &ClusterLayout {
        self.transport.layout()
    }

    /// Error state shaped for a bucket of `len` elements under the current
    /// communication mode.
    pub fn error_state(&self, len: usize) -> ErrorState {
        self.error_state_segmented(&[len])
    }

    /// Error state for a bucket made of segments of the given lengths.
    pub fn error_state_segmented(&self, segments: &[usize]) -> ErrorState {
        ErrorState::new(segments.iter().sum(), self.owned_len(segments))
    }

    fn owned_len(&self, segments: &[usize]) -> usize {
        let layout = self.layout();
        let (parts, k) = if self.hierarchical {
            let leaders = layout.leaders();
            match leaders.iter().position(|&r| r == self.rank()) {
                Some(k) if leaders.len() > 1 => (leaders.len(), k),
                _ => return 0,
            }
        } else {
            (layout.world_size(), self.rank())
        };
        pieces(segments, parts, k).iter().map(Range::len).sum()
    }

    pub fn c_fp_s(&self, bucket: u32, x: &mut [f32]) -> Result<()> {
        if self.hierarchical {
            return hierarchical::c_fp_s(self.transport.as_ref(), bucket, x);
        }
        let group: Vec<usize> = (0..self.world_size()).collect();
        scatter_reduce_fp(
            self.transport.as_ref(),
            &group,
            self.rank(),
            bucket,
            (Phase::Scatter, Phase::Gather),
            x,
        )
    }

    pub fn c_lp_s(
        &self,
        bucket: u32,
        x: &mut [f32],
        quantizer: &mut Quantizer,
        error: Option<&mut ErrorState>,
    ) -> Result<()> {
        let segments = [x.len()];
        self.c_lp_s_traced(bucket, x, &segments, quantizer, error).map(drop)
    }

    /// [`c_lp_s`](Self::c_lp_s) over a bucket of several tensors. Each
    /// segment is partitioned and compressed on its own, so the result does
    /// not depend on how tensors are grouped into buckets.
    pub fn c_lp_s_segmented(
        &self,
        bucket: u32,
        x: &mut [f32],
        segments: &[usize],
        quantizer: &mut Quantizer,
        error: Option<&mut ErrorState>,
    ) -> Result<()> {
        self.c_lp_s_traced(bucket, x, segments, quantizer, error).map(drop)
    }

    /// [`c_lp_s_segmented`](Self::c_lp_s_segmented) that also reports what
    /// was compressed.
    pub fn c_lp_s_traced(
        &self,
        bucket: u32,
        x: &mut [f32],
        segments: &[usize],
        quantizer: &mut Quantizer,
        error: Option<&mut ErrorState>,
    ) -> Result<LpTrace> {
        check_segments(segments, x.len())?;
        if let Some(e) = error.as_deref() {
            self.check_state(e, segments)?;
        }
        if self.hierarchical {
            return hierarchical::c_lp_s(
                self.transport.as_ref(),
                bucket,
                x,
                segments,
                quantizer,
                error,
            );
        }
        let group: Vec<usize> = (0..self.world_size()).collect();
        compressed_scatter_reduce(
            self.transport.as_ref(),
            &group,
            self.rank(),
            bucket,
            (Phase::Scatter, Phase::Gather),
            x,
            segments,
            quantizer,
            error,
        )
    }

    fn check_state(&self, e: &ErrorState, segments: &[usize]) -> Result<()> {
        let len: usize = segments.iter().sum();
        let owned = self.owned_len(segments);
        if e.delta.len() != len || e.epsilon.len() != owned {
            return Err(Error::StateMismatch(format!(
                "error state is ({}, {}), bucket needs ({len}, {owned})",
                e.delta.len(),
                e.epsilon.len()
            )));
        }
        Ok(())
    }

    pub fn d_fp_s(
        &self,
        bucket: u32,
        x: &mut [f32],
        topology: &Topology,
        round: u64,
        mode: Mode,
    ) -> Result<()> {
        let own = x.to_vec();
        let payload = frame(x.len(), x.len(), &f32_bytes(x));
        self.neighbor_sum(bucket, x, topology, round, mode, own, payload, |body, out| {
            read_f32s(body, out)
        })
    }

    pub fn d_lp_s(
        &self,
        bucket: u32,
        x: &mut [f32],
        topology: &Topology,
        round: u64,
        quantizer: &mut Quantizer,
        mode: Mode,
    ) -> Result<()> {
        let segments = [x.len()];
        self.d_lp_s_segmented(bucket, x, &segments, topology, round, quantizer, mode)
    }

    /// [`d_lp_s`](Self::d_lp_s) compressing each segment on its own.
    #[allow(clippy::too_many_arguments)]
    pub fn d_lp_s_segmented(
        &self,
        bucket: u32,
        x: &mut [f32],
        segments: &[usize],
        topology: &Topology,
        round: u64,
        quantizer: &mut Quantizer,
        mode: Mode,
    ) -> Result<()> {
        check_segments(segments, x.len())?;
        let codec = quantizer.codec();
        let ranges = segment_ranges(segments);
        let body = encode_pieces(quantizer, x, &ranges)?;
        let mut own = vec![0.0f32; x.len()];
        decode_pieces(codec, &body, &ranges, 0, &mut own)?;
        let payload = frame(x.len(), x.len(), &body);
        self.neighbor_sum(bucket, x, topology, round, mode, own, payload, |body, out| {
            decode_pieces(codec, body, &ranges, 0, out)
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn neighbor_sum(
        &self,
        bucket: u32,
        x: &mut [f32],
        topology: &Topology,
        round: u64,
        mode: Mode,
        own: Vec<f32>,
        payload: Vec<u8>,
        decode: impl Fn(&[u8], &mut [f32]) -> Result<()>,
    ) -> Result<()> {
        let n = self.world_size();
        if topology.world_size() != n {
            return Err(Error::InvalidTopology(format!(
                "topology has {} workers, cluster has {n}",
                topology.world_size()
            )));
        }
        let me = self.rank();
        let t = tag(bucket, Phase::Neighbor);
        let neighbors = topology.neighbors(me, round);
        for &j in neighbors.iter().filter(|&&j| j != me) {
            self.transport.send(j, t, payload.clone())?;
        }
        let len = x.len();
        let mut acc: Option<Vec<f32>> = None;
        let mut incoming = vec![0.0f32; len];
        for &j in &neighbors {
            let term = if j == me {
                &own
            } else {
                let bytes = self.transport.recv(j, t)?;
                decode(unframe(&bytes, len, len)?, &mut incoming)?;
                &incoming
            };
            match acc.as_mut() {
                None => acc = Some(term.clone()),
                Some(a) => add_assign(a, term),
            }
        }
        let acc = acc.expect("neighbourhood contains self");
        match mode {
            Mode::Sum => x.copy_from_slice(&acc),
            Mode::Average => {
                let k = neighbors.len() as f32;
                for (o, v) in x.iter_mut().zip(&acc) {
                    *o = v / k;
                }
            }
        }
        Ok(())
    }
}

fn check_segments(segments: &[usize], len: usize) -> Result<()> {
    let total: usize = segments.iter().sum();
    if total != len {
        return Err(Error::LengthMismatch {
            expected: total,
            actual: len,
        });
    }
    Ok(())
}

fn segment_ranges(segments: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    segments
        .iter()
        .map(|&n| {
            start += n;
            start - n..start
        })
        .collect()
}

/// Absolute element ranges owned by partition `k`: the `k`-th slice of
/// every segment.
pub(crate) fn pieces(segments: &[usize], parts: usize, k: usize) -> Vec<Range<usize>> {
    segment_ranges(segments)
        .into_iter()
        .map(|seg| {
            let r = partition_range(seg.len(), parts, k);
            seg.start + r.start..seg.start + r.end
        })
        .collect()
}

fn encode_pieces(q: &mut Quantizer, x: &[f32], ranges: &[Range<usize>]) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    for r in ranges {
        body.extend(q.encode(&x[r.clone()])?);
    }
    Ok(body)
}

/// Decodes concatenated piece payloads into `out`, where piece `r` lands at
/// `r - base`.
fn decode_pieces(
    codec: Codec,
    body: &[u8],
    ranges: &[Range<usize>],
    base: usize,
    out: &mut [f32],
) -> Result<()> {
    let expected: usize = ranges.iter().map(|r| codec.payload_len(r.len())).sum();
    if body.len() != expected {
        return Err(Error::MalformedPayload(format!(
            "compressed chunk must be {expected} bytes, got {}",
            body.len()
        )));
    }
    let mut at = 0;
    for r in ranges {
        let n = codec.payload_len(r.len());
        codec.decode_into(&body[at..at + n], &mut out[r.start - base..r.end - base])?;
        at += n;
    }
    Ok(())
}

fn gather_pieces(x: &[f32], ranges: &[Range<usize>]) -> Vec<f32> {
    ranges.iter().flat_map(|r| x[r.clone()].iter().copied()).collect()
}

fn scatter_pieces(src: &[f32], ranges: &[Range<usize>], x: &mut [f32]) {
    let mut at = 0;
    for r in ranges {
        x[r.clone()].copy_from_slice(&src[at..at + r.len()]);
        at += r.len();
    }
}

/// Piece ranges relative to the start of their concatenation.
fn packed(ranges: &[Range<usize>]) -> Vec<Range<usize>> {
    let lens: Vec<usize> = ranges.iter().map(Range::len).collect();
    segment_ranges(&lens)
}

fn add_assign(acc: &mut [f32], term: &[f32]) {
    for (a, t) in acc.iter_mut().zip(term) {
        *a += t;
    }
}

pub(crate) fn f32_bytes(x: &[f32]) -> Vec<u8> {
    x.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn read_f32s(bytes: &[u8], out: &mut [f32]) -> Result<()> {
    if bytes.len() != 4 * out.len() {
        return Err(Error::MalformedPayload(format!(
            "expected {} f32 bytes, got {}",
            4 * out.len(),
            bytes.len()
        )));
    }
    for (o, b) in out.iter_mut().zip(bytes.chunks_exact(4)) {
        *o = f32::from_le_bytes(b.try_into().unwrap());
    }
    Ok(())
}

pub(crate) fn frame(total: usize, count: usize, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub(crate) fn unframe(bytes: &[u8], total: usize, count: usize) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::MalformedPayload("chunk shorter than header".into()));
    }
    let their_total = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let their_count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if their_total != total {
        return Err(Error::LengthMismatch {
            expected: total,
            actual: their_total,
        });
    }
    if their_count != count {
        return Err(Error::MalformedPayload(format!(
            "chunk carries {their_count} elements, expected {count}"
        )));
    }
    Ok(&bytes[8..])
}

/// Send order for a group member: everyone after `me`, then everyone before.
fn stagger(me: usize, g: usize) -> impl Iterator<Item = usize> {
    (me + 1..g).chain(0..me)
}

/// Full-precision ScatterReduce among `group` (ascending ranks).
pub(crate) fn scatter_reduce_fp(
    t: &dyn Transport,
    group: &[usize],
    rank: usize,
    bucket: u32,
    phases: (Phase, Phase),
    x: &mut [f32],
) -> Result<()> {
    let g = group.len();
    let me = member_index(group, rank)?;
    let len = x.len();
    let (scatter, gather) = (tag(bucket, phases.0), tag(bucket, phases.1));

    for k in stagger(me, g) {
        let r = partition_range(len, g, k);
        t.send(group[k], scatter, frame(len, r.len(), &f32_bytes(&x[r])))?;
    }

    let own = partition_range(len, g, me);
    let mut acc: Option<Vec<f32>> = None;
    let mut chunk = vec![0.0f32; own.len()];
    for (j, &src) in group.iter().enumerate() {
        if j == me {
            chunk.copy_from_slice(&x[own.clone()]);
        } else {
            let bytes = t.recv(src, scatter)?;
            read_f32s(unframe(&bytes, len, own.len())?, &mut chunk)?;
        }
        match acc.as_mut() {
            None => acc = Some(chunk.clone()),
            Some(a) => add_assign(a, &chunk),
        }
    }
    let acc = acc.unwrap_or_default();

    for k in stagger(me, g) {
        t.send(group[k], gather, frame(len, own.len(), &f32_bytes(&acc)))?;
    }
    x[own.clone()].copy_from_slice(&acc);
    for k in stagger(me, g) {
        let r = partition_range(len, g, k);
        let bytes = t.recv(group[k], gather)?;
        read_f32s(unframe(&bytes, len, r.len())?, &mut x[r])?;
    }
    Ok(())
}

/// Compressed ScatterReduce among `group`. Compresses `x + delta` piece by
/// piece, owners add `epsilon` and re-encode, and both residuals are
/// replaced by the exact compression error of this round.
#[allow(clippy::too_many_arguments)]
pub(crate) fn compressed_scatter_reduce(
    t: &dyn Transport,
    group: &[usize],
    rank: usize,
    bucket: u32,
    phases: (Phase, Phase),
    x: &mut [f32],
    segments: &[usize],
    q: &mut Quantizer,
    mut error: Option<&mut ErrorState>,
) -> Result<LpTrace> {
    let g = group.len();
    let me = member_index(group, rank)?;
    let len = x.len();
    let codec = q.codec();
    let (scatter, gather) = (tag(bucket, phases.0), tag(bucket, phases.1));
    let owned: Vec<Vec<Range<usize>>> = (0..g).map(|k| pieces(segments, g, k)).collect();
    let count = |k: usize| owned[k].iter().map(Range::len).sum::<usize>();

    let input = match error.as_deref() {
        Some(e) => e.delta.compensated_input(x),
        None => x.to_vec(),
    };
    let mut sent = vec![0.0f32; len];
    for (k, ranges) in owned.iter().enumerate() {
        let body = encode_pieces(q, &input, ranges)?;
        decode_pieces(codec, &body, ranges, 0, &mut sent)?;
        if k != me {
            t.send(group[k], scatter, frame(len, count(k), &body))?;
        }
    }

    let own = packed(&owned[me]);
    let mut acc: Option<Vec<f32>> = None;
    let mut chunk = vec![0.0f32; count(me)];
    for (j, &src) in group.iter().enumerate() {
        if j == me {
            chunk = gather_pieces(&sent, &owned[me]);
        } else {
            let bytes = t.recv(src, scatter)?;
            decode_pieces(codec, unframe(&bytes, len, chunk.len())?, &own, 0, &mut chunk)?;
        }
        match acc.as_mut() {
            None => acc = Some(chunk.clone()),
            Some(a) => add_assign(a, &chunk),
        }
    }
    let sum = acc.unwrap_or_default();
    let owner_input = match error.as_deref() {
        Some(e) => e.epsilon.compensated_input(&sum),
        None => sum,
    };
    let body = encode_pieces(q, &owner_input, &own)?;
    let mut owner_sent = vec![0.0f32; owner_input.len()];
    decode_pieces(codec, &body, &own, 0, &mut owner_sent)?;
    for k in stagger(me, g) {
        t.send(group[k], gather, frame(len, owner_sent.len(), &body))?;
    }
    scatter_pieces(&owner_sent, &owned[me], x);
    for k in stagger(me, g) {
        let bytes = t.recv(group[k], gather)?;
        let theirs = packed(&owned[k]);
        let mut part = vec![0.0f32; count(k)];
        decode_pieces(codec, unframe(&bytes, len, part.len())?, &theirs, 0, &mut part)?;
        scatter_pieces(&part, &owned[k], x);
    }

    if let Some(e) = error.as_deref_mut() {
        e.delta = Residual::between(&input, &sent);
        e.epsilon = Residual::between(&owner_input, &owner_sent);
    }
    Ok(LpTrace {
        input,
        sent,
        owner_input,
        owner_sent,
    })
}

fn member_index(group: &[usize], rank: usize) -> Result<usize> {
    group
        .iter()
        .position(|&r| r == rank)
        .ok_or_else(|| Error::InvalidLayout(format!("rank {rank} is not in the collective group")))
}
