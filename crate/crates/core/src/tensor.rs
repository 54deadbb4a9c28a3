//! Contiguous tensors and the bucket arena used for flattening.
//!
//! A [`BucketArena`] owns one `Vec<f32>` and hands out views into it. After
//! [`flatten`] the original tensors no longer exist on their own: every read
//! or write goes through the arena, so the per-tensor view and the flat view
//! always agree.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ARENA_ID: AtomicU64 = AtomicU64::new(0);

/// A dense buffer of `f32` with shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FlatTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidSize("tensor name must be non-empty".into()));
        }
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) && !data.is_empty() || expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { name, shape, data })
    }

    /// One-dimensional tensor whose shape is `[data.len()]`.
    pub fn vector(name: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        let len = data.len();
        Self::new(name, vec![len], data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Location of one member tensor inside an arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorView {
    pub arena_id: u64,
    pub offset: usize,
    pub length: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorView {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.length
    }
}

/// Borrowed single-tensor view over a whole arena.
#[derive(Debug)]
pub struct FlatRef<'a> {
    pub data: &'a [f32],
}

impl FlatRef<'_> {
    pub fn shape(&self) -> [usize; 1] {
        [self.data.len()]
    }
}

#[derive(Debug)]
pub struct FlatMut<'a> {
    pub data: &'a mut [f32],
}

impl FlatMut<'_> {
    pub fn shape(&self) -> [usize; 1] {
        [self.data.len()]
    }
}

/// One contiguous allocation backing several tensors, laid out in
/// registration order with no gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketArena {
    id: u64,
    storage: Vec<f32>,
    members: Vec<TensorView>,
}

/// Copies `tensors` once into a fresh arena and returns it; the arena is
/// the only owner of the data afterwards.
pub fn flatten(tensors: Vec<FlatTensor>) -> Result<BucketArena> {
    if tensors.is_empty() {
        return Err(Error::EmptyArena);
    }
    let mut seen = HashSet::with_capacity(tensors.len());
    for t in &tensors {
        if t.is_empty() {
            return Err(Error::ZeroLength(t.name.clone()));
        }
        if !seen.insert(t.name.as_str()) {
            return Err(Error::DuplicateName(t.name.clone()));
        }
    }

    let id = NEXT_ARENA_ID.fetch_add(1, Ordering::Relaxed);
    let total = tensors.iter().map(FlatTensor::len).sum();
    let mut storage = Vec::with_capacity(total);
    let mut members = Vec::with_capacity(tensors.len());
    for t in tensors {
        members.push(TensorView {
            arena_id: id,
            offset: storage.len(),
            length: t.len(),
            name: t.name,
            shape: t.shape,
        });
        storage.extend_from_slice(&t.data);
    }
    Ok(BucketArena {
        id,
        storage,
        members,
    })
}

impl BucketArena {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn members(&self) -> &[TensorView] {
        &self.members
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.members.iter().position(|m| m.name == name)
    }

    pub fn view(&self, index: usize) -> &[f32] {
        &self.storage[self.members[index].range()]
    }

    pub fn view_mut(&mut self, index: usize) -> &mut [f32] {
        let range = self.members[index].range();
        &mut self.storage[range]
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.position(name).map(|i| self.view(i))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        self.position(name).map(move |i| self.view_mut(i))
    }

    /// The whole arena as one tensor of shape `[len]`. No copy is made.
    pub fn as_flat(&self) -> FlatRef<'_> {
        FlatRef {
            data: &self.storage,
        }
    }

    pub fn as_flat_mut(&mut self) -> FlatMut<'_> {
        FlatMut {
            data: &mut self.storage,
        }
    }

    /// Copies every member back out as a standalone tensor.
    pub fn to_tensors(&self) -> Vec<FlatTensor> {
        self.members
            .iter()
            .map(|m| FlatTensor {
                name: m.name.clone(),
                shape: m.shape.clone(),
                data: self.storage[m.range()].to_vec(),
            })
            .collect()
    }
}
