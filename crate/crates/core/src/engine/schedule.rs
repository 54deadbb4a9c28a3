use serde::Serialize;

/// One invocation of a communication hook seen during the profiling pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRecord {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub bytes: usize,
    /// Position of this call among all hook calls of the pass.
    pub invocation: usize,
    pub virtual_time: f64,
}

/// Hook calls of the first iteration, in the order they happened.
/// Appending is only possible until [`freeze`](Self::freeze).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileLog {
    records: Vec<ProfileRecord>,
    frozen: bool,
}

impl ProfileLog {
    pub(crate) fn push(&mut self, record: ProfileRecord) {
        assert!(!self.frozen, "profile log is frozen");
        self.records.push(record);
    }

    pub(crate) fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn records(&self) -> &[ProfileRecord] {
        &self.records
    }

    /// Layers in the order their hooks fired.
    pub fn layer_order(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.layer).collect()
    }
}

/// A group of layers communicated together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BucketPlan {
    /// Member layers in forward order.
    pub layers: Vec<usize>,
    /// Layer whose backward completion releases the bucket.
    pub trigger: usize,
}

/// Buckets in launch order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub buckets: Vec<BucketPlan>,
}

impl Schedule {
    /// One bucket per layer, launched in backward order.
    pub fn per_layer(n_layers: usize) -> Self {
        Self {
            buckets: (0..n_layers)
                .rev()
                .map(|l| BucketPlan {
                    layers: vec![l],
                    trigger: l,
                })
                .collect(),
        }
    }

    /// Greedy packing of layers in `order` (backward completion order) into
    /// buckets of at most `capacity` bytes. A layer larger than the
    /// capacity gets a bucket of its own.
    pub fn greedy(order: &[usize], bytes: &[usize], capacity: usize) -> Self {
        let mut buckets = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut filled = 0;
        for &l in order {
            if !current.is_empty() && filled + bytes[l] > capacity {
                buckets.push(Self::close(std::mem::take(&mut current)));
                filled = 0;
            }
            current.push(l);
            filled += bytes[l];
        }
        if !current.is_empty() {
            buckets.push(Self::close(current));
        }
        Self { buckets }
    }

    fn close(backward_order: Vec<usize>) -> BucketPlan {
        let trigger = *backward_order.last().expect("non-empty bucket");
        let mut layers = backward_order;
        layers.sort_unstable();
        BucketPlan { layers, trigger }
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// `(bucket, position within bucket)` of every layer.
    pub fn locate(&self, n_layers: usize) -> Vec<(usize, usize)> {
        let mut at = vec![(usize::MAX, 0); n_layers];
        for (b, plan) in self.buckets.iter().enumerate() {
            for (i, &l) in plan.layers.iter().enumerate() {
                at[l] = (b, i);
            }
        }
        at
    }
}
