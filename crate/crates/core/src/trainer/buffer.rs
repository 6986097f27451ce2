use std::collections::BTreeMap;

use crate::numerics::Rng;
use crate::synthdata::Sample;

const BUFFER_STREAM: u64 = 0xb0f;

/// Samples kept from subjects of completed steps. Capacity 0 is the
/// rehearsal-free setting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RehearsalBuffer {
    capacity: usize,
    stored: BTreeMap<u32, Vec<Sample>>,
}

impl RehearsalBuffer {
    pub fn new(capacity: usize) -> Self {
        RehearsalBuffer {
            capacity,
            stored: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.stored.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.stored.values().map(Vec::len).sum()
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.stored.keys().copied().collect()
    }

    pub fn get(&self, subject: u32) -> &[Sample] {
        self.stored.get(&subject).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.stored.values().flatten()
    }
}

/// Keeps `min(capacity, n)` of `samples` for `subject`, drawn uniformly
/// without replacement; stored order follows the original order.
pub fn fill_buffer(buffer: &mut RehearsalBuffer, subject: u32, samples: &[&Sample], seed: u64) {
    if buffer.capacity == 0 {
        return;
    }
    let k = buffer.capacity.min(samples.len());
    let mut rng = Rng::stream(seed, &[BUFFER_STREAM, subject as u64]);
    let mut picked = rng.sample_indices(samples.len(), k);
    picked.sort_unstable();
    buffer.stored.insert(
        subject,
        picked.into_iter().map(|i| samples[i].clone()).collect(),
    );
}
