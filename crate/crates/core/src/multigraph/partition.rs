//! Set partitions via restricted growth strings.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use super::MultigraphError;

/// Largest ground set accepted by [`enumerate_partitions`] and the Möbius
/// machinery built on bitmask-indexed set functions.
pub const PARTITION_CAP: usize = 16;

/// Blocks are nonempty, pairwise disjoint, sorted internally and ordered by
/// their smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetPartition<T> {
    pub blocks: Vec<Vec<T>>,
}

impl<T> SetPartition<T> {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Lazily enumerates all partitions of `ground` (Bell-number many).
pub fn enumerate_partitions<T: Clone>(ground: &[T]) -> Result<PartitionIter<T>, MultigraphError> {
    if ground.len() > PARTITION_CAP {
        return Err(MultigraphError::PartitionCap { size: ground.len(), cap: PARTITION_CAP });
    }
    Ok(PartitionIter { ground: ground.to_vec(), rgs: vec![0; ground.len()], max_prefix: vec![0; ground.len()], started: false, done: false })
}

/// `rgs[i] <= 1 + max(rgs[..i])`; `max_prefix[i] = max(rgs[..=i])`.
pub struct PartitionIter<T> {
    ground: Vec<T>,
    rgs: Vec<usize>,
    max_prefix: Vec<usize>,
    started: bool,
    done: bool,
}

impl<T: Clone> PartitionIter<T> {
    fn emit(&self) -> SetPartition<T> {
        let count = self.max_prefix.last().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); count];
        for (i, &b) in self.rgs.iter().enumerate() {
            blocks[b].push(self.ground[i].clone());
        }
        SetPartition { blocks }
    }

    fn increment(&mut self) -> bool {
        let n = self.rgs.len();
        for i in (1..n).rev() {
            if self.rgs[i] <= self.max_prefix[i - 1] {
                self.rgs[i] += 1;
                self.max_prefix[i] = self.max_prefix[i - 1].max(self.rgs[i]);
                for j in i + 1..n {
                    self.rgs[j] = 0;
                    self.max_prefix[j] = self.max_prefix[i];
                }
                return true;
            }
        }
        false
    }
}

impl<T: Clone> Iterator for PartitionIter<T> {
    type Item = SetPartition<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
        } else if !self.increment() {
            self.done = true;
            return None;
        }
        Some(self.emit())
    }
}

/// Bell numbers by the Bell triangle.
pub fn bell_number(n: usize) -> BigUint {
    let mut row = vec![BigUint::one()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(row.last().cloned().unwrap_or_else(BigUint::zero));
        for v in &row {
            let sum = next.last().unwrap() + v;
            next.push(sum);
        }
        row = next;
    }
    row[0].clone()
}
