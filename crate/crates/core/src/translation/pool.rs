use rand::Rng;

use crate::nn::Tensor4;

/// History of generated images shown to a discriminator.
///
/// While filling, every query is stored and returned. Once full, a query
/// returns a uniformly chosen stored image (replacing it with the fresh
/// one) with probability one half, and the fresh image otherwise.
#[derive(Clone, Debug)]
pub struct ImagePool<T> {
    capacity: usize,
    buffer: Vec<Tensor4<T>>,
}

pub const POOL_CAPACITY: usize = 8;

impl<T: crate::nn::Real> ImagePool<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            buffer: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Returns the image to show and whether it came from history.
    pub fn query<R: Rng + ?Sized>(&mut self, fresh: Tensor4<T>, rng: &mut R) -> (Tensor4<T>, bool) {
        if self.capacity == 0 {
            return (fresh, false);
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(fresh.clone());
            return (fresh, false);
        }
        if rng.random::<f64>() < 0.5 {
            let i = rng.random_range(0..self.buffer.len());
            let old = std::mem::replace(&mut self.buffer[i], fresh);
            (old, true)
        } else {
            (fresh, false)
        }
    }

    /// Queries each sample of a batch independently and restacks the results.
    pub fn query_batch<R: Rng + ?Sized>(&mut self, fresh: &Tensor4<T>, rng: &mut R) -> Tensor4<T> {
        let picked: Vec<Tensor4<T>> = (0..fresh.batch()).map(|n| self.query(fresh.select(n), rng).0).collect();
        let refs: Vec<&Tensor4<T>> = picked.iter().collect();
        Tensor4::stack(&refs).expect("pool images share the batch's shape")
    }
}
