use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Replay buffer of past generator outputs shown to a discriminator.
#[derive(Debug, Clone)]
pub struct ImagePool<I> {
    capacity: usize,
    buffer: Vec<I>,
}

impl<I: Clone> ImagePool<I> {
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

    /// While filling, store and return `fresh`. Once full, return `fresh`
    /// with probability one half; otherwise swap it for a uniformly chosen
    /// stored image and return that one.
    pub fn query(&mut self, fresh: I, rng: &mut ChaCha8Rng) -> I {
        if self.capacity == 0 {
            return fresh;
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(fresh.clone());
            return fresh;
        }
        if rng.random_bool(0.5) {
            return fresh;
        }
        let k = rng.random_range(0..self.buffer.len());
        std::mem::replace(&mut self.buffer[k], fresh)
    }
}
