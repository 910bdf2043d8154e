//! Flat named parameter arrays, the exchange format between models and checkpoints.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named `f64` arrays in insertion-independent (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    arrays: BTreeMap<String, Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.arrays.insert(name.into(), values);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.arrays.get(name).map(Vec::as_slice)
    }

    /// The array under `name`, which must have exactly `len` entries.
    pub fn expect(&self, name: &str, len: usize) -> Result<&[f64]> {
        let values = self
            .get(name)
            .ok_or_else(|| Error::CheckpointCorrupt(format!("missing array `{name}`")))?;
        if values.len() != len {
            return Err(Error::CheckpointCorrupt(format!(
                "array `{name}` has {} entries, expected {len}",
                values.len()
            )));
        }
        Ok(values)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn put_u64(&mut self, name: impl Into<String>, value: u64) {
        self.insert(name, vec![f64::from_bits(value)]);
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        Ok(self.expect(name, 1)?[0].to_bits())
    }

    /// Stores integers bit-cast into `f64` slots.
    pub fn put_u64s(&mut self, name: impl Into<String>, values: impl IntoIterator<Item = u64>) {
        self.insert(name, values.into_iter().map(f64::from_bits).collect());
    }

    pub fn get_u64s(&self, name: &str) -> Result<Vec<u64>> {
        let values = self
            .get(name)
            .ok_or_else(|| Error::CheckpointCorrupt(format!("missing array `{name}`")))?;
        Ok(values.iter().map(|v| v.to_bits()).collect())
    }

    /// Records the exact position of a random stream.
    pub fn put_rng(&mut self, name: impl Into<String>, rng: &ChaCha8Rng) {
        let seed = rng.get_seed();
        let mut words: Vec<u64> = seed
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let pos = rng.get_word_pos();
        words.push(rng.get_stream());
        words.push(pos as u64);
        words.push((pos >> 64) as u64);
        self.put_u64s(name, words);
    }

    pub fn get_rng(&self, name: &str) -> Result<ChaCha8Rng> {
        self.expect(name, 7)?;
        let words = self.get_u64s(name)?;
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(&words[..4]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(words[4]);
        rng.set_word_pos(u128::from(words[5]) | (u128::from(words[6]) << 64));
        Ok(rng)
    }
}
