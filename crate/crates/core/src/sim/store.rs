//! In-memory object store with a latency model and I/O counters.
//!
//! The store is byte-exact and time-free: operations return the latency
//! they would cost, and the simulation engine decides whose clock to
//! charge. Counters accumulate every charged read and write.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::config::StoreModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub reads: u64,
    pub writes: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

pub struct ObjectStore {
    model: StoreModel,
    blobs: BTreeMap<String, Vec<u8>>,
    pub stats: StoreStats,
}

impl ObjectStore {
    pub fn new(model: StoreModel) -> Self {
        ObjectStore {
            model,
            blobs: BTreeMap::new(),
            stats: StoreStats::default(),
        }
    }

    /// Installs a blob without charging latency or counters: models inputs
    /// that were uploaded before the simulated pipeline starts.
    pub fn preload(&mut self, key: &str, blob: Vec<u8>) {
        self.blobs.insert(key.to_string(), blob);
    }

    /// Writes a blob, returning the charged latency.
    pub fn write(&mut self, key: &str, blob: Vec<u8>) -> f64 {
        let latency = self.model.latency(blob.len());
        self.stats.writes += 1;
        self.stats.bytes_written += blob.len() as u64;
        self.blobs.insert(key.to_string(), blob);
        latency
    }

    /// Reads a blob back byte-exactly, returning it with the charged
    /// latency.
    pub fn read(&mut self, key: &str) -> Result<(Vec<u8>, f64)> {
        let blob = self
            .blobs
            .get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?
            .clone();
        let latency = self.model.latency(blob.len());
        self.stats.reads += 1;
        self.stats.bytes_read += blob.len() as u64;
        Ok((blob, latency))
    }

    /// Blob length without charging anything; used to price a task's I/O
    /// before it runs.
    pub fn peek_len(&self, key: &str) -> Result<usize> {
        self.blobs
            .get(key)
            .map(|b| b.len())
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.blobs.contains_key(key)
    }
}
