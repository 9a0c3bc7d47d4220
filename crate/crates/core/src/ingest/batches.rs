use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use rand::seq::SliceRandom;

use super::IngestError;
use crate::numerics::SeedStream;

/// Record indices for one batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub epoch: usize,
    /// Position of this batch in the overall stream.
    pub ordinal: usize,
    pub indices: Vec<usize>,
}

/// Seeded epoch permutations cut into fixed-size batches; the final partial
/// batch of every epoch is dropped.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    seed: SeedStream,
    epochs: usize,
    epoch: usize,
    cursor: usize,
    ordinal: usize,
    order: Vec<usize>,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64, epochs: usize) -> Result<Self, IngestError> {
        if batch_size < 2 {
            return Err(IngestError::Config(format!("batch size {} < 2 leaves no negatives", batch_size)));
        }
        if batch_size > len {
            return Err(IngestError::Config(format!("batch size {} exceeds {} records", batch_size, len)));
        }
        let mut it = Self {
            len,
            batch_size,
            seed: SeedStream::new(seed).named("shuffle"),
            epochs,
            epoch: 0,
            cursor: 0,
            ordinal: 0,
            order: Vec::new(),
        };
        it.order = it.permutation(0);
        Ok(it)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len / self.batch_size
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut self.seed.at(epoch as u64).rng());
        order
    }
}

impl Iterator for BatchIterator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.epoch >= self.epochs {
            return None;
        }
        if self.cursor + self.batch_size > self.len {
            self.epoch += 1;
            self.cursor = 0;
            if self.epoch >= self.epochs {
                return None;
            }
            self.order = self.permutation(self.epoch);
        }
        let indices = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        let batch = Batch { epoch: self.epoch, ordinal: self.ordinal, indices };
        self.ordinal += 1;
        Some(batch)
    }
}

/// Applies `work` to batches on `workers` threads and yields results in the
/// source order. With zero workers the work runs on the consuming thread.
pub struct Prefetch<R> {
    inner: PrefetchInner<R>,
}

enum PrefetchInner<R> {
    Inline(Box<dyn Iterator<Item = R> + Send>),
    Threaded {
        rx: Receiver<(usize, R)>,
        pending: BTreeMap<usize, R>,
        next: usize,
        handles: Vec<JoinHandle<()>>,
    },
}

impl<R: Send + 'static> Prefetch<R> {
    pub fn new<I, F>(source: I, workers: usize, capacity: usize, work: F) -> Self
    where
        I: Iterator<Item = Batch> + Send + 'static,
        F: Fn(Batch) -> R + Send + Sync + 'static,
    {
        if workers == 0 {
            return Self { inner: PrefetchInner::Inline(Box::new(source.map(work))) };
        }
        let source = Arc::new(Mutex::new(source.enumerate()));
        let work = Arc::new(work);
        let (tx, rx) = mpsc::sync_channel(capacity.max(1));
        let handles = (0..workers)
            .map(|_| {
                let (source, work, tx) = (Arc::clone(&source), Arc::clone(&work), tx.clone());
                thread::spawn(move || loop {
                    let item = source.lock().expect("batch source poisoned").next();
                    let Some((seq, batch)) = item else { break };
                    if tx.send((seq, work(batch))).is_err() {
                        break;
                    }
                })
            })
            .collect();
        Self { inner: PrefetchInner::Threaded { rx, pending: BTreeMap::new(), next: 0, handles } }
    }
}

impl<R> Iterator for Prefetch<R> {
    type Item = R;

    fn next(&mut self) -> Option<R> {
        match &mut self.inner {
            PrefetchInner::Inline(it) => it.next(),
            PrefetchInner::Threaded { rx, pending, next, .. } => loop {
                if let Some(r) = pending.remove(next) {
                    *next += 1;
                    return Some(r);
                }
                match rx.recv() {
                    Ok((seq, r)) => {
                        pending.insert(seq, r);
                    }
                    Err(_) => return None,
                }
            },
        }
    }
}

impl<R> Drop for Prefetch<R> {
    fn drop(&mut self) {
        if let PrefetchInner::Threaded { rx, handles, .. } = &mut self.inner {
            // Drain so blocked senders observe the hang-up.
            while rx.try_recv().is_ok() {}
            let (_tx, dummy) = mpsc::sync_channel(0);
            drop(std::mem::replace(rx, dummy));
            for h in handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}
