//! Fixed-capacity history written by one thread and read by any number
//! without locks. Readings are immutable once published, so a reader sees
//! either the old or the new reading in a slot, never a mix.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::{ArcSwapOption, Guard};

use crate::reading::CompositeReading;

#[derive(Debug)]
pub struct HistoryRing {
    slots: Box<[ArcSwapOption<CompositeReading>]>,
    /// Seq of the newest published reading, 0 before the first.
    head: AtomicU64,
    latest: ArcSwapOption<CompositeReading>,
}

impl HistoryRing {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be at least 1");
        Self {
            slots: (0..capacity).map(|_| ArcSwapOption::empty()).collect(),
            head: AtomicU64::new(0),
            latest: ArcSwapOption::empty(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    fn slot(&self, seq: u64) -> &ArcSwapOption<CompositeReading> {
        &self.slots[((seq - 1) % self.slots.len() as u64) as usize]
    }

    /// Single writer only. `reading.seq` must be exactly one more than the
    /// previous push.
    pub fn push(&self, reading: Arc<CompositeReading>) {
        let seq = reading.seq;
        debug_assert_eq!(seq, self.head.load(Ordering::Relaxed) + 1, "seq must advance by one");
        self.slot(seq).store(Some(reading.clone()));
        self.latest.store(Some(reading));
        self.head.store(seq, Ordering::Release);
    }

    pub fn latest(&self) -> Option<Arc<CompositeReading>> {
        self.latest.load_full()
    }

    pub fn head(&self) -> u64 {
        self.head.load(Ordering::Acquire)
    }

    pub fn len(&self) -> usize {
        (self.head() as usize).min(self.capacity())
    }

    pub fn is_empty(&self) -> bool {
        self.head() == 0
    }

    /// Up to `k` most recent readings, oldest first, with consecutive seqs.
    pub fn last(&self, k: usize) -> Vec<Arc<CompositeReading>> {
        loop {
            let head = self.head();
            let n = (k.min(self.capacity()) as u64).min(head);
            let first = head - n + 1;
            let mut out = Vec::with_capacity(n as usize);
            let mut overtaken = false;
            for seq in first..=head {
                let g: Guard<Option<Arc<CompositeReading>>> = self.slot(seq).load();
                match g.as_ref() {
                    Some(r) if r.seq == seq => out.push(r.clone()),
                    _ => {
                        // The writer lapped us; start again from the new head.
                        overtaken = true;
                        break;
                    }
                }
            }
            if !overtaken {
                return out;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reading::fixtures::reading_with_aqi;

    fn r(seq: u64) -> Arc<CompositeReading> {
        Arc::new(reading_with_aqi(
            seq,
            (seq % 500) as u16,
            0,
            20.0,
            50.0,
            1.0,
            (seq % 500) as u16,
        ))
    }

    fn seqs(v: &[Arc<CompositeReading>]) -> Vec<u64> {
        v.iter().map(|r| r.seq).collect()
    }

    #[test]
    fn last_k() {
        let ring = HistoryRing::new(100);
        assert!(ring.last(5).is_empty());
        assert!(ring.latest().is_none());
        for s in 1..=2 {
            ring.push(r(s));
        }
        assert_eq!(seqs(&ring.last(5)), [1, 2]);
        for s in 3..=10 {
            ring.push(r(s));
        }
        assert_eq!(seqs(&ring.last(3)), [8, 9, 10]);
        assert_eq!(ring.latest().unwrap().seq, 10);
        assert!(ring.last(0).is_empty());
    }

    #[test]
    fn eviction() {
        let cap = 50;
        let ring = HistoryRing::new(cap);
        for s in 1..=(cap as u64 + 10) {
            ring.push(r(s));
        }
        let all = ring.last(cap);
        assert_eq!(all.len(), cap);
        assert_eq!(all[0].seq, 11);
        assert_eq!(ring.last(cap * 2).len(), cap);
        assert_eq!(ring.len(), cap);
    }

    #[test]
    fn capacity_one() {
        let ring = HistoryRing::new(1);
        ring.push(r(1));
        ring.push(r(2));
        assert_eq!(seqs(&ring.last(10)), [2]);
    }

    #[test]
    fn concurrent_readers_see_consecutive_runs() {
        let ring = Arc::new(HistoryRing::new(8));
        let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let (ring, stop) = (ring.clone(), stop.clone());
                std::thread::spawn(move || {
                    let mut checks = 0u64;
                    while !stop.load(Ordering::Relaxed) {
                        let v = ring.last(8);
                        for w in v.windows(2) {
                            assert_eq!(w[1].seq, w[0].seq + 1);
                        }
                        if let Some(l) = ring.latest() {
                            assert_eq!(l.pm2_5 as u64, l.seq % 500);
                        }
                        checks += 1;
                    }
                    checks
                })
            })
            .collect();
        for s in 1..=20_000 {
            ring.push(r(s));
        }
        stop.store(true, Ordering::Relaxed);
        for h in readers {
            assert!(h.join().unwrap() > 0);
        }
    }
}
