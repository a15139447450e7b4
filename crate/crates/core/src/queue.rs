//! Bounded single-consumer queue that never blocks the producer. When full,
//! the oldest entry is evicted and counted.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
}

#[derive(Debug)]
pub struct DropOldest<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
    capacity: usize,
    pushed: AtomicU64,
    dropped: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pop<T> {
    Item(T),
    TimedOut,
    /// Closed and drained.
    Closed,
}

impl<T> DropOldest<T> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be at least 1");
        Self {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity,
            pushed: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner<T>> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Enqueues `item`, evicting the oldest entry if full. Returns false if
    /// the queue is closed (the item is discarded, not counted as a drop).
    pub fn push(&self, item: T) -> bool {
        let mut g = self.lock();
        if g.closed {
            return false;
        }
        if g.items.len() == self.capacity {
            g.items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        g.items.push_back(item);
        self.pushed.fetch_add(1, Ordering::Relaxed);
        drop(g);
        self.ready.notify_one();
        true
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Pop<T> {
        let g = self.lock();
        let (mut g, _) = self
            .ready
            .wait_timeout_while(g, timeout, |i| i.items.is_empty() && !i.closed)
            .unwrap_or_else(|p| p.into_inner());
        match g.items.pop_front() {
            Some(item) => Pop::Item(item),
            None if g.closed => Pop::Closed,
            None => Pop::TimedOut,
        }
    }

    /// Blocks until an item arrives or the queue is closed and empty.
    pub fn pop(&self) -> Option<T> {
        loop {
            match self.pop_timeout(Duration::from_secs(3600)) {
                Pop::Item(i) => return Some(i),
                Pop::Closed => return None,
                Pop::TimedOut => {}
            }
        }
    }

    /// Stops accepting items. Queued items can still be popped.
    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pushed(&self) -> u64 {
        self.pushed.load(Ordering::Relaxed)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn evicts_oldest() {
        let q = DropOldest::new(3);
        for i in 0..5 {
            assert!(q.push(i));
        }
        assert_eq!(q.dropped(), 2);
        assert_eq!(q.pop_timeout(Duration::ZERO), Pop::Item(2));
        q.close();
        assert!(!q.push(9));
        assert_eq!(q.pop(), Some(3));
        assert_eq!(q.pop(), Some(4));
        assert_eq!(q.pop(), None);
        assert_eq!(q.pop_timeout(Duration::ZERO), Pop::Closed);
    }

    #[test]
    fn timeout_when_empty() {
        let q: DropOldest<u8> = DropOldest::new(1);
        assert_eq!(q.pop_timeout(Duration::from_millis(5)), Pop::TimedOut);
    }

    #[test]
    fn consumer_thread_sees_order() {
        let q = Arc::new(DropOldest::new(1000));
        let c = {
            let q = q.clone();
            std::thread::spawn(move || std::iter::from_fn(|| q.pop()).collect::<Vec<u32>>())
        };
        for i in 0..500 {
            q.push(i);
        }
        q.close();
        assert_eq!(c.join().unwrap(), (0..500).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn keeps_the_newest(cap in 1usize..16, n in 0u32..64) {
            let q = DropOldest::new(cap);
            for i in 0..n {
                q.push(i);
            }
            q.close();
            let got: Vec<u32> = std::iter::from_fn(|| q.pop()).collect();
            let keep = (n as usize).min(cap) as u32;
            prop_assert_eq!(got, ((n - keep)..n).collect::<Vec<_>>());
            prop_assert_eq!(q.dropped() + u64::from(keep), u64::from(n));
        }
    }
}
