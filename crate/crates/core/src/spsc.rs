//! Bounded single-producer single-consumer queues with blocking wake-up.
//!
//! Consumers sleep on a [`Waiter`] rather than spinning. One waiter may be
//! shared by several queues when a thread consumes from more than one source.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam::queue::ArrayQueue;

/// Level-triggered wake-up flag.
#[derive(Debug, Default)]
pub struct Waiter {
    ready: Mutex<bool>,
    cv: Condvar,
}

impl Waiter {
    pub fn new() -> Arc<Waiter> {
        Arc::new(Waiter::default())
    }

    pub fn notify(&self) {
        let mut r = self.ready.lock().unwrap();
        *r = true;
        self.cv.notify_one();
    }

    /// Sleeps until notified or until `timeout` passes. Consumes the
    /// notification. Returns false on timeout.
    pub fn wait(&self, timeout: Option<Duration>) -> bool {
        let mut r = self.ready.lock().unwrap();
        let deadline = timeout.map(|t| Instant::now() + t);
        while !*r {
            match deadline {
                None => r = self.cv.wait(r).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return false;
                    }
                    r = self.cv.wait_timeout(r, d - now).unwrap().0;
                }
            }
        }
        *r = false;
        true
    }
}

pub struct Producer<T> {
    q: Arc<ArrayQueue<T>>,
    waiter: Arc<Waiter>,
}

pub struct Consumer<T> {
    q: Arc<ArrayQueue<T>>,
    waiter: Arc<Waiter>,
}

pub fn channel<T>(capacity: usize, waiter: Arc<Waiter>) -> (Producer<T>, Consumer<T>) {
    let q = Arc::new(ArrayQueue::new(capacity));
    (
        Producer {
            q: Arc::clone(&q),
            waiter: Arc::clone(&waiter),
        },
        Consumer { q, waiter },
    )
}

impl<T> Producer<T> {
    /// Enqueues and wakes the consumer. Returns the value back if full.
    pub fn push(&self, v: T) -> Result<(), T> {
        self.q.push(v)?;
        self.waiter.notify();
        Ok(())
    }

    /// Enqueues, yielding the CPU while the queue is full.
    pub fn push_blocking(&self, mut v: T) {
        loop {
            match self.q.push(v) {
                Ok(()) => break,
                Err(back) => {
                    v = back;
                    self.waiter.notify();
                    std::thread::yield_now();
                }
            }
        }
        self.waiter.notify();
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

impl<T> Consumer<T> {
    pub fn pop(&self) -> Option<T> {
        self.q.pop()
    }

    /// Pops, sleeping until an item arrives or `timeout` passes.
    pub fn pop_wait(&self, timeout: Option<Duration>) -> Option<T> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(v) = self.q.pop() {
                return Some(v);
            }
            let left = match deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return None;
                    }
                    Some(d - now)
                }
                None => None,
            };
            self.waiter.wait(left);
        }
    }

    pub fn waiter(&self) -> &Arc<Waiter> {
        &self.waiter
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_across_threads() {
        let (tx, rx) = channel(16, Waiter::new());
        let h = std::thread::spawn(move || {
            for i in 0..10_000u32 {
                tx.push_blocking(i);
            }
        });
        for i in 0..10_000u32 {
            assert_eq!(rx.pop_wait(Some(Duration::from_secs(5))), Some(i));
        }
        h.join().unwrap();
        assert!(rx.pop().is_none());
    }

    #[test]
    fn full_queue_returns_the_value() {
        let (tx, _rx) = channel(2, Waiter::new());
        tx.push(1).unwrap();
        tx.push(2).unwrap();
        assert_eq!(tx.push(3), Err(3));
    }

    #[test]
    fn pop_wait_times_out() {
        let (_tx, rx) = channel::<u8>(2, Waiter::new());
        let t0 = Instant::now();
        assert!(rx.pop_wait(Some(Duration::from_millis(20))).is_none());
        assert!(t0.elapsed() >= Duration::from_millis(19));
    }

    #[test]
    fn shared_waiter_wakes_on_either_queue() {
        let w = Waiter::new();
        let (ta, ra) = channel::<u8>(4, Arc::clone(&w));
        let (tb, rb) = channel::<u8>(4, Arc::clone(&w));
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(10));
            tb.push(9).unwrap();
            ta
        });
        assert!(w.wait(Some(Duration::from_secs(5))));
        assert_eq!(rb.pop(), Some(9));
        assert!(ra.pop().is_none());
        h.join().unwrap();
    }
}
