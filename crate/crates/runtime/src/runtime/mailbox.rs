//! Tag-matched receive queue.

use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use halo_core::{ChildRank, ComputeObject, HaloError, Result, ANY_TAG};

/// One completed invocation waiting to be received.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub source: ChildRank,
    pub tag: i32,
    /// Send order within `(source, tag)`; `None` is deliverable on arrival.
    pub seq: Option<u64>,
    pub object: ComputeObject,
    pub t2: Duration,
    pub t3: Duration,
}

impl Delivery {
    fn matches(&self, source: ChildRank, tag: i32) -> bool {
        (source == ChildRank::ANY || source == self.source) && (tag == ANY_TAG || tag == self.tag)
    }
}

#[derive(Default)]
struct Order {
    reserved: u64,
    taken: u64,
}

#[derive(Default)]
struct State {
    queue: VecDeque<Delivery>,
    order: HashMap<(ChildRank, i32), Order>,
    closed: bool,
}

impl State {
    /// Results overtaken by a later send of the same `(source, tag)` wait
    /// until their predecessors have been received.
    fn ready(&self, d: &Delivery) -> bool {
        d.seq
            .is_none_or(|s| self.order.get(&(d.source, d.tag)).is_none_or(|o| o.taken == s))
    }
}

#[derive(Default)]
pub struct Mailbox {
    state: Mutex<State>,
    cv: Condvar,
}

impl Mailbox {
    pub fn new() -> Mailbox {
        Mailbox::default()
    }

    /// The sequence number of the next send to `(source, tag)`.
    pub fn reserve(&self, source: ChildRank, tag: i32) -> u64 {
        let mut s = self.state.lock().unwrap();
        let o = s.order.entry((source, tag)).or_default();
        o.reserved += 1;
        o.reserved - 1
    }

    pub fn deliver(&self, d: Delivery) {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return;
        }
        s.queue.push_back(d);
        drop(s);
        self.cv.notify_all();
    }

    /// Removes the oldest delivery matching `(source, tag)`, waiting until
    /// `deadline`. Wildcards are [`ChildRank::ANY`] and [`ANY_TAG`].
    pub fn take(&self, source: ChildRank, tag: i32, deadline: Instant) -> Result<Delivery> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(i) = s.queue.iter().position(|d| d.matches(source, tag) && s.ready(d)) {
                let d = s.queue.remove(i).expect("index in range");
                if d.seq.is_some() {
                    if let Some(o) = s.order.get_mut(&(d.source, d.tag)) {
                        o.taken += 1;
                    }
                }
                return Ok(d);
            }
            if s.closed {
                return Err(HaloError::Finalized);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(HaloError::Timeout);
            }
            s = self.cv.wait_timeout(s, deadline - now).unwrap().0;
        }
    }

    /// Drops every delivery from `source`, returning them.
    pub fn purge(&self, source: ChildRank) -> Vec<Delivery> {
        let mut s = self.state.lock().unwrap();
        s.order.retain(|(src, _), _| *src != source);
        let mut gone = Vec::new();
        s.queue.retain(|d| {
            if d.source == source {
                gone.push(d.clone());
                false
            } else {
                true
            }
        });
        gone
    }

    /// Wakes all waiters with `ERR_FINALIZED` and returns what was queued.
    pub fn close(&self) -> Vec<Delivery> {
        let mut s = self.state.lock().unwrap();
        s.closed = true;
        let rest = s.queue.drain(..).collect();
        drop(s);
        self.cv.notify_all();
        rest
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn d(cr: u64, tag: i32, n: i32) -> Delivery {
        Delivery {
            source: ChildRank(cr),
            tag,
            seq: None,
            object: ComputeObject::default().with_tag(n),
            t2: Duration::ZERO,
            t3: Duration::ZERO,
        }
    }

    fn soon() -> Instant {
        Instant::now() + Duration::from_millis(20)
    }

    #[test]
    fn fifo_within_a_tag_and_out_of_order_across_tags() {
        let m = Mailbox::new();
        for (tag, n) in [(7, 0), (1, 1), (7, 2), (2, 3)] {
            m.deliver(d(5, tag, n));
        }
        assert_eq!(m.take(ChildRank(5), 2, soon()).unwrap().object.tag, 3);
        assert_eq!(m.take(ChildRank(5), 7, soon()).unwrap().object.tag, 0);
        assert_eq!(m.take(ChildRank(5), 7, soon()).unwrap().object.tag, 2);
        assert_eq!(m.take(ChildRank::ANY, ANY_TAG, soon()).unwrap().object.tag, 1);
        assert!(matches!(m.take(ChildRank(5), 7, soon()), Err(HaloError::Timeout)));
    }

    #[test]
    fn timeout_is_honoured() {
        let m = Mailbox::new();
        let t = Instant::now();
        assert!(matches!(
            m.take(ChildRank(1), 0, t + Duration::from_millis(50)),
            Err(HaloError::Timeout)
        ));
        let e = t.elapsed();
        assert!(e >= Duration::from_millis(50) && e < Duration::from_millis(500), "{e:?}");
    }

    #[test]
    fn close_wakes_blocked_receivers() {
        let m = Arc::new(Mailbox::new());
        let m2 = Arc::clone(&m);
        let h = std::thread::spawn(move || m2.take(ChildRank(1), 0, Instant::now() + Duration::from_secs(10)));
        std::thread::sleep(Duration::from_millis(20));
        m.close();
        assert!(matches!(h.join().unwrap(), Err(HaloError::Finalized)));
    }

    #[test]
    fn overtaken_results_wait_for_their_predecessors() {
        let m = Mailbox::new();
        let seqs: Vec<u64> = (0..3).map(|_| m.reserve(ChildRank(4), 0)).collect();
        assert_eq!(seqs, [0, 1, 2]);
        for (s, n) in [(2, 20), (1, 10)] {
            m.deliver(Delivery { seq: Some(s), ..d(4, 0, n) });
        }
        m.deliver(d(4, 0, 99));
        // the unsequenced delivery is the only one ready
        assert_eq!(m.take(ChildRank(4), 0, soon()).unwrap().object.tag, 99);
        assert!(matches!(m.take(ChildRank(4), 0, soon()), Err(HaloError::Timeout)));
        m.deliver(Delivery { seq: Some(0), ..d(4, 0, 0) });
        let order: Vec<i32> = (0..3).map(|_| m.take(ChildRank::ANY, ANY_TAG, soon()).unwrap().object.tag).collect();
        assert_eq!(order, [0, 10, 20]);
    }

    #[test]
    fn purge_removes_one_source() {
        let m = Mailbox::new();
        m.deliver(d(1, 0, 0));
        m.deliver(d(2, 0, 1));
        m.deliver(d(1, 0, 2));
        assert_eq!(m.purge(ChildRank(1)).len(), 2);
        assert_eq!(m.len(), 1);
    }
}
