//! In-process cluster: one thread per worker, messages routed through shared
//! mailboxes and timed on per-worker virtual clocks.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use super::{ClusterLayout, NetworkProfile, Tag, Transport, VirtualClock};
use crate::error::{Error, Result};

struct Envelope {
    arrival: f64,
    payload: Vec<u8>,
}

#[derive(Default)]
struct Mailbox {
    queues: Mutex<HashMap<(usize, Tag), VecDeque<Envelope>>>,
    ready: Condvar,
}

struct Router {
    layout: ClusterLayout,
    profile: NetworkProfile,
    mailboxes: Vec<Mailbox>,
    closed: Vec<AtomicBool>,
}

impl Router {
    fn wake_all(&self) {
        for mb in &self.mailboxes {
            // Take the lock so a waiter cannot miss the notification.
            let _guard = mb.queues.lock().unwrap();
            mb.ready.notify_all();
        }
    }
}

/// A simulated cluster of `n` endpoints sharing one router.
pub struct SimCluster {
    router: Arc<Router>,
    endpoints: Vec<Arc<SimEndpoint>>,
}

impl SimCluster {
    pub fn new(layout: ClusterLayout, profile: NetworkProfile) -> Result<Self> {
        profile.validate()?;
        let n = layout.world_size();
        let router = Arc::new(Router {
            mailboxes: (0..n).map(|_| Mailbox::default()).collect(),
            closed: (0..n).map(|_| AtomicBool::new(false)).collect(),
            profile: profile.clone(),
            layout,
        });
        let endpoints = (0..n)
            .map(|rank| {
                Arc::new(SimEndpoint {
                    rank,
                    clock: VirtualClock::new(profile.slowdown(rank)),
                    router: Arc::clone(&router),
                    bytes_sent: AtomicU64::new(0),
                    messages_sent: AtomicU64::new(0),
                })
            })
            .collect();
        Ok(Self { router, endpoints })
    }

    /// `n` workers on one node with uniform links.
    pub fn flat(n: usize, profile: NetworkProfile) -> Result<Self> {
        Self::new(ClusterLayout::flat(n), profile)
    }

    pub fn world_size(&self) -> usize {
        self.endpoints.len()
    }

    pub fn layout(&self) -> &ClusterLayout {
        &self.router.layout
    }

    pub fn endpoint(&self, rank: usize) -> Arc<SimEndpoint> {
        Arc::clone(&self.endpoints[rank])
    }

    pub fn endpoints(&self) -> &[Arc<SimEndpoint>] {
        &self.endpoints
    }

    /// Virtual makespan: the latest clock over all workers.
    pub fn virtual_elapsed(&self) -> f64 {
        self.endpoints
            .iter()
            .map(|e| e.clock.now())
            .fold(0.0, f64::max)
    }

    pub fn bytes_sent(&self) -> u64 {
        self.endpoints.iter().map(|e| e.bytes_sent()).sum()
    }

    pub fn close_all(&self) {
        for c in &self.router.closed {
            c.store(true, Ordering::SeqCst);
        }
        self.router.wake_all();
    }

    /// Runs `f` once per worker, each on its own thread, and collects the
    /// results in rank order. A worker that fails or panics closes its
    /// endpoint so peers blocked on it get [`Error::Closed`] instead of
    /// hanging; the first non-`Closed` error is returned.
    pub fn run<R, F>(&self, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(Arc<SimEndpoint>) -> Result<R> + Sync,
    {
        let results: Vec<Result<R>> = thread::scope(|scope| {
            let handles: Vec<_> = self
                .endpoints
                .iter()
                .map(|ep| {
                    let ep = Arc::clone(ep);
                    let f = &f;
                    scope.spawn(move || {
                        let guard = CloseOnFailure(Arc::clone(&ep), true);
                        let out = f(ep);
                        if out.is_ok() {
                            guard.disarm();
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r,
                    Err(panic) => std::panic::resume_unwind(panic),
                })
                .collect()
        });

        let mut first_closed = None;
        let mut values = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(v) => values.push(v),
                Err(Error::Closed) => {
                    first_closed.get_or_insert(Error::Closed);
                }
                Err(e) => return Err(e),
            }
        }
        match first_closed {
            Some(e) => Err(e),
            None => Ok(values),
        }
    }
}

struct CloseOnFailure(Arc<SimEndpoint>, bool);

impl CloseOnFailure {
    fn disarm(mut self) {
        self.1 = false;
    }
}

impl Drop for CloseOnFailure {
    fn drop(&mut self) {
        if self.1 {
            self.0.close();
        }
    }
}

pub struct SimEndpoint {
    rank: usize,
    clock: VirtualClock,
    router: Arc<Router>,
    bytes_sent: AtomicU64,
    messages_sent: AtomicU64,
}

impl SimEndpoint {
    pub fn virtual_clock(&self) -> &VirtualClock {
        &self.clock
    }

    fn is_closed(&self, rank: usize) -> bool {
        self.router.closed[rank].load(Ordering::SeqCst)
    }
}

impl Transport for SimEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn layout(&self) -> &ClusterLayout {
        &self.router.layout
    }

    fn send(&self, dst: usize, tag: Tag, payload: Vec<u8>) -> Result<()> {
        if dst >= self.router.mailboxes.len() {
            return Err(Error::UnknownDestination(dst));
        }
        if self.is_closed(self.rank) || self.is_closed(dst) {
            return Err(Error::Closed);
        }
        let arrival = if dst == self.rank {
            self.clock.now()
        } else {
            let class = self.router.layout.link(self.rank, dst);
            self.clock
                .schedule_send(class, self.router.profile.cost(class), payload.len())
        };
        self.bytes_sent
            .fetch_add(payload.len() as u64, Ordering::Relaxed);
        self.messages_sent.fetch_add(1, Ordering::Relaxed);

        let mb = &self.router.mailboxes[dst];
        let mut queues = mb.queues.lock().unwrap();
        queues
            .entry((self.rank, tag))
            .or_default()
            .push_back(Envelope { arrival, payload });
        mb.ready.notify_all();
        Ok(())
    }

    fn recv(&self, src: usize, tag: Tag) -> Result<Vec<u8>> {
        if src >= self.router.mailboxes.len() {
            return Err(Error::UnknownDestination(src));
        }
        let mb = &self.router.mailboxes[self.rank];
        let mut queues = mb.queues.lock().unwrap();
        loop {
            if self.is_closed(self.rank) {
                return Err(Error::Closed);
            }
            if let Some(env) = queues.get_mut(&(src, tag)).and_then(VecDeque::pop_front) {
                drop(queues);
                self.clock.advance_to(env.arrival);
                return Ok(env.payload);
            }
            if self.is_closed(src) {
                return Err(Error::Closed);
            }
            queues = mb.ready.wait(queues).unwrap();
        }
    }

    fn clock(&self) -> Option<&VirtualClock> {
        Some(&self.clock)
    }

    fn bytes_sent(&self) -> u64 {
        self.bytes_sent.load(Ordering::Relaxed)
    }

    fn messages_sent(&self) -> u64 {
        self.messages_sent.load(Ordering::Relaxed)
    }

    fn close(&self) {
        self.router.closed[self.rank].store(true, Ordering::SeqCst);
        self.router.wake_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{virtual_elapsed, LinkCost};

    fn cluster(n: usize) -> SimCluster {
        SimCluster::flat(n, NetworkProfile::uniform(0.0, 1e9)).unwrap()
    }

    #[test]
    fn delivers_payload() {
        let c = cluster(2);
        c.endpoint(0).send(1, 7, vec![1, 2, 3]).unwrap();
        assert_eq!(c.endpoint(1).recv(0, 7).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn fifo_per_stream() {
        let c = cluster(2);
        let ep = c.endpoint(0);
        ep.send(1, 7, vec![1]).unwrap();
        ep.send(1, 8, vec![3]).unwrap();
        ep.send(1, 7, vec![2]).unwrap();
        let rx = c.endpoint(1);
        assert_eq!(rx.recv(0, 7).unwrap(), vec![1]);
        assert_eq!(rx.recv(0, 7).unwrap(), vec![2]);
        assert_eq!(rx.recv(0, 8).unwrap(), vec![3]);
    }

    #[test]
    fn unknown_destination() {
        let c = cluster(2);
        assert!(matches!(
            c.endpoint(0).send(99, 0, vec![]),
            Err(Error::UnknownDestination(99))
        ));
        assert!(matches!(
            c.endpoint(0).recv(99, 0),
            Err(Error::UnknownDestination(99))
        ));
    }

    #[test]
    fn closing_unblocks_receiver() {
        let c = cluster(2);
        let rx = c.endpoint(1);
        let waiter = thread::spawn(move || rx.recv(0, 1));
        thread::sleep(std::time::Duration::from_millis(20));
        c.endpoint(0).close();
        assert!(matches!(waiter.join().unwrap(), Err(Error::Closed)));
        assert!(matches!(c.endpoint(0).send(1, 0, vec![]), Err(Error::Closed)));
    }

    #[test]
    fn pending_messages_survive_sender_close() {
        let c = cluster(2);
        c.endpoint(0).send(1, 0, vec![5]).unwrap();
        c.endpoint(0).close();
        assert_eq!(c.endpoint(1).recv(0, 0).unwrap(), vec![5]);
        assert!(matches!(c.endpoint(1).recv(0, 0), Err(Error::Closed)));
    }

    #[test]
    fn single_inter_node_message_cost() {
        let profile = NetworkProfile {
            intra_node: LinkCost {
                latency: 0.0,
                bandwidth: 1e12,
            },
            inter_node: LinkCost {
                latency: 1e-3,
                bandwidth: 1e9,
            },
            straggler: None,
        };
        let c = SimCluster::new(ClusterLayout::contiguous(2, 2).unwrap(), profile).unwrap();
        c.endpoint(0).send(1, 0, vec![0; 1_000_000]).unwrap();
        c.endpoint(1).recv(0, 0).unwrap();
        assert!((c.virtual_elapsed() - 0.002).abs() < 1e-12);
        assert!(virtual_elapsed(c.endpoint(1).as_ref()).unwrap() > 0.0);
    }

    #[test]
    fn compute_span_and_straggler() {
        let c = cluster(1);
        c.endpoint(0).virtual_clock().compute(0.5);
        assert_eq!(c.virtual_elapsed(), 0.5);

        let slow = SimCluster::flat(1, NetworkProfile::uniform(0.0, 1e9).with_straggler(0, 2.0))
            .unwrap();
        slow.endpoint(0).virtual_clock().compute(0.5);
        assert_eq!(slow.virtual_elapsed(), 1.0);
    }

    #[test]
    fn run_propagates_root_cause() {
        let c = cluster(3);
        let err = c
            .run(|ep| {
                if ep.rank() == 2 {
                    return Err(Error::InvalidSize("boom".into()));
                }
                ep.recv(2, 0)
            })
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSize(_)));
    }
}
