//! Socket backend. Every pair of workers shares one TCP connection: rank `i`
//! dials every lower rank and accepts from every higher one. A reader thread
//! per connection demultiplexes frames into a local inbox keyed by
//! `(src, tag)`.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::Message;
use super::{ClusterLayout, Tag, Transport};
use crate::error::{Error, Result};

#[derive(Default)]
struct Inbox {
    state: Mutex<InboxState>,
    ready: Condvar,
}

#[derive(Default)]
struct InboxState {
    queues: HashMap<(usize, Tag), VecDeque<Vec<u8>>>,
    peer_gone: Vec<bool>,
    closed: bool,
}

pub struct TcpEndpoint {
    rank: usize,
    layout: ClusterLayout,
    writers: Vec<Option<Mutex<TcpStream>>>,
    inbox: Arc<Inbox>,
    closed: AtomicBool,
    readers: Mutex<Vec<JoinHandle<()>>>,
    bytes_sent: AtomicU64,
    messages_sent: AtomicU64,
}

impl TcpEndpoint {
    /// Binds `addrs[rank]` and connects to every peer.
    pub fn connect(rank: usize, addrs: &[SocketAddr], layout: ClusterLayout, timeout: Duration) -> Result<Self> {
        let listener = TcpListener::bind(addrs[rank])?;
        Self::with_listener(rank, listener, addrs, layout, timeout)
    }

    /// Like [`connect`](Self::connect) but with an already bound listener,
    /// which lets callers use ephemeral ports.
    pub fn with_listener(
        rank: usize,
        listener: TcpListener,
        addrs: &[SocketAddr],
        layout: ClusterLayout,
        timeout: Duration,
    ) -> Result<Self> {
        let n = layout.world_size();
        if addrs.len() != n {
            return Err(Error::InvalidLayout(format!(
                "{} addresses for {n} workers",
                addrs.len()
            )));
        }
        if rank >= n {
            return Err(Error::UnknownDestination(rank));
        }
        let deadline = Instant::now() + timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();

        for (peer, addr) in addrs.iter().enumerate().take(rank) {
            let mut s = dial(*addr, deadline)?;
            s.write_all(&(rank as u32).to_le_bytes())?;
            streams[peer] = Some(s);
        }

        listener.set_nonblocking(true)?;
        let mut pending = n - rank - 1;
        while pending > 0 {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    let mut hello = [0u8; 4];
                    s.read_exact(&mut hello)?;
                    let peer = u32::from_le_bytes(hello) as usize;
                    if peer <= rank || peer >= n || streams[peer].is_some() {
                        return Err(Error::MalformedPayload(format!(
                            "unexpected handshake from rank {peer}"
                        )));
                    }
                    streams[peer] = Some(s);
                    pending -= 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(Error::Io(std::io::Error::new(
                            std::io::ErrorKind::TimedOut,
                            "timed out waiting for peers",
                        )));
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let inbox = Arc::new(Inbox::default());
        inbox.state.lock().unwrap().peer_gone = vec![false; n];
        let mut writers = Vec::with_capacity(n);
        let mut readers = Vec::new();
        for (peer, s) in streams.into_iter().enumerate() {
            match s {
                None => writers.push(None),
                Some(s) => {
                    s.set_nodelay(true)?;
                    let reader = s.try_clone()?;
                    let inbox = Arc::clone(&inbox);
                    readers.push(thread::spawn(move || read_loop(reader, peer, rank, inbox)));
                    writers.push(Some(Mutex::new(s)));
                }
            }
        }

        Ok(Self {
            rank,
            layout,
            writers,
            inbox,
            closed: AtomicBool::new(false),
            readers: Mutex::new(readers),
            bytes_sent: AtomicU64::new(0),
            messages_sent: AtomicU64::new(0),
        })
    }
}

fn dial(addr: SocketAddr, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() > deadline => return Err(e.into()),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn read_loop(mut stream: TcpStream, peer: usize, rank: usize, inbox: Arc<Inbox>) {
    loop {
        match Message::read_from(&mut stream) {
            Ok(Some(m)) if m.src as usize == peer && m.dst as usize == rank => {
                let mut st = inbox.state.lock().unwrap();
                st.queues
                    .entry((peer, m.tag))
                    .or_default()
                    .push_back(m.payload);
                inbox.ready.notify_all();
            }
            Ok(Some(m)) => {
                log::warn!(
                    "rank {rank}: dropping misrouted frame {}->{} from connection to {peer}",
                    m.src,
                    m.dst
                );
                break;
            }
            Ok(None) | Err(_) => break,
        }
    }
    let mut st = inbox.state.lock().unwrap();
    st.peer_gone[peer] = true;
    inbox.ready.notify_all();
}

impl Transport for TcpEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn layout(&self) -> &ClusterLayout {
        &self.layout
    }

    fn send(&self, dst: usize, tag: Tag, payload: Vec<u8>) -> Result<()> {
        if dst >= self.writers.len() {
            return Err(Error::UnknownDestination(dst));
        }
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::Closed);
        }
        let len = payload.len() as u64;
        if dst == self.rank {
            let mut st = self.inbox.state.lock().unwrap();
            st.queues.entry((dst, tag)).or_default().push_back(payload);
            self.inbox.ready.notify_all();
        } else {
            let msg = Message {
                src: self.rank as u32,
                dst: dst as u32,
                tag,
                payload,
            };
            let writer = self.writers[dst].as_ref().ok_or(Error::UnknownDestination(dst))?;
            let mut w = writer.lock().unwrap();
            msg.write_to(&mut *w).map_err(|_| Error::Closed)?;
        }
        self.bytes_sent.fetch_add(len, Ordering::Relaxed);
        self.messages_sent.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn recv(&self, src: usize, tag: Tag) -> Result<Vec<u8>> {
        if src >= self.writers.len() {
            return Err(Error::UnknownDestination(src));
        }
        let mut st = self.inbox.state.lock().unwrap();
        loop {
            if st.closed {
                return Err(Error::Closed);
            }
            if let Some(p) = st.queues.get_mut(&(src, tag)).and_then(VecDeque::pop_front) {
                return Ok(p);
            }
            if st.peer_gone[src] {
                return Err(Error::Closed);
            }
            st = self.inbox.ready.wait(st).unwrap();
        }
    }

    fn bytes_sent(&self) -> u64 {
        self.bytes_sent.load(Ordering::Relaxed)
    }

    fn messages_sent(&self) -> u64 {
        self.messages_sent.load(Ordering::Relaxed)
    }

    fn close(&self) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        for w in self.writers.iter().flatten() {
            let _ = w.lock().unwrap().shutdown(Shutdown::Both);
        }
        {
            let mut st = self.inbox.state.lock().unwrap();
            st.closed = true;
            self.inbox.ready.notify_all();
        }
        for h in self.readers.lock().unwrap().drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}

/// Binds `n` ephemeral localhost listeners and connects a full mesh of
/// endpoints over them, one thread per rank.
pub fn localhost_mesh(layout: &ClusterLayout, timeout: Duration) -> Result<Vec<TcpEndpoint>> {
    let n = layout.world_size();
    let listeners = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<Vec<_>>>()?;
    let addrs = listeners
        .iter()
        .map(TcpListener::local_addr)
        .collect::<std::io::Result<Vec<_>>>()?;
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(rank, l)| {
            let addrs = addrs.clone();
            let layout = layout.clone();
            thread::spawn(move || TcpEndpoint::with_listener(rank, l, &addrs, layout, timeout))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().expect("connect thread panicked"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::virtual_elapsed;

    fn mesh(n: usize) -> Vec<TcpEndpoint> {
        localhost_mesh(&ClusterLayout::flat(n), Duration::from_secs(10)).unwrap()
    }

    #[test]
    fn send_recv_fifo() {
        let eps = mesh(3);
        eps[0].send(1, 7, vec![1, 2, 3]).unwrap();
        eps[0].send(1, 7, vec![4]).unwrap();
        eps[2].send(1, 7, vec![9]).unwrap();
        assert_eq!(eps[1].recv(0, 7).unwrap(), vec![1, 2, 3]);
        assert_eq!(eps[1].recv(0, 7).unwrap(), vec![4]);
        assert_eq!(eps[1].recv(2, 7).unwrap(), vec![9]);
        eps[1].send(1, 3, vec![5]).unwrap();
        assert_eq!(eps[1].recv(1, 3).unwrap(), vec![5]);
    }

    #[test]
    fn errors() {
        let eps = mesh(2);
        assert!(matches!(eps[0].send(99, 0, vec![]), Err(Error::UnknownDestination(99))));
        assert!(matches!(virtual_elapsed(&eps[0]), Err(Error::Unsupported(_))));
        eps[0].close();
        assert!(matches!(eps[0].send(1, 0, vec![]), Err(Error::Closed)));
        assert!(matches!(eps[1].recv(0, 0), Err(Error::Closed)));
    }
}
