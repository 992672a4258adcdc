//! Named localities exchanging step-tagged messages.
//!
//! A [`Locality`] is one participant of a distributed run. Messages travel on
//! directed [`Channel`]s keyed by `(sender, receiver, tag)` and carry the
//! time step they belong to. Two transports share one mailbox
//! implementation: an in-process cluster (every locality is a thread of the
//! same process) and TCP, where every pair of localities is joined by one
//! socket.
//!
//! TCP frames are little-endian: `u32` tag, `u64` step, `u32` payload byte
//! length, then the raw IEEE-754 payload.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{self, Read, Write};
use std::marker::PhantomData;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::tasking::{promise, Future};

pub type Tag = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("locality {peer} disconnected")]
    Disconnected { peer: usize },
    #[error("protocol violation on tag {tag} from {peer}: expected step {expected}, got {got}")]
    StepMismatch {
        peer: usize,
        tag: Tag,
        expected: u64,
        got: u64,
    },
    #[error("no link to locality {peer}")]
    InvalidPeer { peer: usize },
    #[error("malformed payload: {0}")]
    Decode(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bad locality configuration: {0}")]
    Config(String),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Rank of a locality among `count` participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalityId {
    rank: usize,
    count: usize,
}

impl LocalityId {
    pub fn new(rank: usize, count: usize) -> Result<Self, TransportError> {
        if count == 0 || rank >= count {
            return Err(TransportError::Config(format!("rank {rank} outside 0..{count}")));
        }
        Ok(Self { rank, count })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

impl fmt::Display for LocalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.rank, self.count)
    }
}

/// Parses `rank/count`.
impl FromStr for LocalityId {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TransportError::Config(format!("expected <rank>/<count>, got `{s}`"));
        let (r, c) = s.split_once('/').ok_or_else(bad)?;
        let rank = r.trim().parse().map_err(|_| bad())?;
        let count = c.trim().parse().map_err(|_| bad())?;
        LocalityId::new(rank, count)
    }
}

/// Parses a comma separated `host:port` list.
pub fn parse_peers(s: &str) -> Result<Vec<SocketAddr>, TransportError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .to_socket_addrs()
                .map_err(|e| TransportError::Config(format!("peer `{p}`: {e}")))?
                .next()
                .ok_or_else(|| TransportError::Config(format!("peer `{p}` did not resolve")))
        })
        .collect()
}

/// Values that can travel in a frame payload.
pub trait Wire: Sized + Send + 'static {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(bytes: &[u8]) -> Result<Self, TransportError>;
}

impl Wire for f64 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self, TransportError> {
        let raw: [u8; 8] = bytes
            .try_into()
            .map_err(|_| TransportError::Decode(format!("f64 needs 8 bytes, got {}", bytes.len())))?;
        Ok(f64::from_le_bytes(raw))
    }
}

impl Wire for f32 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self, TransportError> {
        let raw: [u8; 4] = bytes
            .try_into()
            .map_err(|_| TransportError::Decode(format!("f32 needs 4 bytes, got {}", bytes.len())))?;
        Ok(f32::from_le_bytes(raw))
    }
}

impl Wire for Vec<f64> {
    fn encode(&self, out: &mut Vec<u8>) {
        for v in self {
            v.encode(out);
        }
    }

    fn decode(bytes: &[u8]) -> Result<Self, TransportError> {
        if bytes.len() % 8 != 0 {
            return Err(TransportError::Decode(format!(
                "{} bytes is not a whole number of f64",
                bytes.len()
            )));
        }
        bytes.chunks_exact(8).map(f64::decode).collect()
    }
}

/// Header plus payload of one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub step: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub const HEADER_LEN: usize = 16;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(reader: &mut R) -> io::Result<Option<Frame>> {
        let mut header = [0u8; Self::HEADER_LEN];
        let mut filled = 0;
        while filled < header.len() {
            match reader.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        let tag = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let step = u64::from_le_bytes(header[4..12].try_into().unwrap());
        let len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; len];
        reader.read_exact(&mut payload)?;
        Ok(Some(Frame { tag, step, payload }))
    }
}

type Waiter = Box<dyn FnOnce(Result<Frame, TransportError>) + Send>;

#[derive(Default)]
struct Slot {
    queue: VecDeque<Frame>,
    waiting: VecDeque<Waiter>,
}

#[derive(Default)]
struct MailboxState {
    slots: HashMap<(usize, Tag), Slot>,
    closed: HashSet<usize>,
}

/// Incoming messages of one locality, keyed by `(sender, tag)`.
#[derive(Default)]
struct Mailbox {
    state: Mutex<MailboxState>,
}

impl Mailbox {
    fn deliver(&self, from: usize, frame: Frame) {
        let waiter = {
            let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
            let slot = state.slots.entry((from, frame.tag)).or_default();
            match slot.waiting.pop_front() {
                Some(w) => w,
                None => {
                    slot.queue.push_back(frame);
                    return;
                }
            }
        };
        waiter(Ok(frame));
    }

    fn register(&self, from: usize, tag: Tag, waiter: Waiter) {
        let ready = {
            let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
            let closed = state.closed.contains(&from);
            let slot = state.slots.entry((from, tag)).or_default();
            match slot.queue.pop_front() {
                Some(frame) => Ok(frame),
                None if closed => Err(TransportError::Disconnected { peer: from }),
                None => {
                    slot.waiting.push_back(waiter);
                    return;
                }
            }
        };
        waiter(ready);
    }

    fn close_peer(&self, peer: usize) {
        let waiters: Vec<Waiter> = {
            let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
            state.closed.insert(peer);
            state
                .slots
                .iter_mut()
                .filter(|((from, _), _)| *from == peer)
                .flat_map(|(_, slot)| slot.waiting.drain(..))
                .collect()
        };
        for w in waiters {
            w(Err(TransportError::Disconnected { peer }));
        }
    }
}

enum Link {
    InProc(Weak<Mailbox>),
    Tcp(Mutex<TcpStream>),
}

struct Inner {
    id: LocalityId,
    mailbox: Arc<Mailbox>,
    links: Vec<Option<Link>>,
}

impl Inner {
    fn link(&self, peer: usize) -> Result<&Link, TransportError> {
        self.links
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or(TransportError::InvalidPeer { peer })
    }

    fn send_frame(&self, peer: usize, frame: Frame) -> Result<(), TransportError> {
        match self.link(peer)? {
            Link::InProc(mailbox) => {
                let mailbox = mailbox.upgrade().ok_or(TransportError::Disconnected { peer })?;
                mailbox.deliver(self.id.rank, frame);
                Ok(())
            }
            Link::Tcp(stream) => {
                let mut stream = stream.lock().unwrap_or_else(|e| e.into_inner());
                stream
                    .write_all(&frame.encode())
                    .map_err(|_| TransportError::Disconnected { peer })
            }
        }
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        for link in self.links.iter().flatten() {
            match link {
                Link::InProc(mailbox) => {
                    if let Some(m) = mailbox.upgrade() {
                        m.close_peer(self.id.rank);
                    }
                }
                Link::Tcp(stream) => {
                    let stream = stream.lock().unwrap_or_else(|e| e.into_inner());
                    let _ = stream.shutdown(Shutdown::Both);
                }
            }
        }
    }
}

/// One participant of a distributed run. Cheap to clone; the links close
/// when the last clone (and every channel made from it) is dropped.
#[derive(Clone)]
pub struct Locality {
    inner: Arc<Inner>,
}

impl fmt::Debug for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Locality").field("id", &self.inner.id).finish()
    }
}

impl Locality {
    pub fn id(&self) -> LocalityId {
        self.inner.id
    }

    pub fn rank(&self) -> usize {
        self.inner.id.rank
    }

    pub fn count(&self) -> usize {
        self.inner.id.count
    }

    /// Directed channel to/from `peer` on `tag`.
    pub fn channel<T: Wire>(&self, peer: usize, tag: Tag) -> Result<Channel<T>, TransportError> {
        self.inner.link(peer)?;
        Ok(Channel {
            inner: Arc::clone(&self.inner),
            peer,
            tag,
            _payload: PhantomData,
        })
    }

    pub fn send<T: Wire>(&self, peer: usize, tag: Tag, step: u64, value: &T) -> Result<(), TransportError> {
        let mut payload = Vec::new();
        value.encode(&mut payload);
        self.inner.send_frame(peer, Frame { tag, step, payload })
    }

    /// Future for the next message from `peer` on `tag`, which must belong
    /// to `step`. May be issued before the matching send.
    pub fn recv<T: Wire + Clone>(&self, peer: usize, tag: Tag, step: u64) -> Future<Result<T, TransportError>> {
        let (p, f) = promise();
        if let Err(e) = self.inner.link(peer) {
            p.set(Err(e));
            return f;
        }
        self.inner.mailbox.register(
            peer,
            tag,
            Box::new(move |frame: Result<Frame, TransportError>| {
                p.set(frame.and_then(|frame| {
                    if frame.step != step {
                        return Err(TransportError::StepMismatch {
                            peer,
                            tag,
                            expected: step,
                            got: frame.step,
                        });
                    }
                    T::decode(&frame.payload)
                }));
            }),
        );
        f
    }
}

/// Typed view of one `(peer, tag)` key of a locality.
pub struct Channel<T> {
    inner: Arc<Inner>,
    peer: usize,
    tag: Tag,
    _payload: PhantomData<fn() -> T>,
}

impl<T: Wire + Clone> Channel<T> {
    pub fn peer(&self) -> usize {
        self.peer
    }

    pub fn send(&self, step: u64, value: &T) -> Result<(), TransportError> {
        Locality {
            inner: Arc::clone(&self.inner),
        }
        .send(self.peer, self.tag, step, value)
    }

    pub fn recv(&self, step: u64) -> Future<Result<T, TransportError>> {
        Locality {
            inner: Arc::clone(&self.inner),
        }
        .recv(self.peer, self.tag, step)
    }
}

/// `count` localities wired together in this process.
pub fn in_process_cluster(count: usize) -> Result<Vec<Locality>, TransportError> {
    if count == 0 {
        return Err(TransportError::Config("need at least one locality".into()));
    }
    let mailboxes: Vec<Arc<Mailbox>> = (0..count).map(|_| Arc::new(Mailbox::default())).collect();
    (0..count)
        .map(|rank| {
            let links = (0..count)
                .map(|peer| (peer != rank).then(|| Link::InProc(Arc::downgrade(&mailboxes[peer]))))
                .collect();
            Ok(Locality {
                inner: Arc::new(Inner {
                    id: LocalityId::new(rank, count)?,
                    mailbox: Arc::clone(&mailboxes[rank]),
                    links,
                }),
            })
        })
        .collect()
}

const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

/// Joins a TCP cluster: binds `peers[rank]`, connects to every lower rank
/// and accepts every higher one.
pub fn connect_tcp(id: LocalityId, peers: &[SocketAddr]) -> Result<Locality, TransportError> {
    if peers.len() != id.count {
        return Err(TransportError::Config(format!(
            "{} peers listed for {} localities",
            peers.len(),
            id.count
        )));
    }
    let listener = TcpListener::bind(peers[id.rank])?;
    connect_tcp_with_listener(id, listener, peers)
}

/// Like [`connect_tcp`] with an already bound listener for this rank.
pub fn connect_tcp_with_listener(
    id: LocalityId,
    listener: TcpListener,
    peers: &[SocketAddr],
) -> Result<Locality, TransportError> {
    let mut streams: Vec<Option<TcpStream>> = (0..id.count).map(|_| None).collect();
    for (peer, addr) in peers.iter().enumerate().take(id.rank) {
        let deadline = Instant::now() + CONNECT_TIMEOUT;
        let mut stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                // listener may not be bound yet
                Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(20)),
                Err(e) => return Err(e.into()),
            }
        };
        stream.write_all(&(id.rank as u32).to_le_bytes())?;
        streams[peer] = Some(stream);
    }
    for _ in id.rank + 1..id.count {
        let (mut stream, _) = listener.accept()?;
        let mut raw = [0u8; 4];
        stream.read_exact(&mut raw)?;
        let peer = u32::from_le_bytes(raw) as usize;
        if peer <= id.rank || peer >= id.count || streams[peer].is_some() {
            return Err(TransportError::Config(format!("unexpected handshake from rank {peer}")));
        }
        streams[peer] = Some(stream);
    }

    let mailbox = Arc::new(Mailbox::default());
    let mut links = Vec::with_capacity(id.count);
    for (peer, stream) in streams.into_iter().enumerate() {
        let Some(stream) = stream else {
            links.push(None);
            continue;
        };
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let sink = Arc::clone(&mailbox);
        thread::Builder::new()
            .name(format!("locality-{}-rx-{peer}", id.rank))
            .spawn(move || {
                while let Ok(Some(frame)) = Frame::read_from(&mut reader) {
                    sink.deliver(peer, frame);
                }
                sink.close_peer(peer);
            })?;
        links.push(Some(Link::Tcp(Mutex::new(stream))));
    }
    Ok(Locality {
        inner: Arc::new(Inner { id, mailbox, links }),
    })
}

/// `count` TCP localities on loopback ports, all driven from this process.
pub fn tcp_loopback_cluster(count: usize) -> Result<Vec<Locality>, TransportError> {
    if count == 0 {
        return Err(TransportError::Config("need at least one locality".into()));
    }
    let listeners = (0..count)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<io::Result<Vec<_>>>()?;
    let peers = listeners
        .iter()
        .map(TcpListener::local_addr)
        .collect::<io::Result<Vec<_>>>()?;
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(rank, listener)| {
            let peers = peers.clone();
            thread::spawn(move || connect_tcp_with_listener(LocalityId::new(rank, count)?, listener, &peers))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| {
            h.join()
                .map_err(|_| TransportError::Config("connect thread panicked".into()))?
        })
        .collect()
}
