//! Framed TCP bridge to a [`Broker`].
//!
//! Every frame a client sends is published to its topic, except frames on
//! the reserved control topic `$sub`, whose payload is one byte (0 =
//! earliest, 1 = latest) followed by the UTF-8 topic to subscribe to.
//! Subscribed messages come back as ordinary frames carrying the broker's
//! publish timestamp; evictions come back on `$gap` with payload
//! `first_seq: u64 | last_seq: u64 | topic`. A malformed frame closes the
//! connection.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use milltwin_core::frame::{Frame, FrameDecoder, FrameError};
use thiserror::Error;

use crate::broker::{Broker, Delivery, Recv, StartFrom};
use crate::clock::monotonic_ns;

pub const SUBSCRIBE_TOPIC: &str = "$sub";
pub const GAP_TOPIC: &str = "$gap";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(#[from] FrameError),
    #[error("malformed control frame")]
    BadControl,
    #[error("connection closed")]
    Closed,
}

/// Running listener; dropped or [`stop`](Self::stop)ped to shut down.
pub struct TcpBridge {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl TcpBridge {
    pub fn bind(broker: Broker, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let accept = std::thread::Builder::new()
            .name("tcp-accept".into())
            .spawn(move || accept_loop(listener, broker, flag))?;
        Ok(Self {
            local_addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpBridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, broker: Broker, stop: Arc<AtomicBool>) {
    let mut connections = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                let broker = broker.clone();
                let stop = Arc::clone(&stop);
                if let Ok(h) = std::thread::Builder::new()
                    .name("tcp-conn".into())
                    .spawn(move || serve_connection(stream, broker, stop))
                {
                    connections.push(h);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => std::thread::sleep(Duration::from_millis(5)),
        }
    }
    for h in connections {
        let _ = h.join();
    }
}

fn serve_connection(stream: TcpStream, broker: Broker, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let Ok(writer) = stream.try_clone() else {
        return;
    };
    let writer = Arc::new(Mutex::new(writer));
    let alive = Arc::new(AtomicBool::new(true));
    let mut forwarders = Vec::new();
    let mut decoder = FrameDecoder::new();
    let mut reader = stream;
    let mut buf = vec![0u8; 64 * 1024];

    'conn: while !stop.load(Ordering::Acquire) {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => decoder.feed(&buf[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(_) => break,
        }
        loop {
            match decoder.next_frame() {
                Ok(Some(frame)) if frame.topic == SUBSCRIBE_TOPIC => {
                    let Some((from, topic)) = parse_subscribe(&frame.payload) else {
                        break 'conn;
                    };
                    let Ok(sub) = broker.subscribe(&topic, from) else {
                        break 'conn;
                    };
                    let writer = Arc::clone(&writer);
                    let alive = Arc::clone(&alive);
                    let stop = Arc::clone(&stop);
                    if let Ok(h) = std::thread::Builder::new()
                        .name("tcp-forward".into())
                        .spawn(move || forward(sub, writer, alive, stop))
                    {
                        forwarders.push(h);
                    }
                }
                Ok(Some(frame)) => {
                    if broker.publish(&frame.topic, frame.payload).is_err() {
                        break 'conn;
                    }
                }
                Ok(None) => break,
                Err(_) => break 'conn,
            }
        }
    }
    alive.store(false, Ordering::Release);
    if let Ok(w) = writer.lock() {
        let _ = w.shutdown(Shutdown::Both);
    }
    for h in forwarders {
        let _ = h.join();
    }
}

fn parse_subscribe(payload: &[u8]) -> Option<(StartFrom, String)> {
    let (&mode, topic) = payload.split_first()?;
    let from = match mode {
        0 => StartFrom::Earliest,
        1 => StartFrom::Latest,
        _ => return None,
    };
    let topic = std::str::from_utf8(topic).ok()?;
    (!topic.is_empty()).then(|| (from, topic.to_owned()))
}

fn forward(
    mut sub: crate::broker::Subscription,
    writer: Arc<Mutex<TcpStream>>,
    alive: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
) {
    let topic = sub.topic().to_owned();
    let mut out = Vec::new();
    while alive.load(Ordering::Acquire) && !stop.load(Ordering::Acquire) {
        let frame = match sub.recv_timeout(Duration::from_millis(50)) {
            Recv::Delivery(Delivery::Message(m)) => Frame::new(topic.clone(), m.publish_timestamp_ns, m.payload.to_vec()),
            Recv::Delivery(Delivery::Gap { first_seq, last_seq }) => {
                let mut payload = Vec::with_capacity(16 + topic.len());
                payload.extend_from_slice(&first_seq.to_le_bytes());
                payload.extend_from_slice(&last_seq.to_le_bytes());
                payload.extend_from_slice(topic.as_bytes());
                Frame::new(GAP_TOPIC, monotonic_ns(), payload)
            }
            Recv::Empty => continue,
            Recv::Closed => break,
        };
        let Ok(frame) = frame else { break };
        out.clear();
        frame.encode_into(&mut out);
        let Ok(mut w) = writer.lock() else { break };
        if w.write_all(&out).is_err() {
            break;
        }
    }
}

/// What a client receives for one of its subscriptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteDelivery {
    Message {
        topic: String,
        publish_timestamp_ns: u64,
        payload: Vec<u8>,
    },
    Gap {
        topic: String,
        first_seq: u64,
        last_seq: u64,
    },
}

/// Blocking client for a [`TcpBridge`].
pub struct TcpClient {
    stream: TcpStream,
    decoder: FrameDecoder,
    buf: Vec<u8>,
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            decoder: FrameDecoder::new(),
            buf: vec![0; 64 * 1024],
        })
    }

    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), TransportError> {
        let frame = Frame::new(topic, monotonic_ns(), payload.to_vec())?;
        self.stream.write_all(&frame.encode())?;
        Ok(())
    }

    /// Raw bytes, for exercising the server's protocol checks.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    pub fn subscribe(&mut self, topic: &str, from: StartFrom) -> Result<(), TransportError> {
        let mut payload = vec![match from {
            StartFrom::Earliest => 0,
            StartFrom::Latest => 1,
        }];
        payload.extend_from_slice(topic.as_bytes());
        self.publish(SUBSCRIBE_TOPIC, &payload)
    }

    /// Next delivery, waiting at most `timeout`; `Ok(None)` on timeout.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<RemoteDelivery>, TransportError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                return to_delivery(frame).map(Some);
            }
            match self.stream.read(&mut self.buf) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.decoder.feed(&self.buf[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }
}

fn to_delivery(frame: Frame) -> Result<RemoteDelivery, TransportError> {
    if frame.topic != GAP_TOPIC {
        return Ok(RemoteDelivery::Message {
            topic: frame.topic,
            publish_timestamp_ns: frame.publish_timestamp_ns,
            payload: frame.payload,
        });
    }
    let p = &frame.payload;
    if p.len() < 17 {
        return Err(TransportError::BadControl);
    }
    let first_seq = u64::from_le_bytes(p[..8].try_into().expect("8 bytes"));
    let last_seq = u64::from_le_bytes(p[8..16].try_into().expect("8 bytes"));
    let topic = String::from_utf8(p[16..].to_vec()).map_err(|_| TransportError::BadControl)?;
    Ok(RemoteDelivery::Gap {
        topic,
        first_seq,
        last_seq,
    })
}
