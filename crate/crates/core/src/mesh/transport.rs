//! Point-to-point message delivery between simulated devices.
//!
//! Every directed pair `(i, j)` gets its own ordered channel, so a device can
//! block on a specific peer without seeing anyone else's traffic. Sends never
//! block on the receiver: the socket transport drains each incoming stream
//! on a dedicated reader thread.

use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer {0} hung up")]
    Disconnected(usize),
    #[error("no channel between device {from} and device {to}")]
    NoRoute { from: usize, to: usize },
    #[error("frame of {0} bytes exceeds the 4-byte length prefix")]
    FrameTooLarge(usize),
    #[error("socket setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Inproc,
    Socket,
}

/// One device's view of the network.
pub trait Endpoint: Send {
    fn id(&self) -> usize;
    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError>;
    /// Next frame from `from`, in send order.
    fn recv_from(&mut self, from: usize) -> Result<Vec<u8>, TransportError>;
}

/// Builds a fully connected set of endpoints.
pub trait Transport {
    fn connect(&self, devices: usize) -> Result<Vec<Box<dyn Endpoint>>, TransportError>;
}

/// Per-pair `mpsc` channels inside one process.
#[derive(Debug, Clone, Copy, Default)]
pub struct InProcTransport;

struct InProcEndpoint {
    id: usize,
    out: Vec<Option<Sender<Vec<u8>>>>,
    inbox: Vec<Option<Receiver<Vec<u8>>>>,
}

impl Transport for InProcTransport {
    fn connect(&self, devices: usize) -> Result<Vec<Box<dyn Endpoint>>, TransportError> {
        let mut out: Vec<Vec<Option<Sender<Vec<u8>>>>> = (0..devices).map(|_| vec![None; devices]).collect();
        let mut inbox: Vec<Vec<Option<Receiver<Vec<u8>>>>> =
            (0..devices).map(|_| (0..devices).map(|_| None).collect()).collect();
        for from in 0..devices {
            for to in 0..devices {
                if from != to {
                    let (tx, rx) = mpsc::channel();
                    out[from][to] = Some(tx);
                    inbox[to][from] = Some(rx);
                }
            }
        }
        Ok(out
            .into_iter()
            .zip(inbox)
            .enumerate()
            .map(|(id, (out, inbox))| Box::new(InProcEndpoint { id, out, inbox }) as Box<dyn Endpoint>)
            .collect())
    }
}

impl Endpoint for InProcEndpoint {
    fn id(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        let tx = self
            .out
            .get(to)
            .and_then(Option::as_ref)
            .ok_or(TransportError::NoRoute { from: self.id, to })?;
        tx.send(frame.to_vec()).map_err(|_| TransportError::Disconnected(to))
    }

    fn recv_from(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        let rx = self
            .inbox
            .get(from)
            .and_then(Option::as_ref)
            .ok_or(TransportError::NoRoute { from, to: self.id })?;
        rx.recv().map_err(|_| TransportError::Disconnected(from))
    }
}

/// Loopback TCP, one stream per directed pair. Frames are a 4-byte
/// big-endian length followed by the message bytes.
#[derive(Debug, Clone, Copy)]
pub struct SocketTransport {
    /// Device `i` listens on `base_port + i`; 0 picks ephemeral ports.
    pub base_port: u16,
}

struct SocketEndpoint {
    id: usize,
    out: Vec<Option<TcpStream>>,
    inbox: Vec<Option<Receiver<Vec<u8>>>>,
}

fn read_frame(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

fn spawn_reader(mut stream: TcpStream, tx: Sender<Vec<u8>>) {
    thread::spawn(move || {
        // Ends on EOF, on a socket error, or once the endpoint is dropped.
        while let Ok(frame) = read_frame(&mut stream) {
            if tx.send(frame).is_err() {
                break;
            }
        }
    });
}

impl Transport for SocketTransport {
    fn connect(&self, devices: usize) -> Result<Vec<Box<dyn Endpoint>>, TransportError> {
        let mut listeners = Vec::with_capacity(devices);
        let mut addrs = Vec::with_capacity(devices);
        for i in 0..devices {
            let port = if self.base_port == 0 {
                0
            } else {
                self.base_port
                    .checked_add(i as u16)
                    .ok_or_else(|| TransportError::Setup("port range overflows 65535".into()))?
            };
            let l = TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, port)))
                .map_err(|e| TransportError::Setup(format!("bind port {port}: {e}")))?;
            addrs.push(l.local_addr()?);
            listeners.push(l);
        }
        let mut out: Vec<Vec<Option<TcpStream>>> = (0..devices).map(|_| (0..devices).map(|_| None).collect()).collect();
        for from in 0..devices {
            for to in 0..devices {
                if from != to {
                    let mut s = TcpStream::connect(addrs[to])?;
                    s.set_nodelay(true)?;
                    s.write_all(&(from as u32).to_be_bytes())?;
                    out[from][to] = Some(s);
                }
            }
        }
        let mut inbox: Vec<Vec<Option<Receiver<Vec<u8>>>>> =
            (0..devices).map(|_| (0..devices).map(|_| None).collect()).collect();
        for (to, listener) in listeners.iter().enumerate() {
            for _ in 1..devices {
                let (mut s, _) = listener.accept()?;
                let mut hello = [0u8; 4];
                s.read_exact(&mut hello)?;
                let from = u32::from_be_bytes(hello) as usize;
                if from >= devices || from == to || inbox[to][from].is_some() {
                    return Err(TransportError::Setup(format!(
                        "unexpected hello from {from} at device {to}"
                    )));
                }
                let (tx, rx) = mpsc::channel();
                spawn_reader(s, tx);
                inbox[to][from] = Some(rx);
            }
        }
        Ok(out
            .into_iter()
            .zip(inbox)
            .enumerate()
            .map(|(id, (out, inbox))| Box::new(SocketEndpoint { id, out, inbox }) as Box<dyn Endpoint>)
            .collect())
    }
}

impl Endpoint for SocketEndpoint {
    fn id(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        let len = u32::try_from(frame.len()).map_err(|_| TransportError::FrameTooLarge(frame.len()))?;
        let s = self
            .out
            .get_mut(to)
            .and_then(Option::as_mut)
            .ok_or(TransportError::NoRoute { from: self.id, to })?;
        s.write_all(&len.to_be_bytes())?;
        s.write_all(frame)?;
        Ok(())
    }

    fn recv_from(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        let rx = self
            .inbox
            .get(from)
            .and_then(Option::as_ref)
            .ok_or(TransportError::NoRoute { from, to: self.id })?;
        rx.recv().map_err(|_| TransportError::Disconnected(from))
    }
}

impl Drop for SocketEndpoint {
    fn drop(&mut self) {
        for s in self.out.iter().flatten() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(t: &dyn Transport) {
        let mut eps = t.connect(3).unwrap();
        for (i, ep) in eps.iter_mut().enumerate() {
            for j in 0..3 {
                if j != i {
                    ep.send(j, &[i as u8, j as u8, 1]).unwrap();
                    ep.send(j, &[i as u8, j as u8, 2]).unwrap();
                }
            }
        }
        for (j, ep) in eps.iter_mut().enumerate() {
            for i in 0..3 {
                if i != j {
                    assert_eq!(ep.recv_from(i).unwrap(), vec![i as u8, j as u8, 1]);
                    assert_eq!(ep.recv_from(i).unwrap(), vec![i as u8, j as u8, 2]);
                }
            }
        }
        assert!(matches!(eps[0].send(0, &[1]), Err(TransportError::NoRoute { .. })));
    }

    #[test]
    fn inproc_ordered_per_channel() {
        exchange(&InProcTransport);
    }

    #[test]
    fn socket_ordered_per_channel() {
        exchange(&SocketTransport { base_port: 0 });
    }

    #[test]
    fn hangup_is_reported() {
        for t in [&InProcTransport as &dyn Transport, &SocketTransport { base_port: 0 }] {
            let mut eps = t.connect(2).unwrap();
            let gone = eps.remove(0);
            drop(gone);
            assert!(matches!(eps[0].recv_from(0), Err(TransportError::Disconnected(0))));
        }
    }

    #[test]
    fn empty_and_large_frames() {
        let mut eps = SocketTransport { base_port: 0 }.connect(2).unwrap();
        let big = vec![7u8; 1 << 20];
        eps[0].send(1, &[]).unwrap();
        eps[0].send(1, &big).unwrap();
        assert_eq!(eps[1].recv_from(0).unwrap(), Vec::<u8>::new());
        assert_eq!(eps[1].recv_from(0).unwrap(), big);
    }
}
