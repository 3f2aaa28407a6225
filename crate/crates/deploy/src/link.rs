//! Host end of a connection to one policy runtime: a writer, a reader thread
//! feeding a channel, and a byte transcript of every frame exchanged.

use std::io::{self, Read, Write};
use std::process::Child;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};

use crate::runtime::RuntimeError;
use crate::transport::Conn;
use crate::wire::{self, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Frames in the order the host wrote or consumed them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<(Direction, Vec<u8>)>,
}

impl Transcript {
    pub fn push(&mut self, dir: Direction, frame: &[u8]) {
        self.entries.push((dir, frame.to_vec()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per frame: `> ` for sent, `< ` for received.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (dir, frame) in &self.entries {
            out.extend_from_slice(if *dir == Direction::Sent { b"> " } else { b"< " });
            out.extend_from_slice(frame);
            out.push(b'\n');
        }
        out
    }

    pub fn messages(&self, dir: Direction) -> impl Iterator<Item = Message> + '_ {
        self.entries
            .iter()
            .filter(move |(d, _)| *d == dir)
            .filter_map(|(_, f)| Message::decode(f).ok())
    }
}

/// What is running on the other end.
pub enum Peer {
    Child(Child),
    Thread {
        join: JoinHandle<Result<(), RuntimeError>>,
        /// Closing this unblocks the runtime thread.
        conn: Option<Conn>,
    },
}

impl Peer {
    pub fn has_exited(&mut self) -> bool {
        match self {
            Peer::Child(c) => matches!(c.try_wait(), Ok(Some(_)) | Err(_)),
            Peer::Thread { join, .. } => join.is_finished(),
        }
    }

    pub fn kill(&mut self) {
        match self {
            Peer::Child(c) => {
                let _ = c.kill();
                let _ = c.wait();
            }
            Peer::Thread { conn, .. } => {
                if let Some(c) = conn.take() {
                    let _ = c.shutdown();
                }
            }
        }
    }
}

pub enum Recv {
    Frame(Message),
    Timeout,
    Closed,
}

pub struct Link {
    writer: Box<dyn Write + Send>,
    inbox: Receiver<Vec<u8>>,
    peer: Peer,
    closed: bool,
    pub transcript: Transcript,
}

impl Link {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static, peer: Peer) -> Link {
        let (tx, rx) = crossbeam_channel::unbounded();
        let mut reader = reader;
        std::thread::spawn(move || {
            while let Ok(Some(frame)) = wire::read_frame(&mut reader) {
                if tx.send(frame).is_err() {
                    break;
                }
            }
        });
        Link {
            writer: Box::new(writer),
            inbox: rx,
            peer,
            closed: false,
            transcript: Transcript::default(),
        }
    }

    pub fn send(&mut self, msg: &Message) -> io::Result<()> {
        let frame = msg.encode();
        self.transcript.push(Direction::Sent, &frame);
        wire::write_frame(&mut self.writer, &frame)
    }

    /// Next decodable frame before `deadline`. Undecodable frames are
    /// recorded and skipped.
    pub fn recv_until(&mut self, deadline: Instant) -> Recv {
        loop {
            if self.closed {
                return Recv::Closed;
            }
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(wait) {
                Ok(frame) => {
                    self.transcript.push(Direction::Received, &frame);
                    if let Ok(msg) = Message::decode(&frame) {
                        return Recv::Frame(msg);
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Recv::Timeout,
                Err(RecvTimeoutError::Disconnected) => {
                    self.closed = true;
                    return Recv::Closed;
                }
            }
        }
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Recv {
        self.recv_until(Instant::now() + timeout)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Waits up to `grace` for the peer to exit on its own, then kills it.
    /// Returns whether it exited cleanly.
    pub fn close(mut self, grace: Duration) -> (bool, Transcript) {
        let deadline = Instant::now() + grace;
        let clean = loop {
            if self.peer.has_exited() {
                break true;
            }
            if Instant::now() >= deadline {
                self.peer.kill();
                break false;
            }
            std::thread::sleep(Duration::from_millis(2));
        };
        drop(self.writer);
        (clean, self.transcript)
    }

    pub fn kill(mut self) -> Transcript {
        self.peer.kill();
        self.transcript
    }
}
