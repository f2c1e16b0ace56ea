//! Byte links between host drivers and controllers.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::thread;

/// One end of a full-duplex byte stream.
pub trait Link: Send {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()>;

    /// Whatever has arrived since the last call; never blocks. A closed peer
    /// is `BrokenPipe`.
    fn recv_available(&mut self) -> io::Result<Vec<u8>>;
}

/// In-process duplex pipe end.
#[derive(Debug)]
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (PipeEnd { tx: a_tx, rx: a_rx }, PipeEnd { tx: b_tx, rx: b_rx })
}

impl Link for PipeEnd {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.tx.send(bytes.to_vec()).map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))
    }

    fn recv_available(&mut self) -> io::Result<Vec<u8>> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(chunk) => out.extend(chunk),
                Err(TryRecvError::Empty) => return Ok(out),
                Err(TryRecvError::Disconnected) if out.is_empty() => {
                    return Err(io::ErrorKind::BrokenPipe.into());
                }
                Err(TryRecvError::Disconnected) => return Ok(out),
            }
        }
    }
}

/// A serial device opened as a file. Line settings (baud, 8N1, raw mode) are
/// not touched; configure them beforehand, e.g. with `stty`.
#[derive(Debug)]
pub struct DeviceLink {
    writer: File,
    rx: Receiver<io::Result<Vec<u8>>>,
}

impl DeviceLink {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let writer = OpenOptions::new().read(true).write(true).open(path)?;
        let mut reader = writer.try_clone()?;
        let (tx, rx) = channel();
        thread::spawn(move || {
            let mut buf = [0u8; 256];
            loop {
                match reader.read(&mut buf) {
                    Ok(0) => {
                        let _ = tx.send(Err(io::ErrorKind::BrokenPipe.into()));
                        return;
                    }
                    Ok(n) => {
                        if tx.send(Ok(buf[..n].to_vec())).is_err() {
                            return;
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        });
        Ok(Self { writer, rx })
    }
}

impl Link for DeviceLink {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    fn recv_available(&mut self) -> io::Result<Vec<u8>> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(Ok(chunk)) => out.extend(chunk),
                Ok(Err(e)) if out.is_empty() => return Err(e),
                Ok(Err(_)) | Err(TryRecvError::Empty) => return Ok(out),
                Err(TryRecvError::Disconnected) if out.is_empty() => {
                    return Err(io::ErrorKind::BrokenPipe.into());
                }
                Err(TryRecvError::Disconnected) => return Ok(out),
            }
        }
    }
}
