//! QDIF frame-stack files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `QDIF`                  |
//! | 4      | 1    | format version (1)            |
//! | 5      | 4    | width (u32)                   |
//! | 9      | 4    | height (u32)                  |
//! | 13     | 8    | n_frames (u64)                |
//! | 21     | 4    | exposure in ms (f32)          |
//! | 25     | 11   | reserved, zero                |
//! | 36     | ...  | frames, row-major u16         |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Grid;
use crate::stack::{FrameSink, FrameSource};

pub const MAGIC: [u8; 4] = *b"QDIF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdifHeader {
    pub grid: Grid,
    pub n_frames: u64,
    pub exposure_ms: f32,
}

impl QdifHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4] = VERSION;
        b[5..9].copy_from_slice(&(self.grid.width as u32).to_le_bytes());
        b[9..13].copy_from_slice(&(self.grid.height as u32).to_le_bytes());
        b[13..21].copy_from_slice(&self.n_frames.to_le_bytes());
        b[21..25].copy_from_slice(&self.exposure_ms.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(Error::Format("not a QDIF stack (bad magic)".into()));
        }
        if b[4] != VERSION {
            return Err(Error::Format(format!("unsupported QDIF version {}", b[4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes")) as usize;
        let width = u32_at(5);
        let height = u32_at(9);
        let n_frames = u64::from_le_bytes(b[13..21].try_into().expect("8 bytes"));
        let exposure_ms = f32::from_le_bytes(b[21..25].try_into().expect("4 bytes"));
        let grid = Grid::new(width, height).map_err(|_| Error::Format(format!("empty grid {width}x{height}")))?;
        Ok(Self {
            grid,
            n_frames,
            exposure_ms,
        })
    }

    pub fn payload_len(&self) -> u64 {
        self.grid.len() as u64 * self.n_frames * 2
    }
}

/// Streaming writer; the frame count is declared up front.
pub struct QdifWriter<W: Write> {
    inner: W,
    header: QdifHeader,
    written: u64,
    bytes: Vec<u8>,
}

impl QdifWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: QdifHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> QdifWriter<W> {
    pub fn new(mut inner: W, header: QdifHeader) -> Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(Self {
            inner,
            header,
            written: 0,
            bytes: Vec::with_capacity(header.grid.len() * 2),
        })
    }

    pub fn header(&self) -> &QdifHeader {
        &self.header
    }

    /// Flushes and checks that exactly the declared number of frames was written.
    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.n_frames {
            return Err(Error::Format(format!(
                "wrote {} frames, header declares {}",
                self.written, self.header.n_frames
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl<W: Write> FrameSink for QdifWriter<W> {
    fn write_frame(&mut self, frame: &[u16]) -> Result<()> {
        if frame.len() != self.header.grid.len() {
            return Err(Error::CorruptStack {
                frame: self.written,
                reason: format!("{} pixels, expected {}", frame.len(), self.header.grid.len()),
            });
        }
        if self.written == self.header.n_frames {
            return Err(Error::Format(format!(
                "header declares {} frames; refusing to write more",
                self.header.n_frames
            )));
        }
        self.bytes.clear();
        for v in frame {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&self.bytes)?;
        self.written += 1;
        Ok(())
    }
}

/// Streaming reader. Hashes every byte it reads so that derived artifacts
/// can record which stack they came from.
pub struct QdifReader<R: Read> {
    inner: R,
    header: QdifHeader,
    next: u64,
    bytes: Vec<u8>,
    frame: Vec<u16>,
    hasher: Sha256,
}

impl QdifReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::with_capacity(1 << 20, File::open(path)?))
    }
}

impl<R: Read> QdifReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut raw = [0u8; HEADER_LEN];
        inner.read_exact(&mut raw).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Format("file shorter than the QDIF header".into()),
            _ => Error::Io(e),
        })?;
        let header = QdifHeader::from_bytes(&raw)?;
        let mut hasher = Sha256::new();
        hasher.update(raw);
        Ok(Self {
            inner,
            header,
            next: 0,
            bytes: vec![0; header.grid.len() * 2],
            frame: vec![0; header.grid.len()],
            hasher,
        })
    }

    pub fn header(&self) -> &QdifHeader {
        &self.header
    }

    /// SHA-256 of everything read so far; after the last frame this is
    /// the digest of the whole file.
    pub fn digest(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }

    /// Reads all remaining frames into memory.
    pub fn read_all(mut self) -> Result<crate::stack::FrameStack> {
        let mut stack = crate::stack::FrameStack::new(self.header.grid, self.header.exposure_ms);
        while let Some(f) = self.next_frame()? {
            stack.write_frame(f)?;
        }
        Ok(stack)
    }

    fn read_payload(&mut self) -> Result<()> {
        let mut filled = 0;
        while filled < self.bytes.len() {
            match self.inner.read(&mut self.bytes[filled..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        frame: self.next,
                        expected: self.header.n_frames,
                    })
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn check_trailing(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::CorruptStack {
                        frame: self.header.n_frames,
                        reason: "data after the last declared frame".into(),
                    })
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl<R: Read> FrameSource for QdifReader<R> {
    fn grid(&self) -> Grid {
        self.header.grid
    }

    fn n_frames(&self) -> Option<u64> {
        Some(self.header.n_frames)
    }

    fn next_frame(&mut self) -> Result<Option<&[u16]>> {
        if self.next == self.header.n_frames {
            self.check_trailing()?;
            self.next += 1;
            return Ok(None);
        }
        if self.next > self.header.n_frames {
            return Ok(None);
        }
        self.read_payload()?;
        self.hasher.update(&self.bytes);
        for (v, b) in self.frame.iter_mut().zip(self.bytes.chunks_exact(2)) {
            *v = u16::from_le_bytes([b[0], b[1]]);
        }
        self.next += 1;
        Ok(Some(&self.frame))
    }
}

/// Writes an in-memory stack to `path`.
pub fn write_stack(path: impl AsRef<Path>, stack: &crate::stack::FrameStack) -> Result<()> {
    let header = QdifHeader {
        grid: stack.grid(),
        n_frames: stack.n_frames(),
        exposure_ms: stack.exposure_ms(),
    };
    let mut w = QdifWriter::create(path, header)?;
    for f in stack.frames() {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}
