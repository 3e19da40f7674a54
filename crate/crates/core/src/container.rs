//! QDCR files: a finalized correlation result with its provenance.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `QDCR`                           |
//! | 4      | 1    | format version (1)                     |
//! | 5      | 3    | reserved, zero                         |
//! | 8      | 4    | width (u32)                            |
//! | 12     | 4    | height (u32)                           |
//! | 16     | 4    | window radius (u32)                    |
//! | 20     | 8    | n_frames (u64)                         |
//! | 28     | 32   | SHA-256 of the source stack file       |
//! | 60     | ...  | gamma `[offset][y][x]`, f64            |
//! |        |      | diagonal `[y][x]`, f64                 |
//! |        |      | marginal `[y][x]`, f64                 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::correlator::{CorrelationResult, Window};
use crate::error::{Error, Result};
use crate::image::Grid;

pub const MAGIC: [u8; 4] = *b"QDCR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationContainer {
    pub result: CorrelationResult,
    pub source_hash: [u8; 32],
}

impl CorrelationContainer {
    pub fn new(result: CorrelationResult, source_hash: [u8; 32]) -> Self {
        Self { result, source_hash }
    }

    pub fn source_hash_hex(&self) -> String {
        self.source_hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let res = &self.result;
        let grid = res.grid();
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(&MAGIC);
        header[4] = VERSION;
        header[8..12].copy_from_slice(&(grid.width as u32).to_le_bytes());
        header[12..16].copy_from_slice(&(grid.height as u32).to_le_bytes());
        header[16..20].copy_from_slice(&(res.window_radius() as u32).to_le_bytes());
        header[20..28].copy_from_slice(&res.n_frames().to_le_bytes());
        header[28..60].copy_from_slice(&self.source_hash);
        w.write_all(&header)?;
        let values = res
            .gamma_values()
            .iter()
            .chain(res.diagonal().as_slice())
            .chain(res.marginal().as_slice());
        let mut bytes = Vec::with_capacity(8 * (res.gamma_values().len() + 2 * grid.len()));
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("correlation file shorter than its header".into()))?;
        if header[0..4] != MAGIC {
            return Err(Error::Format("not a QDCR correlation file (bad magic)".into()));
        }
        if header[4] != VERSION {
            return Err(Error::Format(format!("unsupported QDCR version {}", header[4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (width, height, radius) = (u32_at(8), u32_at(12), u32_at(16));
        let n_frames = u64::from_le_bytes(header[20..28].try_into().expect("8 bytes"));
        let source_hash: [u8; 32] = header[28..60].try_into().expect("32 bytes");
        let grid = Grid::new(width, height).map_err(|_| Error::Format(format!("empty grid {width}x{height}")))?;
        if radius == 0 || radius >= 1 << 12 {
            return Err(Error::Format(format!("window radius {radius} out of range")));
        }
        let n_gamma = Window::new(radius).len() * grid.len();
        let mut read = |count: usize, what: &str| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Format(format!("correlation file truncated in {what}")))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let gamma = read(n_gamma, "gamma")?;
        let diagonal = read(grid.len(), "diagonal")?;
        let marginal = read(grid.len(), "marginal")?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after correlation payload".into()));
        }
        let result = CorrelationResult::from_parts(grid, radius, n_frames, gamma, diagonal, marginal)?;
        Ok(Self { result, source_hash })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::correlate;
    use crate::stack::VecSource;

    fn sample() -> CorrelationContainer {
        let g = Grid::new(4, 3).unwrap();
        let frames = (0..9u16).map(|l| (0..12u16).map(|i| (l * 31 + i * 7) % 23).collect()).collect();
        let res = correlate(&mut VecSource::new(g, frames), 2).unwrap();
        CorrelationContainer::new(res, [7; 32])
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * (25 * 12 + 2 * 12));
        let back = CorrelationContainer::read_from(&bytes[..]).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        assert!(CorrelationContainer::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CorrelationContainer::read_from(&extra[..]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(CorrelationContainer::read_from(&magic[..]), Err(Error::Format(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(CorrelationContainer::read_from(&version[..]).is_err());
    }
}
