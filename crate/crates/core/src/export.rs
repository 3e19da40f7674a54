//! Binary PGM (P5) and CSV images.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Grid, Image};

/// Raw gray levels of a PGM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub grid: Grid,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Pgm {
    /// Gray levels scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / self.maxval as f64).collect()
    }
}

/// Parses an 8- or 16-bit binary PGM. Comments are allowed in the header.
pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 signature"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("no whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if !(1..=65535).contains(&maxval) {
        return Err(bad("maxval outside 1..=65535"));
    }
    let grid = Grid::new(width, height).map_err(|_| bad("empty image"))?;
    let depth = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    if payload.len() != grid.len() * depth {
        return Err(bad(&format!(
            "{} payload bytes, expected {}",
            payload.len(),
            grid.len() * depth
        )));
    }
    let data: Vec<u16> = if depth == 1 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(bad("value above maxval"));
    }
    Ok(Pgm {
        grid,
        maxval: maxval as u16,
        data,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    parse_pgm(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.grid.width, pgm.grid.height, pgm.maxval).into_bytes();
    if pgm.maxval < 256 {
        out.extend(pgm.data.iter().map(|&v| v as u8));
    } else {
        out.extend(pgm.data.iter().flat_map(|v| v.to_be_bytes()));
    }
    out
}

/// 16-bit rendering of an image, mapping its minimum to 0 and its maximum
/// to 65535. A constant image renders black.
pub fn render_pgm(image: &Image) -> Pgm {
    let (lo, hi) = (image.min(), image.max());
    let span = hi - lo;
    let data = image
        .as_slice()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    Pgm {
        grid: image.grid(),
        maxval: 65535,
        data,
    }
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(&render_pgm(image)))?;
    Ok(())
}

/// One row per line; values use the shortest representation that reads
/// back to the same `f64`.
pub fn encode_csv(image: &Image) -> String {
    let mut out = String::new();
    for row in image.as_slice().chunks_exact(image.width()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Image> {
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Format(format!("CSV line {}: {e}", i + 1)))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Format(format!(
                    "CSV line {}: {} columns, expected {w}",
                    i + 1,
                    row.len()
                )))
            }
            Some(_) => {}
        }
        data.extend(row);
        height += 1;
    }
    let grid = Grid::new(width.unwrap_or(0), height).map_err(|_| Error::Format("empty CSV image".into()))?;
    Image::from_vec(grid, data)
}

pub fn write_csv(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(encode_csv(image).as_bytes())?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Image> {
    parse_csv(&fs::read_to_string(path)?)
}
