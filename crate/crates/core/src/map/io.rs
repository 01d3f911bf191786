use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GeoFrame, MagRaster, DEFAULT_NODATA};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"MAGR1";
const HEADER_LEN: usize = 5 + 4 + 4 + 8 * 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    /// ESRI ASCII grid.
    Asc,
    /// `MAGR1` little-endian binary.
    Bin,
}

impl RasterFormat {
    /// Guesses from the file extension; anything but `.asc` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("asc") => RasterFormat::Asc,
            _ => RasterFormat::Bin,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::Asc => "asc",
            RasterFormat::Bin => "magr",
        }
    }
}

impl FromStr for RasterFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asc" => Ok(RasterFormat::Asc),
            "bin" => Ok(RasterFormat::Bin),
            _ => Err(Error::Config(format!("unknown raster format '{s}', expected asc or bin"))),
        }
    }
}

pub fn load_raster(path: &Path, format: RasterFormat) -> Result<MagRaster> {
    match format {
        RasterFormat::Asc => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            read_asc(&text)
        }
        RasterFormat::Bin => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            read_bin(&bytes)
        }
    }
}

pub fn save_raster(raster: &MagRaster, path: &Path, format: RasterFormat) -> Result<()> {
    let bytes = match format {
        RasterFormat::Asc => write_asc(raster).into_bytes(),
        RasterFormat::Bin => write_bin(raster),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_num(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} '{tok}'"),
    })
}

fn parse_count(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} must be a non-negative integer, got '{tok}'"),
    })
}

/// Parses an ESRI ASCII grid.
///
/// Accepts `xllcorner`/`xllcenter` (and `y`), a single `cellsize` or
/// separate `dx`/`dy`, and an optional `NODATA_value`. Keys are
/// case-insensitive. `x` is longitude and `y` latitude, in degrees.
pub fn read_asc(text: &str) -> Result<MagRaster> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l)).peekable();
    let (mut ncols, mut nrows) = (None, None);
    let (mut xll, mut yll, mut centre) = (None, None, false);
    let (mut dx, mut dy) = (None, None);
    let mut nodata = DEFAULT_NODATA;
    while let Some(&(no, line)) = lines.peek() {
        let mut toks = line.split_whitespace();
        let Some(key) = toks.next() else {
            lines.next();
            continue;
        };
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let val = toks.next().ok_or_else(|| Error::Parse {
            line: no,
            msg: format!("header key '{key}' has no value"),
        })?;
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: no,
                msg: format!("trailing tokens after header key '{key}'"),
            });
        }
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(parse_count(val, no, "ncols")?),
            "nrows" => nrows = Some(parse_count(val, no, "nrows")?),
            "xllcorner" => xll = Some(parse_num(val, no, key)?),
            "yllcorner" => yll = Some(parse_num(val, no, key)?),
            "xllcenter" => {
                xll = Some(parse_num(val, no, key)?);
                centre = true;
            }
            "yllcenter" => {
                yll = Some(parse_num(val, no, key)?);
                centre = true;
            }
            "cellsize" => {
                let c = parse_num(val, no, key)?;
                dx = Some(c);
                dy = Some(c);
            }
            "dx" => dx = Some(parse_num(val, no, key)?),
            "dy" => dy = Some(parse_num(val, no, key)?),
            "nodata_value" => nodata = parse_num(val, no, key)?,
            _ => {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("unknown header key '{key}'"),
                })
            }
        }
        lines.next();
    }
    let first_data = lines.peek().map_or(text.lines().count() + 1, |&(no, _)| no);
    let missing = |what: &str| Error::Parse {
        line: first_data,
        msg: format!("header is missing {what}"),
    };
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    let dx = dx.ok_or_else(|| missing("cellsize"))?;
    let dy = dy.ok_or_else(|| missing("cellsize"))?;
    if centre {
        xll -= 0.5 * dx;
        yll -= 0.5 * dy;
    }
    let expected = ncols * nrows;
    let mut values = Vec::with_capacity(expected);
    for (no, line) in lines {
        for tok in line.split_whitespace() {
            if values.len() == expected {
                return Err(Error::DimensionMismatch(format!(
                    "line {no}: more than {ncols}x{nrows} = {expected} values"
                )));
            }
            values.push(parse_num(tok, no, "value")?);
        }
    }
    if values.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "expected {ncols}x{nrows} = {expected} values, found {}",
            values.len()
        )));
    }
    let frame = GeoFrame {
        origin_lat: yll,
        origin_lon: xll,
        cell_dlat: dy,
        cell_dlon: dx,
    };
    MagRaster::new(ncols, nrows, frame, values, nodata)
}

/// Shortest round-trip decimal for every value, so reading back is bit-exact.
pub fn write_asc(raster: &MagRaster) -> String {
    let f = raster.frame();
    let mut s = String::with_capacity(raster.values().len() * 12 + 200);
    let _ = writeln!(s, "ncols {}", raster.width());
    let _ = writeln!(s, "nrows {}", raster.height());
    let _ = writeln!(s, "xllcorner {}", f.origin_lon);
    let _ = writeln!(s, "yllcorner {}", f.origin_lat);
    if f.cell_dlat == f.cell_dlon {
        let _ = writeln!(s, "cellsize {}", f.cell_dlat);
    } else {
        let _ = writeln!(s, "dx {}", f.cell_dlon);
        let _ = writeln!(s, "dy {}", f.cell_dlat);
    }
    let _ = writeln!(s, "NODATA_value {}", raster.nodata_value());
    for row in raster.values().chunks(raster.width()) {
        let mut first = true;
        for v in row {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::ParseBinary {
            offset: self.pos,
            msg: format!("truncated while reading {what}"),
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice length is N"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take::<8>(what).map(f64::from_le_bytes)
    }
}

pub fn read_bin(bytes: &[u8]) -> Result<MagRaster> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<5>("magic")? != MAGIC {
        return Err(Error::ParseBinary {
            offset: 0,
            msg: "missing MAGR1 magic".into(),
        });
    }
    let width = c.u32("width")? as usize;
    let height = c.u32("height")? as usize;
    let frame = GeoFrame {
        origin_lat: c.f64("origin_lat")?,
        origin_lon: c.f64("origin_lon")?,
        cell_dlat: c.f64("cell_dlat")?,
        cell_dlon: c.f64("cell_dlon")?,
    };
    let nodata = c.f64("nodata")?;
    let n = width.checked_mul(height).ok_or_else(|| Error::DimensionMismatch(format!("{width}x{height} overflows")))?;
    let payload = bytes.len() - HEADER_LEN;
    if payload != n * 8 {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} raster needs {} payload bytes, found {payload}",
            n * 8
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    MagRaster::new(width, height, frame, values, nodata)
}

pub fn write_bin(raster: &MagRaster) -> Vec<u8> {
    let f = raster.frame();
    let mut out = Vec::with_capacity(HEADER_LEN + raster.values().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    out.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    for x in [f.origin_lat, f.origin_lon, f.cell_dlat, f.cell_dlon, raster.nodata_value()] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for v in raster.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
