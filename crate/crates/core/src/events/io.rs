//! Event file formats.
//!
//! Text: a header line `# H W t_start t_end` followed by one `x,y,t,p`
//! record per line, `t` printed with nine fractional digits and `p` in
//! `{1,-1}`.
//!
//! Binary (little-endian): magic `PEPREVT1`, `u16 H`, `u16 W`,
//! `f64 t_start`, `f64 t_end`, `u64 count`, then `count` records of
//! `u16 x, u16 y, f64 t, i8 p` (13 bytes each).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EventRecord, EventStream, Polarity, Resolution};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 8] = b"PEPREVT1";

pub fn write_events_text(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = stream.resolution();
    let mut body = || -> std::io::Result<()> {
        writeln!(
            w,
            "# {} {} {:.9} {:.9}",
            res.height,
            res.width,
            stream.t_start(),
            stream.t_end()
        )?;
        for r in stream.records() {
            writeln!(w, "{},{},{:.9},{}", r.x, r.y, r.t, r.polarity.sign())?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_events_text(path: &Path) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events_text(BufReader::new(file), path)
}

/// Parses the text format from any reader; `path` only labels errors.
pub fn parse_events_text(reader: impl BufRead, path: &Path) -> Result<EventStream> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty event file"))?
        .map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| Error::format(path, "missing '#' header"))?
        .split_whitespace()
        .collect();
    if fields.len() != 4 {
        return Err(Error::format(path, "header must be '# H W t_start t_end'"));
    }
    let bad = |what: &str| Error::format(path, format!("unparsable {what}"));
    let height: usize = fields[0].parse().map_err(|_| bad("height"))?;
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let t_start: f64 = fields[2].parse().map_err(|_| bad("t_start"))?;
    let t_end: f64 = fields[3].parse().map_err(|_| bad("t_end"))?;

    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = || parts.next().map(str::trim);
        let rec = (|| {
            let x = next()?.parse().ok()?;
            let y = next()?.parse().ok()?;
            let t = next()?.parse().ok()?;
            let polarity = Polarity::from_sign(next()?.parse().ok()?)?;
            Some(EventRecord { x, y, t, polarity })
        })()
        .ok_or_else(|| Error::format(path, format!("bad record on line {}", lineno + 2)))?;
        records.push(rec);
    }
    EventStream::new(Resolution::new(height, width), records, t_start, t_end)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_events_binary(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = stream.resolution();
    let mut body = || -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(res.height as u16).to_le_bytes())?;
        w.write_all(&(res.width as u16).to_le_bytes())?;
        w.write_all(&stream.t_start().to_le_bytes())?;
        w.write_all(&stream.t_end().to_le_bytes())?;
        w.write_all(&(stream.len() as u64).to_le_bytes())?;
        for r in stream.records() {
            w.write_all(&r.x.to_le_bytes())?;
            w.write_all(&r.y.to_le_bytes())?;
            w.write_all(&r.t.to_le_bytes())?;
            w.write_all(&r.polarity.sign().to_le_bytes())?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_events_binary(path: &Path) -> Result<EventStream> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let short = || Error::format(path, "truncated binary event file");
    if bytes.len() < 36 || &bytes[..8] != BINARY_MAGIC {
        return Err(Error::format(path, "missing PEPREVT1 magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let height = u16_at(8) as usize;
    let width = u16_at(10) as usize;
    let t_start = f64_at(12);
    let t_end = f64_at(20);
    let count = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 36 + count * 13 {
        return Err(short());
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let o = 36 + i * 13;
        let polarity = Polarity::from_sign(bytes[o + 12] as i8 as i64)
            .ok_or_else(|| Error::format(path, format!("record {i} has zero polarity")))?;
        records.push(EventRecord {
            x: u16_at(o),
            y: u16_at(o + 2),
            t: f64_at(o + 4),
            polarity,
        });
    }
    EventStream::new(Resolution::new(height, width), records, t_start, t_end)
        .map_err(|e| Error::format(path, e.to_string()))
}
