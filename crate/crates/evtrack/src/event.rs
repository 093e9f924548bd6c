//! Event data model, EVT1/CSV file formats, and stream statistics.
//!
//! EVT1 layout (little-endian):
//! - header, 16 bytes: magic `"EVT1"`, version u16 (=1), width u16,
//!   height u16, 6 reserved zero bytes.
//! - record, 16 bytes: t_us u64, x u16, y u16, polarity u8 (0=OFF, 1=ON),
//!   3 reserved zero bytes.
//!
//! CSV: `t_us,x,y,p` with a header line, p in {0,1}.
//! Stats CSV: `window_index,count`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const EVT1_MAGIC: [u8; 4] = *b"EVT1";
pub const EVT1_VERSION: u16 = 1;
pub const EVT1_HEADER_LEN: usize = 16;
pub const EVT1_RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_u8(v: u8) -> Option<Polarity> {
        match v {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// One DVS event: microsecond timestamp, pixel coordinates, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Stream-level metadata. Defaults to the 640×480 sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub sensor_width: u16,
    pub sensor_height: u16,
    pub version: u16,
}

impl Default for StreamHeader {
    fn default() -> Self {
        StreamHeader {
            sensor_width: 640,
            sensor_height: 480,
            version: EVT1_VERSION,
        }
    }
}

impl StreamHeader {
    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("sensor dimensions must be positive"));
        }
        Ok(StreamHeader {
            sensor_width: width,
            sensor_height: height,
            version: EVT1_VERSION,
        })
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.sensor_width && y < self.sensor_height
    }
}

/// Event counts over consecutive fixed-duration windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowStats {
    pub window_us: u64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Evt1,
    Csv,
}

impl Format {
    /// Guess from a file extension; `.evt1` and `.csv` are recognized.
    pub fn from_path(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("evt1") => Ok(Format::Evt1),
            Some("csv") => Ok(Format::Csv),
            other => Err(Error::invalid(format!(
                "cannot infer event format from extension {other:?} (use .evt1 or .csv)"
            ))),
        }
    }
}

fn validate_order_and_bounds(
    header: &StreamHeader,
    events: &mut Vec<Event>,
    tolerate_unordered: bool,
) -> Result<()> {
    let mut prev = 0u64;
    let mut unordered = false;
    for (index, ev) in events.iter().enumerate() {
        if !header.contains(ev.x, ev.y) {
            return Err(Error::OutOfBounds {
                index,
                x: ev.x,
                y: ev.y,
                width: header.sensor_width,
                height: header.sensor_height,
            });
        }
        if ev.t_us < prev {
            if !tolerate_unordered {
                return Err(Error::NonMonotonic {
                    index,
                    t_us: ev.t_us,
                    prev_us: prev,
                });
            }
            unordered = true;
        }
        prev = prev.max(ev.t_us);
    }
    if unordered {
        // Stable: ties keep file order.
        events.sort_by_key(|e| e.t_us);
    }
    Ok(())
}

/// Read a full event stream. Monotonicity violations are an error unless
/// `tolerate_unordered` is set, in which case events are stably sorted.
pub fn read_events_with<R: Read>(
    reader: R,
    format: Format,
    tolerate_unordered: bool,
) -> Result<(StreamHeader, Vec<Event>)> {
    let (header, mut events) = match format {
        Format::Evt1 => read_evt1(reader)?,
        Format::Csv => read_csv(reader)?,
    };
    validate_order_and_bounds(&header, &mut events, tolerate_unordered)?;
    Ok((header, events))
}

pub fn read_events<R: Read>(reader: R, format: Format) -> Result<(StreamHeader, Vec<Event>)> {
    read_events_with(reader, format, false)
}

pub fn read_events_path(path: &Path, tolerate_unordered: bool) -> Result<(StreamHeader, Vec<Event>)> {
    let format = Format::from_path(path)?;
    let file = std::fs::File::open(path)?;
    read_events_with(BufReader::new(file), format, tolerate_unordered)
}

fn read_evt1<R: Read>(mut reader: R) -> Result<(StreamHeader, Vec<Event>)> {
    let mut head = [0u8; EVT1_HEADER_LEN];
    read_exact_or(&mut reader, &mut head, 0)?;
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&head[0..4]);
    if magic != EVT1_MAGIC {
        return Err(Error::BadMagic {
            expected: EVT1_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != EVT1_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: EVT1_VERSION,
        });
    }
    let width = u16::from_le_bytes([head[6], head[7]]);
    let height = u16::from_le_bytes([head[8], head[9]]);
    if width == 0 || height == 0 {
        return Err(Error::format("EVT1 header has zero sensor dimension"));
    }
    let header = StreamHeader {
        sensor_width: width,
        sensor_height: height,
        version,
    };

    let mut events = Vec::new();
    let mut record = [0u8; EVT1_RECORD_LEN];
    let mut offset = EVT1_HEADER_LEN as u64;
    loop {
        match read_record(&mut reader, &mut record)? {
            RecordRead::Eof => break,
            RecordRead::Partial => return Err(Error::Truncated { offset }),
            RecordRead::Full => {}
        }
        let t_us = u64::from_le_bytes(record[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([record[8], record[9]]);
        let y = u16::from_le_bytes([record[10], record[11]]);
        let polarity = Polarity::from_u8(record[12]).ok_or_else(|| {
            Error::format(format!("invalid polarity byte {} at offset {offset}", record[12]))
        })?;
        events.push(Event { t_us, x, y, polarity });
        offset += EVT1_RECORD_LEN as u64;
    }
    Ok((header, events))
}

enum RecordRead {
    Full,
    Partial,
    Eof,
}

fn read_record<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<RecordRead> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = reader.read(&mut buf[filled..])?;
        if n == 0 {
            return Ok(if filled == 0 {
                RecordRead::Eof
            } else {
                RecordRead::Partial
            });
        }
        filled += n;
    }
    Ok(RecordRead::Full)
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    match read_record(reader, buf)? {
        RecordRead::Full => Ok(()),
        _ => Err(Error::Truncated { offset }),
    }
}

fn read_csv<R: Read>(reader: R) -> Result<(StreamHeader, Vec<Event>)> {
    let header = StreamHeader::default();
    let mut events = Vec::new();
    let buf = BufReader::new(reader);
    for (lineno, line) in buf.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            if line != "t_us,x,y,p" {
                return Err(Error::format(format!(
                    "expected CSV header 't_us,x,y,p', found '{line}'"
                )));
            }
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| Error::format(format!("line {}: missing field {name}", lineno + 1)))
        };
        let t_us: u64 = parse_field(next("t_us")?, lineno)?;
        let x: u16 = parse_field(next("x")?, lineno)?;
        let y: u16 = parse_field(next("y")?, lineno)?;
        let p: u8 = parse_field(next("p")?, lineno)?;
        if fields.next().is_some() {
            return Err(Error::format(format!("line {}: too many fields", lineno + 1)));
        }
        let polarity = Polarity::from_u8(p)
            .ok_or_else(|| Error::format(format!("line {}: polarity must be 0 or 1", lineno + 1)))?;
        events.push(Event { t_us, x, y, polarity });
    }
    Ok((header, events))
}

fn parse_field<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(format!("line {}: cannot parse '{s}'", lineno + 1)))
}

/// Write an event stream. EVT1 output is bit-exact reproducible.
pub fn write_events<W: Write>(
    writer: &mut W,
    header: &StreamHeader,
    events: &[Event],
    format: Format,
) -> Result<()> {
    match format {
        Format::Evt1 => write_evt1(writer, header, events),
        Format::Csv => write_csv(writer, events),
    }
}

fn write_evt1<W: Write>(writer: &mut W, header: &StreamHeader, events: &[Event]) -> Result<()> {
    let mut head = [0u8; EVT1_HEADER_LEN];
    head[0..4].copy_from_slice(&EVT1_MAGIC);
    head[4..6].copy_from_slice(&EVT1_VERSION.to_le_bytes());
    head[6..8].copy_from_slice(&header.sensor_width.to_le_bytes());
    head[8..10].copy_from_slice(&header.sensor_height.to_le_bytes());
    writer.write_all(&head)?;
    let mut record = [0u8; EVT1_RECORD_LEN];
    for ev in events {
        record[0..8].copy_from_slice(&ev.t_us.to_le_bytes());
        record[8..10].copy_from_slice(&ev.x.to_le_bytes());
        record[10..12].copy_from_slice(&ev.y.to_le_bytes());
        record[12] = ev.polarity.as_u8();
        record[13..16].fill(0);
        writer.write_all(&record)?;
    }
    Ok(())
}

fn write_csv<W: Write>(writer: &mut W, events: &[Event]) -> Result<()> {
    writeln!(writer, "t_us,x,y,p")?;
    for ev in events {
        writeln!(writer, "{},{},{},{}", ev.t_us, ev.x, ev.y, ev.polarity.as_u8())?;
    }
    Ok(())
}

pub fn write_events_path(path: &Path, header: &StreamHeader, events: &[Event]) -> Result<()> {
    let format = Format::from_path(path)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_events(&mut file, header, events, format)?;
    file.flush()?;
    Ok(())
}

/// Count events per consecutive `window_us` window, anchored at the first
/// event's timestamp. Empty stream gives empty stats.
pub fn stream_stats(events: &[Event], window_us: u64) -> Result<WindowStats> {
    if window_us == 0 {
        return Err(Error::invalid("window_us must be positive"));
    }
    let mut counts = Vec::new();
    if let Some(first) = events.first() {
        let t0 = first.t_us;
        for ev in events {
            let idx = ((ev.t_us - t0) / window_us) as usize;
            if counts.len() <= idx {
                counts.resize(idx + 1, 0);
            }
            counts[idx] += 1;
        }
    }
    Ok(WindowStats { window_us, counts })
}

/// Emit stats as `window_index,count` CSV.
pub fn write_stats_csv<W: Write>(writer: &mut W, stats: &WindowStats) -> Result<()> {
    writeln!(writer, "window_index,count")?;
    for (i, c) in stats.counts.iter().enumerate() {
        writeln!(writer, "{i},{c}")?;
    }
    Ok(())
}
