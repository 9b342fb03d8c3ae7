//! Binary and CSV serialization of [`EventStream`]s.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! header (38 bytes)
//!   magic "PCEV" | version u16 | width u16 | height u16 | contrast_threshold_C f64
//!   | tick_us u32 | duration_us u64 | event_count u64
//! record (13 bytes each)
//!   t_us u64 | x u16 | y u16 | p i8
//! ```
//!
//! The CSV form is a `t_us,x,y,p` table; geometry travels in a key-value sidecar
//! carrying the same fields as the binary header.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::event::{Event, EventStream, GeometryError, Polarity, SensorGeometry};
use crate::kv::{KvError, KvMap};

pub const MAGIC: [u8; 4] = *b"PCEV";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 38;
pub const RECORD_LEN: usize = 13;
pub const CSV_HEADER: &str = "t_us,x,y,p";

pub const SIDECAR_KEYS: [&str; 7] = [
    "format_version",
    "width",
    "height",
    "contrast_threshold_C",
    "tick_us",
    "duration_us",
    "event_count",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamFormat {
    Binary,
    Csv,
}

impl std::str::FromStr for StreamFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" | "bin" => Ok(StreamFormat::Binary),
            "csv" => Ok(StreamFormat::Csv),
            other => Err(format!(
                "unknown stream format `{other}` (expected binary or csv)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("write failed after {written} bytes: {source}")]
    Io { written: u64, source: io::Error },
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("byte {offset}: bad magic {found:?}, expected \"PCEV\"")]
    BadMagic { offset: u64, found: [u8; 4] },
    #[error("byte {offset}: format version mismatch (found {found}, expected {FORMAT_VERSION})")]
    VersionMismatch { offset: u64, found: u16 },
    #[error("byte {offset}: invalid sensor geometry: {source}")]
    Geometry { offset: u64, source: GeometryError },
    #[error("byte {offset}: coordinate out of bounds ({x}, {y}) for a {width}x{height} sensor")]
    OutOfBounds {
        offset: u64,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("byte {offset}: events unsorted")]
    Unsorted { offset: u64 },
    #[error("byte {offset}: invalid polarity {value}")]
    BadPolarity { offset: u64, value: i64 },
    #[error("byte {offset}: event time {t} us exceeds stream duration {duration_us} us")]
    PastDuration {
        offset: u64,
        t: u64,
        duration_us: u64,
    },
    #[error("byte {offset}: truncated payload (needed {needed} more bytes)")]
    Truncated { offset: u64, needed: u64 },
    #[error("byte {offset}: {extra} trailing bytes after the last record")]
    TrailingBytes { offset: u64, extra: u64 },
    #[error("byte {offset}: malformed csv line: {reason}")]
    Csv { offset: u64, reason: String },
    #[error("byte {offset}: header declares {declared} events, payload holds {found}")]
    CountMismatch {
        offset: u64,
        declared: u64,
        found: u64,
    },
    #[error("sidecar: {0}")]
    Sidecar(#[from] KvError),
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<(), WriteError> {
        self.inner
            .write_all(bytes)
            .map_err(|source| WriteError::Io {
                written: self.written,
                source,
            })?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    fn finish(mut self) -> Result<u64, WriteError> {
        self.inner.flush().map_err(|source| WriteError::Io {
            written: self.written,
            source,
        })?;
        Ok(self.written)
    }
}

/// Serializes `stream` in `format`; for CSV only the event table is written (see [`write_sidecar`]).
pub fn write_stream<W: Write>(
    stream: &EventStream,
    sink: W,
    format: StreamFormat,
) -> Result<u64, WriteError> {
    match format {
        StreamFormat::Binary => write_binary(stream, sink),
        StreamFormat::Csv => write_csv(stream, sink),
    }
}

pub fn write_binary<W: Write>(stream: &EventStream, sink: W) -> Result<u64, WriteError> {
    let mut out = CountingWriter::new(sink);
    out.put(&encode_header(stream))?;
    let mut buf = Vec::with_capacity(RECORD_LEN * 4096);
    for chunk in stream.events().chunks(4096) {
        buf.clear();
        for e in chunk {
            buf.extend_from_slice(&e.t.to_le_bytes());
            buf.extend_from_slice(&e.x.to_le_bytes());
            buf.extend_from_slice(&e.y.to_le_bytes());
            buf.push(e.p.as_i8() as u8);
        }
        out.put(&buf)?;
    }
    out.finish()
}

fn encode_header(stream: &EventStream) -> [u8; HEADER_LEN] {
    let g = stream.geometry();
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[6..8].copy_from_slice(&g.width.to_le_bytes());
    h[8..10].copy_from_slice(&g.height.to_le_bytes());
    h[10..18].copy_from_slice(&g.contrast_threshold.to_le_bytes());
    h[18..22].copy_from_slice(&g.tick_us.to_le_bytes());
    h[22..30].copy_from_slice(&stream.duration_us().to_le_bytes());
    h[30..38].copy_from_slice(&(stream.len() as u64).to_le_bytes());
    h
}

pub fn write_csv<W: Write>(stream: &EventStream, sink: W) -> Result<u64, WriteError> {
    let mut out = CountingWriter::new(BufWriter::new(sink));
    out.put(CSV_HEADER.as_bytes())?;
    out.put(b"\n")?;
    let mut line = String::with_capacity(32);
    for e in stream.events() {
        line.clear();
        use std::fmt::Write as _;
        let _ = writeln!(line, "{},{},{},{}", e.t, e.x, e.y, e.p.as_i8());
        out.put(line.as_bytes())?;
    }
    out.finish()
}

/// Geometry and counts of `stream` as a key-value document.
pub fn sidecar(stream: &EventStream) -> KvMap {
    let g = stream.geometry();
    let mut kv = KvMap::new();
    kv.insert("format_version", FORMAT_VERSION);
    kv.insert("width", g.width);
    kv.insert("height", g.height);
    kv.insert("contrast_threshold_C", g.contrast_threshold);
    kv.insert("tick_us", g.tick_us);
    kv.insert("duration_us", stream.duration_us());
    kv.insert("event_count", stream.len());
    kv
}

pub fn write_sidecar<W: Write>(stream: &EventStream, sink: W) -> Result<u64, WriteError> {
    let mut out = CountingWriter::new(sink);
    out.put(sidecar(stream).render_ordered(&SIDECAR_KEYS).as_bytes())?;
    out.finish()
}

pub fn read_stream<R: Read>(
    source: R,
    format: StreamFormat,
    sidecar: Option<&KvMap>,
) -> Result<EventStream, ReadError> {
    match (format, sidecar) {
        (StreamFormat::Binary, _) => read_binary(source),
        (StreamFormat::Csv, Some(kv)) => read_csv(source, kv),
        (StreamFormat::Csv, None) => {
            Err(ReadError::Sidecar(KvError::MissingKey("width".to_string())))
        }
    }
}

/// Accumulates validated events while tracking ordering.
struct StreamBuilder {
    geometry: SensorGeometry,
    duration_us: u64,
    events: Vec<Event>,
}

impl StreamBuilder {
    fn push(&mut self, offset: u64, x: u16, y: u16, t: u64, p: i64) -> Result<(), ReadError> {
        let g = &self.geometry;
        if !g.contains(x, y) {
            return Err(ReadError::OutOfBounds {
                offset,
                x,
                y,
                width: g.width,
                height: g.height,
            });
        }
        if t > self.duration_us {
            return Err(ReadError::PastDuration {
                offset,
                t,
                duration_us: self.duration_us,
            });
        }
        let p = i8::try_from(p)
            .ok()
            .and_then(Polarity::from_i8)
            .ok_or(ReadError::BadPolarity { offset, value: p })?;
        let event = Event::new(x, y, t, p);
        if let Some(prev) = self.events.last() {
            if prev.order_key() > event.order_key() {
                return Err(ReadError::Unsorted { offset });
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn finish(self) -> EventStream {
        EventStream::new(self.geometry, self.events, self.duration_us)
            .expect("events validated while reading")
    }
}

pub fn read_binary<R: Read>(mut source: R) -> Result<EventStream, ReadError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_binary(&bytes)
}

pub fn decode_binary(bytes: &[u8]) -> Result<EventStream, ReadError> {
    if bytes.len() < HEADER_LEN {
        // report the first missing field
        if bytes.len() >= 4 && bytes[0..4] != MAGIC {
            return Err(ReadError::BadMagic {
                offset: 0,
                found: bytes[0..4].try_into().unwrap(),
            });
        }
        return Err(ReadError::Truncated {
            offset: bytes.len() as u64,
            needed: (HEADER_LEN - bytes.len()) as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ReadError::BadMagic {
            offset: 0,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ReadError::VersionMismatch {
            offset: 4,
            found: version,
        });
    }
    let width = u16::from_le_bytes([bytes[6], bytes[7]]);
    let height = u16::from_le_bytes([bytes[8], bytes[9]]);
    let contrast = f64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let tick_us = u32::from_le_bytes(bytes[18..22].try_into().unwrap());
    let duration_us = u64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[30..38].try_into().unwrap());
    let geometry = SensorGeometry::new(width, height, contrast, tick_us)
        .map_err(|source| ReadError::Geometry { offset: 6, source })?;

    let payload = &bytes[HEADER_LEN..];
    let available = (payload.len() / RECORD_LEN) as u64;
    if available < count {
        let have = payload.len() as u64;
        let want = count.saturating_mul(RECORD_LEN as u64);
        return Err(ReadError::Truncated {
            offset: bytes.len() as u64,
            needed: want - have,
        });
    }
    let used = count as usize * RECORD_LEN;
    if payload.len() > used {
        return Err(ReadError::TrailingBytes {
            offset: (HEADER_LEN + used) as u64,
            extra: (payload.len() - used) as u64,
        });
    }

    let mut builder = StreamBuilder {
        geometry,
        duration_us,
        events: Vec::with_capacity(count as usize),
    };
    for (i, rec) in payload.chunks_exact(RECORD_LEN).enumerate() {
        let offset = (HEADER_LEN + i * RECORD_LEN) as u64;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = rec[12] as i8 as i64;
        builder.push(offset, x, y, t, p)?;
    }
    Ok(builder.finish())
}

fn geometry_from_sidecar(kv: &KvMap) -> Result<(SensorGeometry, u64, u64), ReadError> {
    kv.reject_unknown(&SIDECAR_KEYS)?;
    if let Some(version) = kv.get::<u16>("format_version")? {
        if version != FORMAT_VERSION {
            return Err(ReadError::VersionMismatch {
                offset: 0,
                found: version,
            });
        }
    }
    let geometry = SensorGeometry::new(
        kv.require("width")?,
        kv.require("height")?,
        kv.require("contrast_threshold_C")?,
        kv.require("tick_us")?,
    )
    .map_err(|source| ReadError::Geometry { offset: 0, source })?;
    Ok((
        geometry,
        kv.require("duration_us")?,
        kv.require("event_count")?,
    ))
}

/// Reads a `t_us,x,y,p` table; offsets in errors refer to the CSV byte stream.
pub fn read_csv<R: Read>(mut source: R, sidecar: &KvMap) -> Result<EventStream, ReadError> {
    let (geometry, duration_us, declared) = geometry_from_sidecar(sidecar)?;
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut builder = StreamBuilder {
        geometry,
        duration_us,
        events: Vec::with_capacity(declared.min(1 << 24) as usize),
    };
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => offset += h.len() as u64,
        _ => {
            return Err(ReadError::Csv {
                offset: 0,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    for raw in lines {
        let line = raw.trim_end();
        if !line.is_empty() {
            let bad = |reason: &str| ReadError::Csv {
                offset,
                reason: reason.to_string(),
            };
            let mut fields = line.split(',');
            let mut next =
                |name: &str| fields.next().ok_or_else(|| bad(&format!("missing {name}")));
            let t: u64 = next("t_us")?.trim().parse().map_err(|_| bad("bad t_us"))?;
            let x: u16 = next("x")?.trim().parse().map_err(|_| bad("bad x"))?;
            let y: u16 = next("y")?.trim().parse().map_err(|_| bad("bad y"))?;
            let p: i64 = next("p")?.trim().parse().map_err(|_| bad("bad p"))?;
            if fields.next().is_some() {
                return Err(bad("too many fields"));
            }
            builder.push(offset, x, y, t, p)?;
        }
        offset += raw.len() as u64;
    }
    let found = builder.events.len() as u64;
    if found != declared {
        return Err(ReadError::CountMismatch {
            offset,
            declared,
            found,
        });
    }
    Ok(builder.finish())
}

/// Sidecar path used for CSV streams: `<path>.kv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".kv");
    PathBuf::from(s)
}

/// Guesses the format from the file extension (`.csv` or anything else as binary).
pub fn format_for_path(path: &Path) -> StreamFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => StreamFormat::Csv,
        _ => StreamFormat::Binary,
    }
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: WriteError },
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: ReadError },
}

/// Writes a stream file (plus `<path>.kv` for CSV). Returns bytes written to `path`.
pub fn save_stream(
    path: &Path,
    stream: &EventStream,
    format: StreamFormat,
) -> Result<u64, FileError> {
    let create = |p: &Path| {
        File::create(p).map_err(|source| FileError::Open {
            path: p.to_path_buf(),
            source,
        })
    };
    let n = write_stream(stream, BufWriter::new(create(path)?), format).map_err(|source| {
        FileError::Write {
            path: path.to_path_buf(),
            source,
        }
    })?;
    if format == StreamFormat::Csv {
        let side = sidecar_path(path);
        write_sidecar(stream, create(&side)?)
            .map_err(|source| FileError::Write { path: side, source })?;
    }
    Ok(n)
}

pub fn load_stream(path: &Path, format: StreamFormat) -> Result<EventStream, FileError> {
    let open = |p: &Path| {
        File::open(p).map_err(|source| FileError::Open {
            path: p.to_path_buf(),
            source,
        })
    };
    let file = BufReader::new(open(path)?);
    let kv = match format {
        StreamFormat::Binary => None,
        StreamFormat::Csv => {
            let side = sidecar_path(path);
            let text = std::fs::read_to_string(&side).map_err(|source| FileError::Open {
                path: side.clone(),
                source,
            })?;
            Some(KvMap::parse(&text).map_err(|e| FileError::Read {
                path: side,
                source: e.into(),
            })?)
        }
    };
    read_stream(file, format, kv.as_ref()).map_err(|source| FileError::Read {
        path: path.to_path_buf(),
        source,
    })
}
