//! CSV and EVT1 event file formats.
//!
//! CSV has the header `x,y,t,p` and one raw-unit event per line. EVT1 is the
//! bytes `EVT1`, a little-endian `u64` count, then `count` records of four
//! little-endian `f64` values `(x, y, t, p)`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{denormalize, sort_by_t, Event, EventStream, Polarity, SensorDims};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const CSV_HEADER: &str = "x,y,t,p";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Evt1,
}

impl EventFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(EventFormat::Csv),
            "evt1" => Some(EventFormat::Evt1),
            _ => None,
        }
    }
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "evt1" => Ok(EventFormat::Evt1),
            other => Err(Error::invalid(format!("unknown event format {other:?}"))),
        }
    }
}

/// Recoverable irregularities found while loading.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadWarning {
    /// Polarity `0` at the given event position was mapped to `-1`.
    ZeroPolarity { row: usize },
    /// Timestamps were not non-decreasing; events were re-sorted.
    Unsorted,
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadWarning::ZeroPolarity { row } => {
                write!(f, "event {row}: polarity 0 remapped to -1")
            }
            LoadWarning::Unsorted => write!(f, "timestamps not monotone; events re-sorted"),
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_polarity(
    v: f64,
    row: usize,
    path: &Path,
    warnings: &mut Vec<LoadWarning>,
) -> Result<Polarity> {
    if v == 0.0 {
        warnings.push(LoadWarning::ZeroPolarity { row });
        return Ok(Polarity::Negative);
    }
    Polarity::from_f64(v).ok_or_else(|| malformed(path, format!("event {row}: polarity {v} not in {{-1, 0, 1}}")))
}

/// Reads events in file order without sorting, e.g. for adversarial streams
/// that stay index-aligned with their clean source.
pub fn read_events(path: &Path, format: EventFormat) -> Result<(Vec<Event>, Vec<LoadWarning>)> {
    let mut warnings = Vec::new();
    let events = match format {
        EventFormat::Csv => read_csv(path, &mut warnings)?,
        EventFormat::Evt1 => read_evt1(path, &mut warnings)?,
    };
    Ok((events, warnings))
}

/// Loads a raw-unit stream, returning any warnings instead of logging them.
///
/// The file formats carry no sensor geometry, so the sensor size is taken as
/// the smallest integer bounding box of the coordinates (at least 1 × 1).
/// Callers that know the real geometry should overwrite `stream.sensor`.
pub fn load_events_with_warnings(
    path: &Path,
    format: EventFormat,
) -> Result<(EventStream, Vec<LoadWarning>)> {
    let (mut events, mut warnings) = read_events(path, format)?;
    if !events.windows(2).all(|w| w[0].t <= w[1].t) {
        warnings.push(LoadWarning::Unsorted);
        sort_by_t(&mut events);
    }
    let sensor = SensorDims::new(
        events.iter().map(|e| e.x).fold(1.0, f64::max).ceil(),
        events.iter().map(|e| e.y).fold(1.0, f64::max).ceil(),
    );
    Ok((
        EventStream {
            events,
            sensor,
            norm: None,
        },
        warnings,
    ))
}

/// Loads a raw-unit stream, logging warnings.
pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    let (stream, warnings) = load_events_with_warnings(path, format)?;
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(stream)
}

fn read_csv(path: &Path, warnings: &mut Vec<LoadWarning>) -> Result<Vec<Event>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| malformed(path, "missing header"))?;
    if header.trim() != CSV_HEADER {
        return Err(malformed(path, format!("expected header {CSV_HEADER:?}, found {header:?}")));
    }
    let mut events = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(malformed(path, format!("line {}: expected 4 fields", lineno + 2)));
        }
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse()
                .map_err(|_| malformed(path, format!("line {}: bad number {f:?}", lineno + 2)))?;
        }
        let p = parse_polarity(vals[3], events.len(), path, warnings)?;
        events.push(Event::new(vals[0], vals[1], vals[2], p));
    }
    Ok(events)
}

fn read_evt1(path: &Path, warnings: &mut Vec<LoadWarning>) -> Result<Vec<Event>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != EVT1_MAGIC {
        return Err(malformed(path, "missing EVT1 header"));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if count.checked_mul(32) != Some(body.len()) {
        return Err(malformed(
            path,
            format!("header declares {count} events but body has {} bytes", body.len()),
        ));
    }
    let mut events = Vec::with_capacity(count);
    for (row, rec) in body.chunks_exact(32).enumerate() {
        let f = |i: usize| f64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().unwrap());
        let p = parse_polarity(f(3), row, path, warnings)?;
        events.push(Event::new(f(0), f(1), f(2), p));
    }
    Ok(events)
}

/// Writes a stream in raw units; normalized streams are mapped back first.
pub fn save_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let raw;
    let stream = if stream.is_normalized() {
        raw = denormalize(stream)?;
        &raw
    } else {
        stream
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        EventFormat::Csv => write_csv(stream, &mut w),
        EventFormat::Evt1 => write_evt1(stream, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_csv(stream: &EventStream, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in &stream.events {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_g17(e.x),
            fmt_g17(e.y),
            fmt_g17(e.t),
            e.p.as_f64() as i8
        )?;
    }
    Ok(())
}

/// Decimal text with 17 significant digits, trimmed of redundant zeros.
fn fmt_g17(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 16 - v.abs().log10().floor() as i32;
    let s = if (0..=40).contains(&digits) {
        format!("{v:.*}", digits as usize)
    } else {
        format!("{v:.16e}")
    };
    if s.contains('.') && !s.contains('e') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn write_evt1(stream: &EventStream, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(EVT1_MAGIC)?;
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    for e in &stream.events {
        for v in [e.x, e.y, e.t, e.p.as_f64()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, ScenarioKind, SyntheticScenario};

    #[test]
    fn evt1_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.evt1");
        let s = generate_synthetic(&SyntheticScenario::new(ScenarioKind::RotatingDot), 256, 5)
            .unwrap()
            .stream;
        save_events(&s, &path, EventFormat::Evt1).unwrap();
        let (back, warnings) = load_events_with_warnings(&path, EventFormat::Evt1).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back.events, s.events);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"EVT1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 256);
        assert_eq!(bytes.len(), 12 + 256 * 32);
    }

    #[test]
    fn csv_round_trip_within_print_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = generate_synthetic(&SyntheticScenario::new(ScenarioKind::TranslatingBar), 64, 5)
            .unwrap()
            .stream;
        save_events(&s, &path, EventFormat::Csv).unwrap();
        let back = load_events(&path, EventFormat::Csv).unwrap();
        for (a, b) in s.events.iter().zip(&back.events) {
            assert!((a.x - b.x).abs() <= 1e-15 * a.x.abs().max(1.0));
            assert!((a.t - b.t).abs() <= 1e-15 * a.t.abs().max(1.0));
            assert_eq!(a.p, b.p);
        }
    }

    #[test]
    fn csv_parse_and_polarity_remap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, "x,y,t,p\n3,7,120,1\n4,8,130,0\n").unwrap();
        let (s, warnings) = load_events_with_warnings(&path, EventFormat::Csv).unwrap();
        assert_eq!(s.events[0], Event::new(3.0, 7.0, 120.0, Polarity::Positive));
        assert_eq!(s.events[1].p, Polarity::Negative);
        assert_eq!(warnings, vec![LoadWarning::ZeroPolarity { row: 1 }]);
    }

    #[test]
    fn csv_errors_and_sorting() {
        let dir = tempfile::tempdir().unwrap();
        let bad_header = dir.path().join("h.csv");
        fs::write(&bad_header, "x,y,p,t\n1,2,3,1\n").unwrap();
        assert!(matches!(
            load_events(&bad_header, EventFormat::Csv),
            Err(Error::Malformed { .. })
        ));

        let bad_pol = dir.path().join("p.csv");
        fs::write(&bad_pol, "x,y,t,p\n1,2,3,2\n").unwrap();
        assert!(load_events(&bad_pol, EventFormat::Csv).is_err());

        let unsorted = dir.path().join("u.csv");
        fs::write(&unsorted, "x,y,t,p\n1,1,50,1\n2,2,10,-1\n").unwrap();
        let (s, warnings) = load_events_with_warnings(&unsorted, EventFormat::Csv).unwrap();
        assert_eq!(warnings, vec![LoadWarning::Unsorted]);
        assert_eq!(s.events[0].t, 10.0);
    }

    #[test]
    fn evt1_truncated_body_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.evt1");
        let mut bytes = b"EVT1".to_vec();
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 32]);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_events(&path, EventFormat::Evt1),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn g17_formatting() {
        assert_eq!(fmt_g17(3.0), "3");
        assert_eq!(fmt_g17(120.0), "120");
        assert_eq!(fmt_g17(0.1).parse::<f64>().unwrap(), 0.1);
        let v = 12345.678901234567;
        assert_eq!(fmt_g17(v).parse::<f64>().unwrap(), v);
    }
}
