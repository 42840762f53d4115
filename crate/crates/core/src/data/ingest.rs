use crate::error::{Error, Result};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

/// One click: `session_id<TAB>item_id<TAB>timestamp`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEvent {
    pub session_id: String,
    pub item_id: String,
    /// Epoch seconds.
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Tsv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            other => Err(Error::Config(format!("unknown input format {other:?} (expected \"tsv\")"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub events: Vec<RawEvent>,
    pub malformed: usize,
    /// 1-based line number of the first rejected line.
    pub first_malformed_line: Option<usize>,
    pub header_skipped: bool,
}

/// Reads an event log. In strict mode any malformed line is an error.
pub fn ingest(path: &Path, format: InputFormat, strict: bool) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let report = match format {
        InputFormat::Tsv => parse_events(BufReader::new(file), strict).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?,
    };
    if report.events.is_empty() {
        log::warn!("{}: no events read", path.display());
    }
    if report.malformed > 0 {
        log::warn!(
            "{}: skipped {} malformed lines (first at line {})",
            path.display(),
            report.malformed,
            report.first_malformed_line.unwrap_or(0)
        );
    }
    Ok(report)
}

/// TSV parser behind [`ingest`]. A first line whose third field is not an
/// integer is taken as a header.
pub fn parse_events<R: BufRead>(reader: R, strict: bool) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if line_no == 1 && fields.len() >= 3 && fields[2].trim().parse::<i64>().is_err() {
            report.header_skipped = true;
            continue;
        }
        match parse_line(&fields) {
            Ok(event) => report.events.push(event),
            Err(reason) => {
                if strict {
                    return Err(Error::Parse { line: line_no, reason });
                }
                report.malformed += 1;
                report.first_malformed_line.get_or_insert(line_no);
            }
        }
    }
    Ok(report)
}

fn parse_line(fields: &[&str]) -> std::result::Result<RawEvent, String> {
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    let (session, item, ts) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
    if session.is_empty() || item.is_empty() {
        return Err("empty session or item id".into());
    }
    let timestamp = ts
        .parse::<u64>()
        .map_err(|_| format!("timestamp {ts:?} is not a non-negative integer"))?;
    Ok(RawEvent {
        session_id: session.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_no_events() {
        let r = parse_events("".as_bytes(), true).unwrap();
        assert!(r.events.is_empty());
        assert_eq!(r.malformed, 0);
    }

    #[test]
    fn well_formed_lines_preserve_fields() {
        let text = "s1\ta\t10\ns1\tb\t11\ns2\tc\t5\n";
        let r = parse_events(text.as_bytes(), true).unwrap();
        assert_eq!(r.events.len(), 3);
        assert_eq!(
            r.events[2],
            RawEvent {
                session_id: "s2".into(),
                item_id: "c".into(),
                timestamp: 5
            }
        );
        assert!(!r.header_skipped);
    }

    #[test]
    fn header_is_detected() {
        let text = "session_id\titem_id\ttimestamp\ns1\ta\t10\n";
        let r = parse_events(text.as_bytes(), true).unwrap();
        assert!(r.header_skipped);
        assert_eq!(r.events.len(), 1);
    }

    #[test]
    fn strict_mode_names_the_bad_line() {
        let text = "s1\ta\t10\ns1\tb\tnoon\n";
        let err = parse_events(text.as_bytes(), true).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn lenient_mode_counts_malformed_lines() {
        let text = "s1\ta\t10\nbroken\ns1\tb\t-3\ns2\tc\t7\n";
        let r = parse_events(text.as_bytes(), false).unwrap();
        assert_eq!(r.events.len(), 2);
        assert_eq!(r.malformed, 2);
        assert_eq!(r.first_malformed_line, Some(2));
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = ingest(Path::new("/nonexistent/log.tsv"), InputFormat::Tsv, false).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/log.tsv"));
        assert_eq!(err.exit_code(), 3);
    }
}
