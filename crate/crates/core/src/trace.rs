//! Append-only simulation trace.
//!
//! One record per line, fixed field order, UTF-8:
//!
//! ```text
//! t=<tick> node=<name> kind=<kind> proto=<proto> inst=<instance> detail=<detail>
//! ```
//!
//! Values are percent-escaped so the format survives arbitrary detail
//! strings. Replaying a scenario with the same seed must reproduce the
//! trace byte for byte; everything that feeds a record is deterministic.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {0}: missing field {1}")]
    MissingField(usize, &'static str),
    #[error("line {0}: bad integer in field t")]
    BadTime(usize),
    #[error("line {0}: malformed field (expected key=value)")]
    Malformed(usize),
    #[error("line {0}: bad escape sequence")]
    BadEscape(usize),
    #[error("line {0}: fields out of order")]
    FieldOrder(usize),
}

/// One simulation event. `detail` carries a record-kind-specific payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: u64,
    pub node: String,
    pub kind: String,
    pub proto: String,
    pub inst: String,
    pub detail: String,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        format!(
            "t={} node={} kind={} proto={} inst={} detail={}",
            self.time,
            escape(&self.node),
            escape(&self.kind),
            escape(&self.proto),
            escape(&self.inst),
            escape(&self.detail),
        )
    }

    pub fn parse_line(line: &str, lineno: usize) -> Result<TraceRecord, TraceParseError> {
        let mut fields = line.split(' ');
        let mut next = |name: &'static str| -> Result<String, TraceParseError> {
            let part = fields
                .next()
                .ok_or(TraceParseError::MissingField(lineno, name))?;
            let (key, value) = part
                .split_once('=')
                .ok_or(TraceParseError::Malformed(lineno))?;
            if key != name {
                return Err(TraceParseError::FieldOrder(lineno));
            }
            unescape(value).ok_or(TraceParseError::BadEscape(lineno))
        };
        let time = next("t")?
            .parse::<u64>()
            .map_err(|_| TraceParseError::BadTime(lineno))?;
        let node = next("node")?;
        let kind = next("kind")?;
        let proto = next("proto")?;
        let inst = next("inst")?;
        let detail = next("detail")?;
        if fields.next().is_some() {
            return Err(TraceParseError::Malformed(lineno));
        }
        Ok(TraceRecord {
            time,
            node,
            kind,
            proto,
            inst,
            detail,
        })
    }
}

/// Render a whole trace as the canonical file body.
pub fn to_text(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Strict parse of a trace file body.
pub fn parse_text(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        out.push(TraceRecord::parse_line(line, i + 1)?);
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b' ' | b'=' | b'%' | b'\n' | b'\r' => {
                out.push('%');
                out.push_str(&format!("{b:02x}"));
            }
            0x20..=0x7e => out.push(b as char),
            _ => {
                out.push('%');
                out.push_str(&format!("{b:02x}"));
            }
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            let v = u8::from_str_radix(hex, 16).ok()?;
            out.push(v);
            i += 3;
        } else {
            // raw spaces/equals must have been escaped
            if bytes[i] == b' ' || bytes[i] == b'=' {
                return None;
            }
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(detail: &str) -> TraceRecord {
        TraceRecord {
            time: 42,
            node: "p1".into(),
            kind: "decide".into(),
            proto: "aba".into(),
            inst: "i-1".into(),
            detail: detail.into(),
        }
    }

    #[test]
    fn roundtrip_plain() {
        let r = rec("value:1");
        let back = TraceRecord::parse_line(&r.to_line(), 1).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn roundtrip_hostile_detail() {
        for detail in ["a b=c", "100% done", "multi\nline", "ünïcode", ""] {
            let r = rec(detail);
            let line = r.to_line();
            assert!(!line.contains('\n'));
            let back = TraceRecord::parse_line(&line, 1).unwrap();
            assert_eq!(back, r, "detail {detail:?}");
        }
    }

    #[test]
    fn shuffled_fields_rejected() {
        let line = "node=p1 t=1 kind=k proto=p inst=i detail=d";
        assert!(matches!(
            TraceRecord::parse_line(line, 3),
            Err(TraceParseError::FieldOrder(3))
        ));
    }

    #[test]
    fn truncated_line_rejected() {
        let line = "t=1 node=p1 kind=k";
        assert!(matches!(
            TraceRecord::parse_line(line, 1),
            Err(TraceParseError::MissingField(1, "proto"))
        ));
    }

    #[test]
    fn junk_rejected_without_panic() {
        for junk in ["", "t=", "t=x node=a kind=b proto=c inst=d detail=e", "a=b", "t=1 t=1 t=1 t=1 t=1 t=1", "t=1 node=a kind=b proto=c inst=d detail=e extra=f", "t=1 node=% kind=b proto=c inst=d detail=e"] {
            let _ = TraceRecord::parse_line(junk, 1);
        }
    }

    #[test]
    fn text_roundtrip() {
        let records = vec![rec("one"), rec("two with space"), rec("three=3")];
        let text = to_text(&records);
        assert_eq!(parse_text(&text).unwrap(), records);
    }
}
