//! Corpus files: canonical JSONL records and XML response exports.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::{strip_markup, Label};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

/// A record that could not be read, with its 1-based line (JSONL) or
/// element ordinal (XML).
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub position: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadOutcome {
    pub records: Vec<CorpusRecord>,
    pub skipped: Vec<Skipped>,
}

impl ReadOutcome {
    fn push(&mut self, seen: &mut HashSet<String>, position: usize, record: CorpusRecord) {
        if record.id.is_empty() {
            self.skipped.push(Skipped { position, reason: "empty id".into() });
        } else if !seen.insert(record.id.clone()) {
            self.skipped.push(Skipped { position, reason: format!("duplicate id `{}`", record.id) });
        } else {
            self.records.push(record);
        }
    }
}

/// Parses JSONL; blank lines are ignored, malformed or duplicate records skipped.
pub fn parse_jsonl(reader: impl BufRead) -> Result<ReadOutcome> {
    let mut out = ReadOutcome::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CorpusRecord>(&line) {
            Ok(r) => out.push(&mut seen, i + 1, r),
            Err(e) => out.skipped.push(Skipped { position: i + 1, reason: e.to_string() }),
        }
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<ReadOutcome> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

/// Reads a JSONL corpus, failing on the first malformed record.
pub fn read_jsonl_strict(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let outcome = read_jsonl(path)?;
    if let Some(s) = outcome.skipped.first() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: s.position,
            message: s.reason.clone(),
        });
    }
    Ok(outcome.records)
}

pub fn write_jsonl(writer: impl Write, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    write_jsonl(File::create(path)?, records)
}

/// Reads `<response id=".." label="0|1">payload</response>` elements anywhere
/// in the document. The payload's inner markup is kept raw and then cleaned
/// with [`strip_markup`].
pub fn parse_xml(xml: &str) -> Result<ReadOutcome> {
    let mut reader = Reader::from_str(xml);
    let mut out = ReadOutcome::default();
    let mut seen = HashSet::new();
    let mut ordinal = 0;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| Error::Format(format!("XML error at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(e) if e.name().as_ref() == b"response" => {
                ordinal += 1;
                let attrs = read_attrs(&e);
                let end = e.to_end().into_owned();
                let inner = reader
                    .read_text(end.name())
                    .map_err(|e| Error::Format(format!("XML error in response {ordinal}: {e}")))?;
                match attrs {
                    Ok((id, label)) => out.push(&mut seen, ordinal, CorpusRecord { id, text: strip_markup(&inner), label }),
                    Err(reason) => out.skipped.push(Skipped { position: ordinal, reason }),
                }
            }
            Event::Empty(e) if e.name().as_ref() == b"response" => {
                ordinal += 1;
                match read_attrs(&e) {
                    Ok((id, label)) => out.push(&mut seen, ordinal, CorpusRecord { id, text: String::new(), label }),
                    Err(reason) => out.skipped.push(Skipped { position: ordinal, reason }),
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

fn read_attrs(e: &quick_xml::events::BytesStart<'_>) -> std::result::Result<(String, Option<Label>), String> {
    let mut id = None;
    let mut label = None;
    for a in e.attributes() {
        let a = a.map_err(|e| e.to_string())?;
        let value = a.unescape_value().map_err(|e| e.to_string())?.into_owned();
        match a.key.as_ref() {
            b"id" => id = Some(value),
            b"label" => {
                let v: u8 = value.trim().parse().map_err(|_| format!("bad label `{value}`"))?;
                label = Some(Label::from_int(v).ok_or_else(|| format!("bad label `{value}`"))?);
            }
            _ => {}
        }
    }
    Ok((id.ok_or("missing id attribute")?, label))
}

pub fn read_xml(path: impl AsRef<Path>) -> Result<ReadOutcome> {
    parse_xml(&std::fs::read_to_string(path)?)
}

/// XML when the extension says so or the first non-blank byte is `<`.
pub fn read_any(path: impl AsRef<Path>) -> Result<ReadOutcome> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)?;
    let is_xml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) || raw.trim_start().starts_with('<');
    if is_xml {
        parse_xml(&raw)
    } else {
        parse_jsonl(raw.as_bytes())
    }
}

/// Lowercase hex SHA-256, used to fingerprint corpus files in manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
