//! Streaming JSONL input for corpus analysis.
//!
//! Reads one JSON document per line from plain, gzip (`.gz`), or zstd
//! (`.zst`/`.zstd`) files, and converts each document into section-tagged
//! [`CorpusDoc`]s via a configurable extractor. Undecodable lines (bad UTF-8
//! or bad JSON) are reported as skips, not errors: multi-gigabyte corpora
//! always contain a few.

use super::{CorpusDoc, CorpusError, Section};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

/// How to turn one raw JSON document into section-tagged posts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SectionExtractor {
    /// The whole `text_field` is one post with a fixed section.
    Whole { text_field: String, section: Section },
    /// `section_field` holds "question" / "answer" (anything else → other).
    Field {
        text_field: String,
        section_field: String,
    },
    /// The text interleaves posts introduced by lines starting with `Q:`
    /// or `A:` (Stack-Exchange-style dumps); each segment is one post.
    QaSplit { text_field: String },
}

impl Default for SectionExtractor {
    fn default() -> Self {
        SectionExtractor::QaSplit {
            text_field: "text".to_string(),
        }
    }
}

fn section_from_label(label: &str) -> Section {
    match label.to_ascii_lowercase().as_str() {
        "question" | "q" => Section::Question,
        "answer" | "a" => Section::Answer,
        _ => Section::Other,
    }
}

fn split_qa_text(text: &str) -> Vec<CorpusDoc> {
    let mut docs = Vec::new();
    let mut current_section: Option<Section> = None;
    let mut current = String::new();
    let mut flush = |section: Option<Section>, body: &mut String| {
        let trimmed = body.trim();
        if !trimmed.is_empty() {
            docs.push(CorpusDoc {
                text: trimmed.to_string(),
                section: section.unwrap_or(Section::Other),
            });
        }
        body.clear();
    };
    for line in text.lines() {
        let marker = if let Some(rest) = line.strip_prefix("Q:") {
            Some((Section::Question, rest))
        } else {
            line.strip_prefix("A:").map(|rest| (Section::Answer, rest))
        };
        match marker {
            Some((section, rest)) => {
                flush(current_section, &mut current);
                current_section = Some(section);
                current.push_str(rest);
                current.push('\n');
            }
            None => {
                current.push_str(line);
                current.push('\n');
            }
        }
    }
    flush(current_section, &mut current);
    docs
}

impl SectionExtractor {
    /// Extract posts from one parsed JSON document. `None` when the mapped
    /// text field is missing or not a string.
    pub fn extract(&self, value: &serde_json::Value) -> Option<Vec<CorpusDoc>> {
        match self {
            SectionExtractor::Whole {
                text_field,
                section,
            } => {
                let text = value.get(text_field)?.as_str()?;
                Some(vec![CorpusDoc {
                    text: text.to_string(),
                    section: *section,
                }])
            }
            SectionExtractor::Field {
                text_field,
                section_field,
            } => {
                let text = value.get(text_field)?.as_str()?;
                let section = value
                    .get(section_field)
                    .and_then(|v| v.as_str())
                    .map(section_from_label)
                    .unwrap_or(Section::Other);
                Some(vec![CorpusDoc {
                    text: text.to_string(),
                    section,
                }])
            }
            SectionExtractor::QaSplit { text_field } => {
                let text = value.get(text_field)?.as_str()?;
                Some(split_qa_text(text))
            }
        }
    }
}

/// Open a possibly-compressed file as a buffered reader, by extension.
pub fn open_text_reader(path: &Path) -> Result<Box<dyn BufRead + Send>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let reader: Box<dyn Read + Send> = match ext.as_str() {
        "gz" => Box::new(flate2::read::GzDecoder::new(file)),
        "zst" | "zstd" => Box::new(zstd::Decoder::new(file)?),
        _ => Box::new(file),
    };
    Ok(Box::new(BufReader::with_capacity(1 << 20, reader)))
}

/// Iterator over JSONL lines: `Ok(docs)` per decodable line, `Err(())`
/// (counted by callers as a skip) for bad UTF-8 / bad JSON / missing fields.
pub struct DocStream<R> {
    reader: R,
    extractor: SectionExtractor,
    buf: Vec<u8>,
}

impl<R: BufRead> DocStream<R> {
    pub fn new(reader: R, extractor: SectionExtractor) -> Self {
        DocStream {
            reader,
            extractor,
            buf: Vec::new(),
        }
    }
}

impl<R: BufRead> Iterator for DocStream<R> {
    /// `Err(io)` aborts iteration at the caller's discretion; `Ok(None)`
    /// means "line skipped".
    type Item = Result<Option<Vec<CorpusDoc>>, std::io::Error>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                let parsed = std::str::from_utf8(&self.buf)
                    .ok()
                    .filter(|line| !line.trim().is_empty())
                    .and_then(|line| serde_json::from_str::<serde_json::Value>(line).ok())
                    .and_then(|value| self.extractor.extract(&value));
                if self.buf.iter().all(|b| b.is_ascii_whitespace()) {
                    // blank line: neither document nor skip
                    return self.next();
                }
                Some(Ok(parsed))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

/// Open a JSONL corpus file as a document stream.
pub fn stream_path(
    path: &Path,
    extractor: SectionExtractor,
) -> Result<DocStream<Box<dyn BufRead + Send>>, CorpusError> {
    Ok(DocStream::new(open_text_reader(path)?, extractor))
}
