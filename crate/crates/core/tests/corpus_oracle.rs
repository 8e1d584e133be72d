//! Streaming corpus statistics checked against a naive character-scan oracle
//! over a ~10 MB synthetic JSONL corpus: pattern counts, the percentage
//! histogram, undecodable-line accounting, and shard-split/merge equivalence.

use epiprobe_core::corpus::{
    count_docs, count_docs_seq, count_jsonl_path, pct_histogram_jsonl_path, CorpusDoc,
    CountReport, PatternMatcher, PctHistogram, Section, SectionExtractor,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::time::Instant;

const PATTERNS: [&str; 5] = ["i think", "i'm sure", "it could be", "maybe", "so so"];

const FRAGMENTS: [&str; 20] = [
    "i think the answer is forty two",
    "I THINK therefore I am",
    "i\u{2019}m sure it works",
    "i'm sure of it",
    "it could be worse",
    "maybe",
    "(maybe)",
    "maybelline is a brand",
    "rethink your thinking habits",
    "so so",
    "so so so",
    "just plain words with no markers at all",
    "numbers like 90% sure and 100% done",
    "css style width:100% and height:50%",
    "overrange 350% happens sometimes",
    "tiny 0% and padded 007% runs",
    "percent sign alone % and x% after letter",
    "a 12345678901234567890123456789% giant run",
    "unicode \u{e9}lan vital",
    "I\u{2019}M SURE and it could be that maybe",
];

const SECTION_LABELS: [Option<&str>; 6] = [
    Some("question"),
    Some("answer"),
    Some("q"),
    Some("a"),
    Some("comment"),
    None,
];

fn oracle_section(label: Option<&str>) -> Section {
    match label {
        Some("question") | Some("q") => Section::Question,
        Some("answer") | Some("a") => Section::Answer,
        _ => Section::Other,
    }
}

/// Quote folding + lowercasing, matching the documented canonical form.
fn oracle_fold(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\u{2018}' | '\u{2019}' => out.push('\''),
            _ => out.extend(ch.to_lowercase()),
        }
    }
    out
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Greedy leftmost non-overlapping occurrences of `pat` in `text` with word
/// boundaries on both sides, by direct window comparison.
fn naive_count(text: &[char], pat: &[char]) -> u64 {
    let mut count = 0;
    let mut i = 0;
    while i + pat.len() <= text.len() {
        if text[i..i + pat.len()] == *pat {
            let left_ok = i == 0 || !is_word(text[i - 1]);
            let right_ok = i + pat.len() == text.len() || !is_word(text[i + pat.len()]);
            if left_ok && right_ok {
                count += 1;
                i += pat.len();
                continue;
            }
        }
        i += 1;
    }
    count
}

/// Forward scan for maximal digit runs followed by '%'.
fn naive_pct(text: &str, css_filter: bool, hist: &mut PctHistogram) {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'%' {
                let colon_before = start > 0 && bytes[start - 1] == b':';
                if !(css_filter && colon_before) {
                    match text[start..i].parse::<u64>() {
                        Ok(v) if v <= 100 => hist.bins[v as usize] += 1,
                        _ => hist.out_of_range += 1,
                    }
                }
                i += 1;
            }
        } else {
            i += 1;
        }
    }
}

struct SyntheticCorpus {
    path: std::path::PathBuf,
    _dir: tempfile::TempDir,
    /// (text, section) for every decodable document, in file order.
    docs: Vec<(String, Section)>,
    bad_lines: u64,
}

/// Write ≥ 10 MB of field-tagged JSONL with planted markers, percentages,
/// and (every 97th line) an undecodable line.
fn generate_corpus(seed: u64) -> SyntheticCorpus {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("synthetic.jsonl");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path).expect("create"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut bad_lines = 0;
    let mut bytes_written = 0usize;
    let mut line_no = 0usize;
    while bytes_written < 10 * 1024 * 1024 {
        line_no += 1;
        if line_no % 97 == 0 {
            let bad: &[u8] = match line_no % 3 {
                0 => b"{\"no_text_field\": 1}\n",
                1 => b"this line is not json\n",
                _ => b"\xff\xfe broken utf8 {\"text\": \"x\"}\n",
            };
            file.write_all(bad).expect("write");
            bytes_written += bad.len();
            bad_lines += 1;
            continue;
        }
        let n_fragments = rng.random_range(5..=30);
        let text = (0..n_fragments)
            .map(|_| FRAGMENTS[rng.random_range(0..FRAGMENTS.len())])
            .collect::<Vec<_>>()
            .join(" ");
        let label = SECTION_LABELS[rng.random_range(0..SECTION_LABELS.len())];
        let line = match label {
            Some(l) => serde_json::json!({ "text": text, "section": l }).to_string(),
            None => serde_json::json!({ "text": text }).to_string(),
        };
        file.write_all(line.as_bytes()).expect("write");
        file.write_all(b"\n").expect("write");
        bytes_written += line.len() + 1;
        docs.push((text, oracle_section(label)));
    }
    file.flush().expect("flush");
    SyntheticCorpus {
        path,
        _dir: dir,
        docs,
        bad_lines,
    }
}

fn field_extractor() -> SectionExtractor {
    SectionExtractor::Field {
        text_field: "text".to_string(),
        section_field: "section".to_string(),
    }
}

#[test]
fn streaming_counts_match_naive_charscan_oracle_on_10mb_corpus() {
    let started = Instant::now();
    let corpus = generate_corpus(0xC0DE);
    let matcher = PatternMatcher::new(&PATTERNS).expect("patterns");

    // oracle pass
    let pats: Vec<Vec<char>> = PATTERNS.iter().map(|p| p.chars().collect()).collect();
    let mut expected = CountReport::empty(matcher.patterns());
    let mut expected_hist = PctHistogram::default();
    for (text, section) in &corpus.docs {
        let sec = section.index();
        expected.totals[sec].posts += 1;
        expected.totals[sec].words += text.split_whitespace().count() as u64;
        let folded = oracle_fold(text);
        for (pattern, pat_chars) in PATTERNS.iter().zip(&pats) {
            let n = naive_count(&folded, pat_chars);
            if n > 0 {
                let cell = &mut expected.counts.get_mut(*pattern).expect("seeded")[sec];
                cell.instances += n;
                cell.docs_with_match += 1;
            }
        }
        naive_pct(text, true, &mut expected_hist);
    }
    expected.skipped_docs = corpus.bad_lines;

    // library streaming pass
    let got = count_jsonl_path(&corpus.path, field_extractor(), &matcher).expect("count");
    assert_eq!(got, expected, "pattern counts diverge from naive oracle");
    assert!(
        expected.instances("i think", Section::Question) > 0
            && expected.instances("so so", Section::Answer) > 0,
        "generator should plant matches in tagged sections"
    );

    let got_hist = pct_histogram_jsonl_path(&corpus.path, field_extractor(), true).expect("hist");
    assert_eq!(got_hist, expected_hist, "histogram diverges from naive oracle");
    assert!(expected_hist.out_of_range > 0 && expected_hist.bins[90] > 0);

    // without the markup filter, width:100% style runs are counted too
    let unfiltered =
        pct_histogram_jsonl_path(&corpus.path, field_extractor(), false).expect("hist");
    let mut expected_unfiltered = PctHistogram::default();
    for (text, _) in &corpus.docs {
        naive_pct(text, false, &mut expected_unfiltered);
    }
    assert_eq!(unfiltered, expected_unfiltered);
    assert!(unfiltered.bins[100] > expected_hist.bins[100]);

    assert!(
        started.elapsed().as_secs() < 30,
        "oracle comparison should finish within 30 seconds"
    );
}

#[test]
fn shard_split_merge_equals_single_pass() {
    let corpus = generate_corpus(0x5EED);
    let matcher = PatternMatcher::new(&PATTERNS).expect("patterns");
    let docs: Vec<CorpusDoc> = corpus
        .docs
        .iter()
        .map(|(text, section)| CorpusDoc {
            text: text.clone(),
            section: *section,
        })
        .collect();

    let single = count_docs_seq(&docs, &matcher);
    // seven deliberately uneven shards
    let mut merged = CountReport::empty(matcher.patterns());
    let mut start = 0;
    for k in 0..7 {
        let end = if k == 6 {
            docs.len()
        } else {
            start + docs.len() / 9 + k * 1000
        };
        let end = end.min(docs.len());
        merged.merge(&count_docs(&docs[start..end], &matcher));
        start = end;
    }
    assert_eq!(start, docs.len(), "shards must cover every document");
    assert_eq!(merged, single, "merged shard counts must equal single pass");

    let streamed = count_jsonl_path(&corpus.path, field_extractor(), &matcher).expect("count");
    assert_eq!(streamed.counts, single.counts);
    assert_eq!(streamed.totals, single.totals);
    assert_eq!(streamed.skipped_docs, corpus.bad_lines);
}
