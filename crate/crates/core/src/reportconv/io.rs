//! JSONL batch conversion: `{"id","text"}` lines in, `{"id","labels","bits"}` out.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::labelkit::LabelVocabulary;

use super::{convert, Report, RuleSet};

#[derive(Debug, Clone, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: String,
    pub labels: Vec<String>,
    pub bits: Vec<u8>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct BatchSummary {
    pub converted: usize,
    /// (1-based line number, message)
    pub failed: Vec<(usize, String)>,
    /// Lines whose text exceeded the maximum length and was cut.
    pub truncated: usize,
}

/// Converts every line of `input`. Bad lines are recorded and skipped;
/// only I/O errors abort.
pub fn convert_jsonl<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    rules: &RuleSet,
    vocab: &LabelVocabulary,
) -> Result<BatchSummary> {
    let mut summary = BatchSummary::default();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InputRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                summary.failed.push((lineno, e.to_string()));
                continue;
            }
        };
        if rec.text.chars().count() > rules.max_length() {
            summary.truncated += 1;
        }
        let report = Report::truncated(rec.id, &rec.text, rules.max_length());
        match convert(&report, rules, vocab) {
            Ok(label) => {
                let out = OutputRecord {
                    id: report.id,
                    labels: vocab.names_of(&label).into_iter().map(String::from).collect(),
                    bits: label.as_u8(),
                };
                serde_json::to_writer(&mut output, &out)?;
                output.write_all(b"\n")?;
                summary.converted += 1;
            }
            Err(e) => summary.failed.push((lineno, e.to_string())),
        }
    }
    output.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_lines() {
        let v = LabelVocabulary::default_33();
        let r = RuleSet::bundled(&v).unwrap();
        let input = "{\"id\":\"a\",\"text\":\"糖网\"}\nnot json\n\n{\"id\":\"b\"}\n{\"id\":\"c\",\"text\":\"\"}\n";
        let mut out = Vec::new();
        let s = convert_jsonl(input.as_bytes(), &mut out, &r, &v).unwrap();
        assert_eq!(s.converted, 2);
        assert_eq!(s.failed.iter().map(|f| f.0).collect::<Vec<_>>(), [2, 4]);
        let lines: Vec<OutputRecord> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0].labels, ["diabetic retinopathy"]);
        assert_eq!(lines[0].bits.len(), 33);
        assert_eq!(lines[1].labels, ["others"]);
    }
}
