//! Answer parsing, accuracy reports and side-by-side comparisons.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetFamily, Manifest, QuestionType};
use crate::inference::{InferenceRecord, RecordStatus};
use crate::letter::OptionLetter;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no option letter found in response {0:?}")]
pub struct ParseError(pub String);

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("records and manifest disagree: {missing} qid(s) without a record, {extra} record(s) for unknown qids (e.g. {example:?})")]
    QidMismatch {
        missing: usize,
        extra: usize,
        example: String,
    },
    #[error("reports have incompatible columns: {0}")]
    IncompatibleColumns(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Extracts the chosen option letter from a raw model response.
///
/// Rules, in order:
/// 1. the first character after trimming whitespace and quotes is a letter
///    in play, followed by end of text, `.`, `)`, `:` or whitespace;
/// 2. the first `(X)` or `X.` on the first line with `X` in play (`X.` must
///    not continue a word);
/// 3. exactly one option's full text matches the response, case-insensitively:
///    equal to it, or failing that, contained in it.
pub fn parse_letter(
    raw: &str,
    letters_in_play: &[OptionLetter],
    options: &[String],
) -> Result<OptionLetter, ParseError> {
    let in_play = |c: char| OptionLetter::from_char(c).filter(|l| letters_in_play.contains(l));
    let trimmed = raw.trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c));

    let mut chars = trimmed.chars();
    if let Some(letter) = chars.next().and_then(in_play) {
        match chars.next() {
            None | Some('.' | ')' | ':') => return Ok(letter),
            Some(c) if c.is_whitespace() => return Ok(letter),
            _ => {}
        }
    }

    let first_line: Vec<char> = trimmed.lines().next().unwrap_or("").chars().collect();
    for i in 0..first_line.len() {
        let c = first_line[i];
        if c == '(' && i + 2 < first_line.len() && first_line[i + 2] == ')' {
            if let Some(letter) = in_play(first_line[i + 1]) {
                return Ok(letter);
            }
        }
        if let Some(letter) = in_play(c) {
            let starts_word = i == 0 || !first_line[i - 1].is_alphanumeric();
            if starts_word && first_line.get(i + 1) == Some(&'.') {
                return Ok(letter);
            }
        }
    }

    let norm = |s: &str| {
        s.trim()
            .trim_matches(|c: char| QUOTES.contains(&c))
            .trim_end_matches(['.', '!'])
            .trim()
            .to_lowercase()
    };
    let response = norm(trimmed);
    let candidates: Vec<(OptionLetter, String)> = letters_in_play
        .iter()
        .filter_map(|&l| options.get(l.index()).map(|o| (l, norm(o))))
        .filter(|(_, o)| !o.is_empty())
        .collect();
    let unique = |hits: Vec<OptionLetter>| (hits.len() == 1).then(|| hits[0]);
    let equal = candidates
        .iter()
        .filter(|(_, o)| *o == response)
        .map(|(l, _)| *l)
        .collect();
    if let Some(l) = unique(equal) {
        return Ok(l);
    }
    let contained = candidates
        .iter()
        .filter(|(_, o)| response.contains(o.as_str()))
        .map(|(l, _)| *l)
        .collect();
    unique(contained).ok_or_else(|| ParseError(raw.to_string()))
}

/// A correct/total count. Accuracy is kept as the exact fraction and
/// rendered as a percentage to one decimal, rounding half up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "TallyRepr", try_from = "TallyRepr")]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
}

impl Tally {
    /// Accuracy in tenths of a percent, `None` for an empty tally.
    pub fn tenths(&self) -> Option<i64> {
        (self.total > 0).then(|| ((2000 * self.correct as u128 + self.total as u128) / (2 * self.total as u128)) as i64)
    }

    pub fn percent(&self) -> String {
        self.tenths().map(format_tenths).unwrap_or_else(|| "-".into())
    }

    pub fn fraction(&self) -> String {
        format!("{}/{}", self.correct, self.total)
    }

    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as u64;
    }
}

#[derive(Serialize, Deserialize)]
struct TallyRepr {
    correct: u64,
    total: u64,
    fraction: String,
    percent: String,
}

impl From<Tally> for TallyRepr {
    fn from(t: Tally) -> Self {
        Self {
            correct: t.correct,
            total: t.total,
            fraction: t.fraction(),
            percent: t.percent(),
        }
    }
}

impl TryFrom<TallyRepr> for Tally {
    type Error = String;

    fn try_from(r: TallyRepr) -> Result<Self, Self::Error> {
        if r.correct > r.total {
            return Err(format!("correct {} exceeds total {}", r.correct, r.total));
        }
        Ok(Tally {
            correct: r.correct,
            total: r.total,
        })
    }
}

fn format_tenths(t: i64) -> String {
    format!("{}{}.{}", if t < 0 { "-" } else { "" }, t.abs() / 10, t.abs() % 10)
}

fn format_delta(t: i64) -> String {
    if t > 0 {
        format!("+{}", format_tenths(t))
    } else {
        format_tenths(t)
    }
}

/// Per-type and overall accuracy of one evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: DatasetFamily,
    pub columns: Vec<QuestionType>,
    pub per_type: BTreeMap<QuestionType, Tally>,
    pub overall: Tally,
    pub parse_error_count: u64,
    pub transport_error_count: u64,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Column headings, ending in `Tot.`.
    pub fn headings(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|t| t.abbrev().to_string())
            .chain(std::iter::once("Tot.".to_string()))
            .collect()
    }

    fn column_tallies(&self) -> Vec<Tally> {
        self.columns
            .iter()
            .map(|t| self.per_type.get(t).copied().unwrap_or_default())
            .chain(std::iter::once(self.overall))
            .collect()
    }

    /// One-row text table.
    pub fn render(&self, label: &str) -> String {
        let cells: Vec<String> = self.column_tallies().iter().map(Tally::percent).collect();
        render_table("Model", &self.headings(), &[(label.to_string(), cells)])
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ScoringError> {
        std::fs::write(path, self.to_json()).map_err(|e| ScoringError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let io = |message: String| ScoringError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// Scores records against the manifest's gold answers. Records with a
/// parse or transport error count as incorrect.
pub fn score(
    records: &[InferenceRecord],
    manifest: &Manifest,
    config_fingerprint: &str,
) -> Result<EvalReport, ScoringError> {
    let by_qid: HashMap<&str, &InferenceRecord> = records.iter().map(|r| (r.qid.as_str(), r)).collect();
    let known: HashSet<&str> = manifest.items.iter().map(|i| i.qid.as_str()).collect();
    let missing: Vec<&str> = manifest
        .items
        .iter()
        .map(|i| i.qid.as_str())
        .filter(|q| !by_qid.contains_key(q))
        .collect();
    let extra: Vec<&str> = records
        .iter()
        .map(|r| r.qid.as_str())
        .filter(|q| !known.contains(q))
        .collect();
    if !missing.is_empty() || !extra.is_empty() || by_qid.len() != records.len() {
        return Err(ScoringError::QidMismatch {
            missing: missing.len(),
            extra: extra.len() + (records.len() - by_qid.len()),
            example: missing
                .first()
                .or(extra.first())
                .unwrap_or(&"duplicate record")
                .to_string(),
        });
    }

    let family = manifest.family();
    let mut per_type: BTreeMap<QuestionType, Tally> = BTreeMap::new();
    let mut overall = Tally::default();
    let (mut parse_errors, mut transport_errors) = (0, 0);
    for item in &manifest.items {
        let record = by_qid[item.qid.as_str()];
        match record.status {
            RecordStatus::ParseError => parse_errors += 1,
            RecordStatus::TransportError => transport_errors += 1,
            RecordStatus::Ok => {}
        }
        let correct = record.status == RecordStatus::Ok && record.parsed.map(|l| l.index()) == Some(item.answer_idx);
        per_type.entry(item.qtype).or_default().add(correct);
        overall.add(correct);
    }
    let columns = match family.columns() {
        Some(cols) => cols.to_vec(),
        None => per_type.keys().copied().collect(),
    };
    Ok(EvalReport {
        family,
        columns,
        per_type,
        overall,
        parse_error_count: parse_errors,
        transport_error_count: transport_errors,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// Several reports side by side, with per-column bests and deltas against
/// the first row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub headings: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonRow {
    pub label: String,
    /// Accuracy per column in tenths of a percent.
    pub values: Vec<Option<i64>>,
    /// Difference to the first row, in tenths of a percent.
    pub deltas: Vec<Option<i64>>,
}

pub fn compare(reports: &[(String, EvalReport)]) -> Result<Comparison, ScoringError> {
    if reports.len() < 2 {
        return Err(ScoringError::InvalidArgument(
            "compare needs at least two reports".into(),
        ));
    }
    let headings = reports[0].1.headings();
    if let Some((label, _)) = reports.iter().find(|(_, r)| r.headings() != headings) {
        return Err(ScoringError::IncompatibleColumns(format!(
            "{label:?} does not have columns {}",
            headings.join(" ")
        )));
    }
    Ok(comparison_of(reports, headings))
}

fn comparison_of(reports: &[(String, EvalReport)], headings: Vec<String>) -> Comparison {
    let values: Vec<Vec<Option<i64>>> = reports
        .iter()
        .map(|(_, r)| r.column_tallies().iter().map(Tally::tenths).collect())
        .collect();
    let base = values[0].clone();
    let rows = reports
        .iter()
        .zip(values)
        .map(|((label, _), values)| ComparisonRow {
            label: label.clone(),
            deltas: values.iter().zip(&base).map(|(v, b)| Some((*v)? - (*b)?)).collect(),
            values,
        })
        .collect();
    Comparison { headings, rows }
}

impl Comparison {
    /// Accuracy table with each column's best value starred, followed by a
    /// delta table against the first row when there is more than one row.
    pub fn render(&self) -> String {
        let n_cols = self.headings.len();
        let best: Vec<Option<i64>> = (0..n_cols)
            .map(|c| self.rows.iter().filter_map(|r| r.values[c]).max())
            .collect();
        let star = self.rows.len() > 1;
        let rows: Vec<(String, Vec<String>)> = self
            .rows
            .iter()
            .map(|r| {
                let cells = r
                    .values
                    .iter()
                    .zip(&best)
                    .map(|(v, b)| match v {
                        Some(v) if star && Some(*v) == *b => format!("{}*", format_tenths(*v)),
                        Some(v) => format_tenths(*v),
                        None => "-".into(),
                    })
                    .collect();
                (r.label.clone(), cells)
            })
            .collect();
        let mut out = render_table("Model", &self.headings, &rows);
        if self.rows.len() > 1 {
            let deltas: Vec<(String, Vec<String>)> = self.rows[1..]
                .iter()
                .map(|r| {
                    let cells = r
                        .deltas
                        .iter()
                        .map(|d| d.map(format_delta).unwrap_or_else(|| "-".into()))
                        .collect();
                    (r.label.clone(), cells)
                })
                .collect();
            out.push('\n');
            out.push_str(&render_table(
                &format!("Delta vs {}", self.rows[0].label),
                &self.headings,
                &deltas,
            ));
        }
        out
    }
}

/// Row label for an `n × n` grid: `1-frame`, `9-frames`, `16-frames`, ...
pub fn frames_label(grid_side: u32) -> String {
    let frames = grid_side * grid_side;
    if frames == 1 {
        "1-frame".to_string()
    } else {
        format!("{frames}-frames")
    }
}

/// Grid-size ablation table: one row per grid side, labelled by frame count.
pub fn ablation_table(results: &[(u32, EvalReport)]) -> Result<Comparison, ScoringError> {
    if results.is_empty() {
        return Err(ScoringError::InvalidArgument("no ablation results".into()));
    }
    let labelled: Vec<(String, EvalReport)> = results.iter().map(|(n, r)| (frames_label(*n), r.clone())).collect();
    let headings = labelled[0].1.headings();
    if labelled.iter().any(|(_, r)| r.headings() != headings) {
        return Err(ScoringError::IncompatibleColumns(
            "ablation runs disagree on columns".into(),
        ));
    }
    Ok(comparison_of(&labelled, headings))
}

/// Left-aligned label column, right-aligned value columns, two-space gaps.
fn render_table(corner: &str, headings: &[String], rows: &[(String, Vec<String>)]) -> String {
    let label_w = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([corner.chars().count()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = headings
        .iter()
        .enumerate()
        .map(|(c, h)| {
            rows.iter()
                .map(|(_, cells)| cells[c].chars().count())
                .chain([h.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let mut line = |label: &str, cells: &[String]| {
        let mut s = format!("{label:<label_w$}");
        for (cell, w) in cells.iter().zip(&widths) {
            write!(s, "  {cell:>w$}").unwrap();
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(corner, headings);
    for (label, cells) in rows {
        line(label, cells);
    }
    out
}
