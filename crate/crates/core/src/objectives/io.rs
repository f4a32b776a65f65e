//! Streaming readers for newline-delimited corpora and two-column
//! tab-separated classification files.
//!
//! Classification rows are `text<TAB>label`. Inside a field, `\t`, `\n` and
//! `\\` stand for a tab, a newline and a backslash. Blank lines and lines
//! starting with `#` are skipped in both formats.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Non-blank lines of a UTF-8 text file, read lazily.
pub fn read_lines(path: &Path) -> Result<impl Iterator<Item = Result<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let path = path.to_path_buf();
    Ok(BufReader::new(file).lines().filter_map(move |line| match line {
        Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
        Ok(l) => Some(Ok(l)),
        Err(e) => Some(Err(Error::io(&path, e))),
    }))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

/// `(text, label)` rows of a tab-separated file, read lazily.
pub fn read_labeled(path: &Path) -> Result<impl Iterator<Item = Result<LabeledText>>> {
    let path_buf: PathBuf = path.to_path_buf();
    Ok(read_lines(path)?
        .enumerate()
        .map(move |(i, line)| parse_row(&line?, &path_buf, i + 1)))
}

fn parse_row(line: &str, path: &Path, row: usize) -> Result<LabeledText> {
    let mut cols = line.split('\t');
    match (cols.next(), cols.next(), cols.next()) {
        (Some(text), Some(label), None) => Ok(LabeledText {
            text: unescape(text)?,
            label: unescape(label)?.trim().to_string(),
        }),
        _ => Err(Error::Config(format!(
            "{}: data row {row} must have exactly two tab-separated columns",
            path.display()
        ))),
    }
}

pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(field: &str) -> Result<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => {
                return Err(Error::Config(format!(
                    "invalid escape `\\{}` in `{field}`",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}
