//! Pair files: the per-reference source rankings, one reference per record.
//! First line is the number of records; each record is a reference id line
//! followed by a line holding the source count and (id, score) pairs.

use crate::error::{Error, Result};
use crate::view_selection::ViewRanking;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn write_pair_file(rankings: &[ViewRanking]) -> String {
    let mut out = rankings.len().to_string();
    out.push('\n');
    for r in rankings {
        out.push_str(&r.reference.to_string());
        out.push('\n');
        out.push_str(&r.sources.len().to_string());
        for (id, score) in &r.sources {
            out.push(' ');
            out.push_str(&id.to_string());
            out.push(' ');
            out.push_str(&score.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn parse_pair_file(text: &str) -> Result<Vec<ViewRanking>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let total_lines = text.lines().count();
    let mut next_content = |what: &str| -> Result<(usize, &str)> {
        for (no, line) in lines.by_ref() {
            if !line.is_empty() {
                return Ok((no, line));
            }
        }
        Err(parse_err(total_lines + 1, format!("missing {what}")))
    };
    let (no, first) = next_content("record count")?;
    let count: usize = first
        .parse()
        .map_err(|_| parse_err(no, format!("expected record count, got '{first}'")))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (no, id_line) = next_content("reference id")?;
        let reference: usize = id_line
            .parse()
            .map_err(|_| parse_err(no, format!("expected reference id, got '{id_line}'")))?;
        let (no, src_line) = next_content("source list")?;
        let mut toks = src_line.split_whitespace();
        let n: usize = toks
            .next()
            .expect("content lines are non-empty")
            .parse()
            .map_err(|_| parse_err(no, format!("expected source count, got '{src_line}'")))?;
        let mut sources = Vec::with_capacity(n);
        for k in 0..n {
            let id: usize = toks
                .next()
                .ok_or_else(|| parse_err(no, format!("source {k} missing its id")))?
                .parse()
                .map_err(|_| parse_err(no, format!("bad id for source {k}")))?;
            let score: f64 = toks
                .next()
                .ok_or_else(|| parse_err(no, format!("source {id} missing its score")))?
                .parse()
                .map_err(|_| parse_err(no, format!("bad score for source {id}")))?;
            if !score.is_finite() {
                return Err(parse_err(no, format!("non-finite score for source {id}")));
            }
            sources.push((id, score));
        }
        if toks.next().is_some() {
            return Err(parse_err(no, "trailing tokens after the declared sources"));
        }
        out.push(ViewRanking { reference, sources });
    }
    if let Some((no, line)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(parse_err(no, format!("unexpected trailing content '{line}'")));
    }
    Ok(out)
}
