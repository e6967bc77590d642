//! Parsing of list flags and weight files.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub fn read_file(path: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))
}

/// Splits on commas and whitespace, dropping empty fields.
fn fields(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty())
}

pub fn parse_row<T: FromStr>(line: &str) -> Result<Vec<T>, CliError> {
    fields(line)
        .map(|f| f.parse::<T>().map_err(|_| CliError::Parse(format!("not a number: {f:?}"))))
        .collect()
}

/// An inline vector such as `"3,1"`, or the path of a file holding one.
pub fn vector_arg(arg: &str) -> Result<Vec<f64>, CliError> {
    let text = if Path::new(arg).is_file() { read_file(arg)? } else { arg.to_string() };
    let v: Vec<f64> = parse_row(&text)?;
    if v.is_empty() {
        return Err(CliError::Parse("empty weight vector".into()));
    }
    Ok(v)
}

/// One integer channel per non-empty line; `#` starts a comment.
pub fn integer_channels(text: &str) -> Result<Vec<Vec<i64>>, CliError> {
    let channels: Vec<Vec<i64>> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_row)
        .collect::<Result<_, _>>()?;
    if channels.is_empty() {
        return Err(CliError::Parse("no channels in input".into()));
    }
    Ok(channels)
}

/// Comma-separated integers and inclusive ranges: `"0-3,7"` is `[0, 1, 2, 3, 7]`.
pub fn int_list(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = |f: &str| CliError::Usage(format!("bad list element {f:?}"));
    let mut out = Vec::new();
    for f in fields(s) {
        match f.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad(f))?, b.parse().map_err(|_| bad(f))?);
                if a > b {
                    return Err(bad(f));
                }
                out.extend(a..=b);
            }
            None => out.push(f.parse().map_err(|_| bad(f))?),
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("empty list {s:?}")));
    }
    Ok(out)
}

pub fn u32_list(s: &str) -> Result<Vec<u32>, CliError> {
    int_list(s)?
        .into_iter()
        .map(|x| u32::try_from(x).map_err(|_| CliError::Usage(format!("{x} is out of range"))))
        .collect()
}

/// Accumulator widths; `auto` expands to `P*` down to `P* - 10`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccList {
    Auto,
    Fixed(Vec<u32>),
}

pub fn acc_list(s: &str) -> Result<AccList, CliError> {
    if s.trim().eq_ignore_ascii_case("auto") {
        Ok(AccList::Auto)
    } else {
        u32_list(s).map(AccList::Fixed)
    }
}
