use std::path::Path;

use crate::error::{Error, Result};

/// One rating event from an interaction log.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingRecord {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
    pub timestamp: i64,
}

/// Parses `user, item, rating, timestamp` lines. With `delimiter = None`
/// each line is split on `::` if present, else on tabs. Blank lines are
/// skipped. Output is grouped by ascending user and ordered by timestamp
/// within a user (stable for equal timestamps).
pub fn parse_interactions_str(text: &str, delimiter: Option<&str>) -> Result<Vec<RatingRecord>> {
    let mut records = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let fields: Vec<&str> = match delimiter {
            Some(d) => line.split(d).collect(),
            None if line.contains("::") => line.split("::").collect(),
            None => line.split('\t').collect(),
        };
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let field = |i: usize, what: &str| -> Result<&str> {
            let f = fields[i].trim();
            if f.is_empty() {
                Err(Error::Parse {
                    line: line_no,
                    message: format!("empty {what} field"),
                })
            } else {
                Ok(f)
            }
        };
        let bad = |what: &str, value: &str| Error::Parse {
            line: line_no,
            message: format!("non-numeric {what} `{value}`"),
        };
        let user = field(0, "user")?;
        let item = field(1, "item")?;
        let rating = field(2, "rating")?;
        let timestamp = field(3, "timestamp")?;
        let rating_value: f64 = rating.parse().map_err(|_| bad("rating", rating))?;
        if !rating_value.is_finite() {
            return Err(bad("rating", rating));
        }
        records.push(RatingRecord {
            user: user.parse().map_err(|_| bad("user", user))?,
            item: item.parse().map_err(|_| bad("item", item))?,
            rating: rating_value,
            timestamp: timestamp.parse().map_err(|_| bad("timestamp", timestamp))?,
        });
    }
    if records.is_empty() {
        log::warn!("interaction log contains no records");
    }
    records.sort_by_key(|r| (r.user, r.timestamp));
    Ok(records)
}

pub fn parse_interactions(path: &Path, delimiter: Option<&str>) -> Result<Vec<RatingRecord>> {
    let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
    parse_interactions_str(&text, delimiter)
}

/// Writes records as `user<d>item<d>rating<d>timestamp` lines. Integral
/// ratings are written without a fractional part.
pub fn write_interactions(path: &Path, records: &[RatingRecord], delimiter: &str) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let rating = if r.rating.fract() == 0.0 {
            format!("{}", r.rating as i64)
        } else {
            format!("{}", r.rating)
        };
        out.push_str(&format!("{}{d}{}{d}{}{d}{}\n", r.user, r.item, rating, r.timestamp, d = delimiter));
    }
    std::fs::write(path, out).map_err(Error::file(path))?;
    Ok(())
}
