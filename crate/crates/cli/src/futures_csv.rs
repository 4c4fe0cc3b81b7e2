//! Futures quotes as CSV: header `date,ttm_years,price`, one row per
//! (date, maturity), ISO-8601 dates. Dates may quote different maturities.
//! Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use feedrisk_core::calibration::{FuturesPanel, PanelDate, Quote};

use crate::error::{CliError, Result};

pub const HEADER: [&str; 3] = ["date", "ttm_years", "price"];
const DAYS_PER_YEAR: f64 = 365.25;

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Parses quotes from CSV text. `path` only labels error messages.
pub fn parse_futures_csv(text: &str, path: &Path) -> Result<FuturesPanel> {
    let err = |line: u64, message: String| CliError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    // the reader's own line count skips blank lines, and a record's offset
    // may point at the blank lines before it
    let line_at = |pos: Option<&csv::Position>| {
        pos.map_or(0, |p| {
            let bytes = text.as_bytes();
            let mut at = (p.byte() as usize).min(bytes.len());
            while at < bytes.len() && matches!(bytes[at], b'\n' | b'\r') {
                at += 1;
            }
            bytes[..at].iter().filter(|&&b| b == b'\n').count() as u64 + 1
        })
    };
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let header_line = line_at(header.position()).max(1);
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(err(
            header_line,
            format!(
                "expected header '{}', got '{}'",
                HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut by_date: BTreeMap<NaiveDate, Vec<(f64, f64, u64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(line_at(e.position()), e.to_string()))?;
        let line = line_at(record.position());
        let date =
            parse_date(&record[0]).ok_or_else(|| err(line, format!("date '{}' is not YYYY-MM-DD", &record[0])))?;
        let ttm: f64 = record[1]
            .parse()
            .map_err(|_| err(line, format!("ttm_years '{}' is not a number", &record[1])))?;
        if !ttm.is_finite() || ttm < 0.0 {
            return Err(err(line, format!("ttm_years must be finite and >= 0, got {ttm}")));
        }
        let price: f64 = record[2]
            .parse()
            .map_err(|_| err(line, format!("price '{}' is not a number", &record[2])))?;
        if !price.is_finite() || price <= 0.0 {
            return Err(err(line, format!("price must be finite and > 0, got {price}")));
        }
        let quotes = by_date.entry(date).or_default();
        if let Some(&(_, _, first)) = quotes.iter().find(|q| q.0 == ttm) {
            return Err(err(
                line,
                format!("duplicate maturity {ttm} on {date} (first on line {first})"),
            ));
        }
        quotes.push((ttm, price, line));
    }
    let first = *by_date
        .keys()
        .next()
        .ok_or_else(|| err(header_line, "no quotes".into()))?;
    let dates = by_date
        .into_iter()
        .map(|(date, mut quotes)| {
            quotes.sort_by(|a, b| a.0.total_cmp(&b.0));
            PanelDate {
                time: (date - first).num_days() as f64 / DAYS_PER_YEAR,
                label: Some(date.format("%Y-%m-%d").to_string()),
                quotes: quotes.into_iter().map(|(ttm, price, _)| Quote { ttm, price }).collect(),
            }
        })
        .collect();
    Ok(FuturesPanel::new(dates)?)
}

pub fn read_futures_csv(path: &Path) -> Result<FuturesPanel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_futures_csv(&text, path)
}

/// Renders a panel whose dates carry ISO labels.
pub fn futures_csv(panel: &FuturesPanel) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    w.write_record(HEADER).map_err(csv_err)?;
    for d in panel.dates() {
        let label = d
            .label
            .as_deref()
            .filter(|l| parse_date(l).is_some())
            .ok_or_else(|| CliError::Usage(format!("panel date at t = {} has no ISO label", d.time)))?;
        for q in &d.quotes {
            w.write_record([label.to_string(), q.ttm.to_string(), q.price.to_string()])
                .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Labels panel dates with consecutive weekdays from `start`.
pub fn label_weekdays(panel: &FuturesPanel, start: NaiveDate) -> Result<FuturesPanel> {
    use chrono::{Datelike, Weekday};
    let mut day = start;
    let mut dates = Vec::with_capacity(panel.len());
    for d in panel.dates() {
        while matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            day = day.succ_opt().expect("date in range");
        }
        dates.push(PanelDate {
            time: (day - start).num_days() as f64 / DAYS_PER_YEAR,
            label: Some(day.format("%Y-%m-%d").to_string()),
            quotes: d.quotes.clone(),
        });
        day = day.succ_opt().expect("date in range");
    }
    Ok(FuturesPanel::new(dates)?)
}
