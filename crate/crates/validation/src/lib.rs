//! Readers for the CSV files the simulator writes, used by the end-to-end
//! acceptance checks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

/// The subset of `traces.csv` columns the checks need.
#[derive(Debug, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    pub time: f64,
    pub name: String,
    pub v: f64,
    pub v_ref: f64,
    pub x: f64,
    pub y: f64,
    pub bids: String,
}

impl TraceRow {
    /// Bid for collision point `point`, if the row carries one.
    pub fn bid_at(&self, point: u8) -> Option<f64> {
        self.bids.split(';').find_map(|pair| {
            let (p, b) = pair.split_once(':')?;
            if p.parse::<u8>().ok()? == point {
                b.parse().ok()
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Deserialize)]
pub struct EventRow {
    pub time: f64,
    pub name: String,
    pub point: u8,
}

/// A row of a sweep's `aggregate.csv`.
#[derive(Debug, Deserialize)]
pub struct AggregateRow {
    pub rate: f64,
    pub density: f64,
    pub mean_nu: Option<f64>,
    pub violations: usize,
}

/// A row of a sweep's `curves.csv`.
#[derive(Debug, Deserialize)]
pub struct CurveRow {
    pub rate: f64,
    pub class: String,
    pub bin_start: f64,
    pub nu_bar: Option<f64>,
    pub samples: usize,
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Number of data rows, header excluded.
pub fn data_rows(path: &Path) -> Result<usize, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(r.records().count())
}

/// Every `.csv` file under `dir`, sorted.
pub fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bid_lookup() {
        let row = TraceRow {
            k: 0,
            time: 0.0,
            name: "a".into(),
            v: 1.0,
            v_ref: 1.0,
            x: 0.0,
            y: 0.0,
            bids: "1:0.5;2:0.25".into(),
        };
        assert_eq!(row.bid_at(2), Some(0.25));
        assert_eq!(row.bid_at(3), None);
    }

    #[test]
    fn reads_rows_and_lists_files() {
        let tmp = tempfile::tempdir().unwrap();
        let sub = tmp.path().join("x");
        fs::create_dir(&sub).unwrap();
        fs::write(sub.join("e.csv"), "k,time,name,point\n3,0.09,a,2\n").unwrap();
        fs::write(tmp.path().join("note.txt"), "").unwrap();
        let rows: Vec<EventRow> = read_csv(&sub.join("e.csv")).unwrap();
        assert_eq!((rows[0].name.as_str(), rows[0].point), ("a", 2));
        assert_eq!(data_rows(&sub.join("e.csv")).unwrap(), 1);
        assert_eq!(csv_files(tmp.path()), vec![sub.join("e.csv")]);
    }
}
