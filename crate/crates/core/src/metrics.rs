//! Post-processing of traces: speed ratios, binned speed-ratio curves,
//! realized density, dips, CSV output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::sim::{CrossingEvent, RunOutput, TraceRecord, Violation};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("reference speed must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("bin width must be positive, got {0}")]
    BadBinWidth(f64),
}

/// `v / v_ref`.
pub fn speed_ratio(v: f64, v_ref: f64) -> Result<f64, MetricsError> {
    if !(v_ref > 0.0) {
        return Err(MetricsError::NonPositiveReference(v_ref));
    }
    Ok(v / v_ref)
}

/// Mean speed ratio per position bin for one maneuver class.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedCurve {
    pub class: String,
    pub bin_width: f64,
    /// `None` where no sample fell in the bin.
    pub mean: Vec<Option<f64>>,
    pub samples: Vec<usize>,
}

impl SpeedCurve {
    pub fn bin_start(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }

    /// Bin containing arc length `p`.
    pub fn bin_of(&self, p: f64) -> usize {
        (p / self.bin_width).floor().max(0.0) as usize
    }

    /// Average over the bins that have samples.
    pub fn mean_over_bins(&self) -> Option<f64> {
        let present: Vec<f64> = self.mean.iter().flatten().copied().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Binned mean speed ratio per maneuver class, all time samples pooled.
/// Bins cover `[0, extent]`; samples beyond the last bin go into it.
pub fn traffic_speed_ratio<'a>(
    traces: impl IntoIterator<Item = &'a TraceRecord>,
    bin_width: f64,
    extent: f64,
) -> Result<Vec<SpeedCurve>, MetricsError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(MetricsError::BadBinWidth(bin_width));
    }
    let bins = ((extent / bin_width).ceil() as usize).max(1);
    let mut acc: BTreeMap<&str, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for r in traces {
        let nu = speed_ratio(r.v, r.v_ref)?;
        let (sum, count) = acc
            .entry(r.maneuver.as_str())
            .or_insert_with(|| (vec![0.0; bins], vec![0; bins]));
        let b = ((r.p / bin_width).floor().max(0.0) as usize).min(bins - 1);
        sum[b] += nu;
        count[b] += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(class, (sum, count))| SpeedCurve {
            class: class.to_string(),
            bin_width,
            mean: sum
                .iter()
                .zip(&count)
                .map(|(s, &c)| (c > 0).then(|| s / c as f64))
                .collect(),
            samples: count,
        })
        .collect())
}

/// Time-averaged number of active vehicles over `steps` steps.
pub fn density(traces: &[TraceRecord], steps: u64) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    traces.len() as f64 / steps as f64
}

/// Mean of the per-class bin averages.
pub fn mean_speed_ratio(curves: &[SpeedCurve]) -> Option<f64> {
    let means: Vec<f64> = curves.iter().filter_map(SpeedCurve::mean_over_bins).collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dip {
    pub bin: usize,
    pub value: f64,
    pub prominence: f64,
}

/// Local minima of a curve whose prominence reaches `min_prominence`.
///
/// Absent bins are skipped. Prominence is the depth below the lower of the two
/// highest points reached before meeting a lower value on either side.
pub fn find_dips(curve: &SpeedCurve, min_prominence: f64) -> Vec<Dip> {
    let pts: Vec<(usize, f64)> = curve
        .mean
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|v| (i, v)))
        .collect();
    let mut dips = Vec::new();
    for j in 1..pts.len().saturating_sub(1) {
        let v = pts[j].1;
        if !(v < pts[j - 1].1 && v <= pts[j + 1].1) {
            continue;
        }
        let rise = |it: &mut dyn Iterator<Item = &(usize, f64)>| {
            let mut top = v;
            for &(_, w) in it {
                if w < v {
                    break;
                }
                top = top.max(w);
            }
            top
        };
        let left = rise(&mut pts[..j].iter().rev());
        let right = rise(&mut pts[j + 1..].iter());
        let prominence = left.min(right) - v;
        if prominence >= min_prominence {
            dips.push(Dip {
                bin: pts[j].0,
                value: v,
                prominence,
            });
        }
    }
    dips
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Speed ratio of each trace record, aligned with the traces.
    pub speed_ratios: Vec<f64>,
    pub curves: Vec<SpeedCurve>,
    pub density: f64,
    pub mean_speed_ratio: Option<f64>,
    pub min_conflict_distance: Option<f64>,
    pub violations: usize,
    pub fallbacks: u64,
    pub clamps: u64,
}

pub fn report(run: &RunOutput, bin_width: f64, extent: f64) -> Result<MetricsReport, MetricsError> {
    let speed_ratios = run
        .traces
        .iter()
        .map(|r| speed_ratio(r.v, r.v_ref))
        .collect::<Result<_, _>>()?;
    let curves = traffic_speed_ratio(&run.traces, bin_width, extent)?;
    Ok(MetricsReport {
        speed_ratios,
        mean_speed_ratio: mean_speed_ratio(&curves),
        curves,
        density: density(&run.traces, run.steps),
        min_conflict_distance: run.closest.as_ref().map(|c| c.distance),
        violations: run.violations.len(),
        fallbacks: run.fallbacks,
        clamps: run.clamps,
    })
}

/// Columns of `traces.csv`: the [`TraceRecord`] fields followed by `nu`.
pub const TRACE_COLUMNS: [&str; 21] = [
    "k", "time", "id", "name", "path", "maneuver", "p", "v", "u", "v_ref", "x", "y", "bids",
    "distances", "n_frontal", "n_higher", "safety_rows", "qp_iterations", "fallback", "clamped",
    "nu",
];

/// One row per vehicle per step.
pub fn write_traces_csv<W: Write>(out: W, traces: &[TraceRecord], ratios: &[f64]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for (record, &nu) in traces.iter().zip(ratios) {
        w.serialize((record, nu))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per maneuver class per position bin.
pub fn write_curves_csv<W: Write>(out: W, curves: &[SpeedCurve]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "bin_start", "bin_end", "nu_bar", "samples"])?;
    for c in curves {
        for (i, (m, n)) in c.mean.iter().zip(&c.samples).enumerate() {
            w.write_record([
                c.class.clone(),
                c.bin_start(i).to_string(),
                c.bin_start(i + 1).to_string(),
                m.map(|v| v.to_string()).unwrap_or_default(),
                n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per collision-point crossing.
pub fn write_events_csv<W: Write>(out: W, events: &[CrossingEvent]) -> csv::Result<()> {
    write_rows(out, events, ["k", "time", "id", "name", "point"])
}

/// One row per flagged pair per step.
pub fn write_violations_csv<W: Write>(out: W, violations: &[Violation]) -> csv::Result<()> {
    write_rows(out, violations, ["k", "time", "a", "b", "distance"])
}

// Writes the header even when there are no rows.
fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T], header: [&str; 5]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
