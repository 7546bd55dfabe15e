//! Workload traces: CSV ingestion, cleaning, unit normalization, windowing,
//! and a calibrated synthetic generator.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the trace CSV format.
pub const TRACE_HEADER: [&str; 7] = [
    "task_id",
    "submit_ms",
    "cpu_req",
    "mem_req",
    "duration_ms",
    "priority",
    "deadline_ms",
];

/// Highest priority class (inclusive).
pub const MAX_PRIORITY: u8 = 11;

/// Number of priority classes.
pub const PRIORITY_BINS: usize = MAX_PRIORITY as usize + 1;

/// One task of a workload trace.
///
/// Resource requests are fractions of a single node's capacity. Time fields
/// are milliseconds; they are floating point so that missing or corrupt
/// values survive parsing and can be removed by [`clean_records`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub submit_ms: f64,
    pub cpu_req: f64,
    pub mem_req: f64,
    pub duration_ms: f64,
    pub priority: u8,
    /// Maximum tolerated queueing delay.
    pub deadline_ms: f64,
}

impl TaskRecord {
    /// True when every field satisfies the record invariants.
    pub fn is_valid(&self) -> bool {
        let finite = self.submit_ms.is_finite()
            && self.cpu_req.is_finite()
            && self.mem_req.is_finite()
            && self.duration_ms.is_finite()
            && self.deadline_ms.is_finite();
        finite
            && self.submit_ms >= 0.0
            && self.cpu_req > 0.0
            && self.cpu_req <= 1.0
            && self.mem_req > 0.0
            && self.mem_req <= 1.0
            && self.duration_ms > 0.0
            && self.deadline_ms > 0.0
            && self.priority <= MAX_PRIORITY
    }
}

/// Summary statistics of a trace; the calibration target for synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStats {
    pub task_count: u64,
    pub cpu_req_mean: f64,
    pub cpu_req_std: f64,
    pub mem_req_mean: f64,
    pub mem_req_std: f64,
    pub duration_ms_mean: f64,
    pub duration_ms_std: f64,
    pub arrival_rate_per_s: f64,
    pub priority_histogram: [u64; PRIORITY_BINS],
}

impl TraceStats {
    /// Computes statistics of a cleaned trace.
    pub fn from_records(records: &[TaskRecord]) -> TraceStats {
        let mut priority_histogram = [0u64; PRIORITY_BINS];
        for r in records {
            priority_histogram[(r.priority as usize).min(PRIORITY_BINS - 1)] += 1;
        }
        let (cpu_req_mean, cpu_req_std) = mean_std(records.iter().map(|r| r.cpu_req));
        let (mem_req_mean, mem_req_std) = mean_std(records.iter().map(|r| r.mem_req));
        let (duration_ms_mean, duration_ms_std) = mean_std(records.iter().map(|r| r.duration_ms));
        let arrival_rate_per_s = match (records.first(), records.last()) {
            (Some(first), Some(last)) if last.submit_ms > first.submit_ms => {
                records.len() as f64 / ((last.submit_ms - first.submit_ms) / 1000.0)
            }
            _ => 0.0,
        };
        TraceStats {
            task_count: records.len() as u64,
            cpu_req_mean,
            cpu_req_std,
            mem_req_mean,
            mem_req_std,
            duration_ms_mean,
            duration_ms_std,
            arrival_rate_per_s,
            priority_histogram,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<TraceStats> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Returns a copy with the arrival rate multiplied by `factor`.
    pub fn with_load(&self, factor: f64) -> TraceStats {
        TraceStats {
            arrival_rate_per_s: self.arrival_rate_per_s * factor,
            ..self.clone()
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// A contiguous slice `[start_ms, end_ms)` of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceWindow {
    pub window_index: usize,
    pub start_ms: f64,
    pub end_ms: f64,
    pub records: Vec<TaskRecord>,
}

impl TraceWindow {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

/// Reads a trace CSV. Rows are returned in file order.
///
/// Empty float fields are read as NaN (a missing entry) so that
/// [`clean_records`] can remove them; any other unparseable field is an
/// error naming its 1-based data row and column.
pub fn parse_trace_csv(path: &Path) -> Result<Vec<TaskRecord>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
    parse_trace_str(&text)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TaskRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Csv(e.to_string()))?;
    let found: Vec<&str> = header.iter().collect();
    if found != TRACE_HEADER {
        return Err(Error::HeaderMismatch {
            expected: TRACE_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_index = i + 1;
        let row = row.map_err(|e| Error::Csv(format!("row {row_index}: {e}")))?;
        if row.len() != TRACE_HEADER.len() {
            return Err(Error::Parse {
                row: row_index,
                column: "*".into(),
                value: format!("{} fields", row.len()),
            });
        }
        let float = |col: usize| -> Result<f64> {
            let raw = &row[col];
            if raw.is_empty() {
                return Ok(f64::NAN);
            }
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row: row_index,
                column: TRACE_HEADER[col].into(),
                value: raw.into(),
            })
        };
        let int = |col: usize| -> Result<u64> {
            row[col].parse::<u64>().map_err(|_| Error::Parse {
                row: row_index,
                column: TRACE_HEADER[col].into(),
                value: row[col].into(),
            })
        };
        let priority = int(5)?;
        records.push(TaskRecord {
            task_id: int(0)?,
            submit_ms: float(1)?,
            cpu_req: float(2)?,
            mem_req: float(3)?,
            duration_ms: float(4)?,
            priority: u8::try_from(priority).unwrap_or(u8::MAX),
            deadline_ms: float(6)?,
        });
    }
    Ok(records)
}

pub fn write_trace_csv(path: &Path, records: &[TaskRecord]) -> Result<()> {
    let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
    out.write_all(format_trace_csv(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn format_trace_csv(records: &[TaskRecord]) -> String {
    let mut s = TRACE_HEADER.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.task_id, r.submit_ms, r.cpu_req, r.mem_req, r.duration_ms, r.priority, r.deadline_ms
        ));
    }
    s
}

/// Drops abnormal records and sorts the survivors by submission time.
///
/// A record is dropped when any field is non-finite, a resource request is
/// outside (0,1], the duration or deadline is not positive, the priority is
/// out of range, or its task id repeats an earlier record's.
pub fn clean_records(records: &[TaskRecord]) -> (Vec<TaskRecord>, usize) {
    let mut seen = HashSet::with_capacity(records.len());
    let mut kept: Vec<TaskRecord> = records
        .iter()
        .filter(|r| r.is_valid() && seen.insert(r.task_id))
        .copied()
        .collect();
    let dropped = records.len() - kept.len();
    // stable: equal submit times keep file order
    kept.sort_by(|a, b| a.submit_ms.total_cmp(&b.submit_ms));
    (kept, dropped)
}

/// Scales resource requests into node-capacity fractions, clamping to (0,1].
/// Returns the rescaled records and the number of clamped values.
pub fn normalize_units(records: &[TaskRecord], cpu_scale: f64, mem_scale: f64) -> Result<(Vec<TaskRecord>, usize)> {
    for (name, scale) in [("cpu_scale", cpu_scale), ("mem_scale", mem_scale)] {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {scale}")));
        }
    }
    let mut clamped = 0;
    let mut clamp = |v: f64| {
        if v > 1.0 {
            clamped += 1;
            1.0
        } else if v <= 0.0 {
            clamped += 1;
            f64::MIN_POSITIVE
        } else {
            v
        }
    };
    let out = records
        .iter()
        .map(|r| {
            let mut r = *r;
            if cpu_scale != 1.0 {
                r.cpu_req = clamp(r.cpu_req * cpu_scale);
            }
            if mem_scale != 1.0 {
                r.mem_req = clamp(r.mem_req * mem_scale);
            }
            r
        })
        .collect();
    Ok((out, clamped))
}

/// Splits a sorted trace into fixed-length windows starting at time 0.
///
/// Record `r` lands in window `floor(r.submit_ms / window_ms)`. Empty windows
/// between populated ones are kept so the windows tile the horizon; empty
/// windows after the last record are omitted.
pub fn segment_windows(records: &[TaskRecord], window_ms: u64) -> Vec<TraceWindow> {
    assert!(window_ms > 0, "window_ms must be positive");
    let Some(last) = records.last() else {
        return Vec::new();
    };
    let width = window_ms as f64;
    let count = (last.submit_ms / width).floor() as usize + 1;
    let mut windows: Vec<TraceWindow> = (0..count)
        .map(|i| TraceWindow {
            window_index: i,
            start_ms: i as f64 * width,
            end_ms: (i + 1) as f64 * width,
            records: Vec::new(),
        })
        .collect();
    for r in records {
        let idx = ((r.submit_ms / width).floor() as usize).min(count - 1);
        windows[idx].records.push(*r);
    }
    windows
}

/// Knobs of the synthetic generator that are not trace statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    /// Deadline as a multiple of the mean task duration.
    pub deadline_multiple: f64,
    /// Lower clamp for sampled resource requests.
    pub min_req: f64,
    /// Lower clamp for sampled durations.
    pub min_duration_ms: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            deadline_multiple: 4.0,
            min_req: 0.01,
            min_duration_ms: 1.0,
        }
    }
}

/// Draws a synthetic trace over `[0, horizon_ms)` matching `stats`.
pub fn generate_synthetic(stats: &TraceStats, horizon_ms: u64, seed: u64) -> Result<Vec<TaskRecord>> {
    generate_synthetic_with(stats, horizon_ms, seed, &SynthOptions::default())
}

pub fn generate_synthetic_with(
    stats: &TraceStats,
    horizon_ms: u64,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Vec<TaskRecord>> {
    if !(stats.arrival_rate_per_s.is_finite() && stats.arrival_rate_per_s > 0.0) {
        return Err(Error::DegenerateStats("arrival rate must be positive".into()));
    }
    if horizon_ms == 0 {
        return Err(Error::InvalidArgument("horizon_ms must be positive".into()));
    }
    if !(opts.deadline_multiple > 0.0) {
        return Err(Error::InvalidArgument("deadline_multiple must be positive".into()));
    }
    let cpu = lognormal(stats.cpu_req_mean, stats.cpu_req_std, "cpu_req")?;
    let mem = lognormal(stats.mem_req_mean, stats.mem_req_std, "mem_req")?;
    let dur = lognormal(stats.duration_ms_mean, stats.duration_ms_std, "duration_ms")?;
    let priority = WeightedIndex::new(stats.priority_histogram.iter().map(|&c| c as f64))
        .map_err(|_| Error::DegenerateStats("priority histogram is empty".into()))?;
    let gap = Exp::new(stats.arrival_rate_per_s / 1000.0).expect("positive rate");
    let deadline_ms = opts.deadline_multiple * stats.duration_ms_mean;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        let submit_ms = t.floor();
        if submit_ms >= horizon_ms as f64 {
            break;
        }
        records.push(TaskRecord {
            task_id: records.len() as u64,
            submit_ms,
            cpu_req: cpu.sample(&mut rng).clamp(opts.min_req, 1.0),
            mem_req: mem.sample(&mut rng).clamp(opts.min_req, 1.0),
            duration_ms: dur.sample(&mut rng).max(opts.min_duration_ms).round(),
            priority: priority.sample(&mut rng) as u8,
            deadline_ms,
        });
    }
    Ok(records)
}

/// Log-normal with the given arithmetic mean and standard deviation.
fn lognormal(mean: f64, std: f64, what: &str) -> Result<LogNormal<f64>> {
    if !(mean > 0.0 && std >= 0.0 && mean.is_finite() && std.is_finite()) {
        return Err(Error::DegenerateStats(format!(
            "{what}: mean must be positive and std non-negative"
        )));
    }
    let sigma2 = (1.0 + (std / mean).powi(2)).ln();
    let mu = mean.ln() - sigma2 / 2.0;
    Ok(LogNormal::new(mu, sigma2.sqrt()).expect("valid log-normal"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, t: f64) -> TaskRecord {
        TaskRecord {
            task_id: id,
            submit_ms: t,
            cpu_req: 0.25,
            mem_req: 0.1,
            duration_ms: 500.0,
            priority: 3,
            deadline_ms: 1000.0,
        }
    }

    pub(crate) fn stats() -> TraceStats {
        let mut priority_histogram = [0; PRIORITY_BINS];
        priority_histogram[0] = 5;
        priority_histogram[9] = 5;
        TraceStats {
            task_count: 10,
            cpu_req_mean: 0.2,
            cpu_req_std: 0.1,
            mem_req_mean: 0.1,
            mem_req_std: 0.05,
            duration_ms_mean: 400.0,
            duration_ms_std: 200.0,
            arrival_rate_per_s: 10.0,
            priority_histogram,
        }
    }

    #[test]
    fn empty_file_with_header() {
        let recs = parse_trace_str(&(TRACE_HEADER.join(",") + "\n")).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn parses_single_row() {
        let text = format!("{}\n1,0,0.25,0.10,500,3,1000\n", TRACE_HEADER.join(","));
        let recs = parse_trace_str(&text).unwrap();
        assert_eq!(recs, vec![rec(1, 0.0)]);
    }

    #[test]
    fn bad_field_names_row_and_column() {
        let text = format!("{}\n1,0,abc,0.10,500,3,1000\n", TRACE_HEADER.join(","));
        match parse_trace_str(&text) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "cpu_req");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_mismatch() {
        let err = parse_trace_str("a,b,c\n").unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
    }

    #[test]
    fn missing_file() {
        let err = parse_trace_csv(Path::new("/nonexistent/trace.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.csv"));
    }

    #[test]
    fn missing_entry_is_cleaned() {
        let text = format!(
            "{}\n1,0,,0.10,500,3,1000\n2,5,0.5,0.1,10,0,100\n",
            TRACE_HEADER.join(",")
        );
        let recs = parse_trace_str(&text).unwrap();
        assert!(recs[0].cpu_req.is_nan());
        let (kept, dropped) = clean_records(&recs);
        assert_eq!((kept.len(), dropped), (1, 1));
    }

    #[test]
    fn clean_keeps_valid() {
        let recs: Vec<_> = (0..5).map(|i| rec(i, i as f64)).collect();
        assert_eq!(clean_records(&recs), (recs.clone(), 0));
    }

    #[test]
    fn clean_drops_out_of_range() {
        let mut recs: Vec<_> = (0..3).map(|i| rec(i, i as f64)).collect();
        recs[1].cpu_req = 1.7;
        let (kept, dropped) = clean_records(&recs);
        assert_eq!(kept.len(), 2);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn clean_sorts() {
        let recs = vec![rec(0, 30.0), rec(1, 10.0), rec(2, 20.0)];
        let (kept, _) = clean_records(&recs);
        let times: Vec<f64> = kept.iter().map(|r| r.submit_ms).collect();
        assert_eq!(times, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn clean_drops_duplicate_ids() {
        let recs = vec![rec(0, 0.0), rec(0, 1.0)];
        assert_eq!(clean_records(&recs).1, 1);
    }

    #[test]
    fn normalize_identity_scale_and_clamp() {
        let recs = vec![rec(0, 0.0)];
        assert_eq!(normalize_units(&recs, 1.0, 1.0).unwrap(), (recs.clone(), 0));

        let mut r = rec(0, 0.0);
        r.cpu_req = 0.5;
        let (out, n) = normalize_units(&[r], 0.5, 1.0).unwrap();
        assert_eq!((out[0].cpu_req, n), (0.25, 0));

        r.cpu_req = 0.9;
        let (out, n) = normalize_units(&[r], 2.0, 1.0).unwrap();
        assert_eq!((out[0].cpu_req, n), (1.0, 1));

        assert!(normalize_units(&[r], 0.0, 1.0).is_err());
        assert!(normalize_units(&[r], 1.0, -2.0).is_err());
    }

    #[test]
    fn windows_floor_assignment() {
        let recs = vec![rec(0, 0.0), rec(1, 100.0), rec(2, 250.0)];
        let w = segment_windows(&recs, 200);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].records.len(), 2);
        assert_eq!(w[1].records[0].task_id, 2);
        assert_eq!((w[1].start_ms, w[1].end_ms), (200.0, 400.0));

        assert_eq!(segment_windows(&[rec(0, 0.0)], 1000).len(), 1);
        assert!(segment_windows(&[], 10).is_empty());
    }

    #[test]
    fn windows_keep_interior_gaps() {
        let recs = vec![rec(0, 0.0), rec(1, 450.0)];
        let w = segment_windows(&recs, 100);
        assert_eq!(w.len(), 5);
        assert!(w[2].is_empty());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&stats(), 10_000, 7).unwrap();
        let b = generate_synthetic(&stats(), 10_000, 7).unwrap();
        assert_eq!(format_trace_csv(&a), format_trace_csv(&b));
        let c = generate_synthetic(&stats(), 10_000, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_records_are_valid_and_sorted() {
        let recs = generate_synthetic(&stats(), 20_000, 3).unwrap();
        assert!(recs.iter().all(TaskRecord::is_valid));
        assert!(recs.windows(2).all(|w| w[0].submit_ms <= w[1].submit_ms));
        assert!(recs.iter().all(|r| r.submit_ms < 20_000.0));
        assert!(recs.iter().all(|r| r.priority == 0 || r.priority == 9));
        assert!(recs.iter().all(|r| r.deadline_ms == 1600.0));
    }

    #[test]
    fn zero_rate_is_degenerate() {
        let mut s = stats();
        s.arrival_rate_per_s = 0.0;
        assert!(matches!(
            generate_synthetic(&s, 1000, 0),
            Err(Error::DegenerateStats(_))
        ));
    }

    #[test]
    fn stats_histogram_sums_to_count() {
        let recs = generate_synthetic(&stats(), 50_000, 1).unwrap();
        let s = TraceStats::from_records(&recs);
        assert_eq!(s.priority_histogram.iter().sum::<u64>(), s.task_count);
        assert!(s.cpu_req_std >= 0.0 && s.duration_ms_mean > 0.0);
    }

    #[test]
    fn stats_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        stats().to_json_file(&path).unwrap();
        assert_eq!(TraceStats::from_json_file(&path).unwrap(), stats());
    }
}
