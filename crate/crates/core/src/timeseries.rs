//! Ingestion of multi-channel time series and sliding measurement windows.
//!
//! A [`ChannelSet`] holds `M` time-aligned channels sampled at a common,
//! uniform rate. Two on-disk formats are supported:
//!
//! - **CSV**: a mandatory header row, optionally preceded by a metadata
//!   comment `# rate_hz=<v> t0=<v>`. If the first header cell is `t`, the
//!   first column carries per-sample timestamps in seconds and the remaining
//!   columns are channels; without a `t` column the sample rate must come
//!   from the metadata comment. Decimal separator is `.`, encoding UTF-8.
//! - **JSON**: an object `{channel_ids, sample_rate_hz, t0, samples}` where
//!   `samples` is a row-major `M x N` array (row `i` = channel `i`).
//!
//! Gaps (empty CSV cells, `NaN`, or JSON `null`) are rejected by default;
//! [`GapPolicy::FillLinear`] repairs interior runs up to a configured length
//! by linear interpolation. Repairs are never silent: they require opting in.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum samples a window must contain for detrending and the analytic
/// signal to be meaningful.
pub const MIN_WINDOW_SAMPLES: usize = 4;

/// Errors raised while ingesting or validating channel data.
#[derive(Debug, Error)]
pub enum IngestError {
    /// Structurally invalid input (ragged rows, bad header, unparsable cell).
    #[error("malformed input: {0}")]
    MalformedInput(String),
    /// A missing or non-finite cell. `row` is the 0-based sample index,
    /// `col` the 0-based channel index.
    #[error("gap detected at sample {row}, channel {col}")]
    GapDetected { row: usize, col: usize },
    /// The time column is not strictly increasing.
    #[error("time column not strictly increasing at sample {row}")]
    TimeOrderError { row: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised when slicing a channel set into windows.
#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window length {length_s} s exceeds data duration {duration_s} s")]
    WindowTooLong { length_s: f64, duration_s: f64 },
    #[error("window step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("window of {got} samples is below the minimum of {min}")]
    TooFewSamplesPerWindow { got: usize, min: usize },
}

/// Supported serialization formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// What to do with missing cells during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPolicy {
    /// Any gap is an error.
    Reject,
    /// Linearly interpolate interior gap runs of at most `max_gap` samples;
    /// longer runs and gaps touching either end remain errors.
    FillLinear { max_gap: usize },
}

/// An `M x N` block of uniformly sampled, time-aligned channel data.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    channel_ids: Vec<String>,
    sample_rate_hz: f64,
    t0: f64,
    /// Row `i` holds the `N` samples of channel `i`.
    samples: DMatrix<f64>,
}

impl ChannelSet {
    /// Builds a validated channel set. Rows of `samples` are channels.
    pub fn new(
        channel_ids: Vec<String>,
        sample_rate_hz: f64,
        t0: f64,
        samples: DMatrix<f64>,
    ) -> Result<Self, IngestError> {
        if channel_ids.len() != samples.nrows() {
            return Err(IngestError::MalformedInput(format!(
                "{} channel ids for {} channels",
                channel_ids.len(),
                samples.nrows()
            )));
        }
        if samples.nrows() == 0 {
            return Err(IngestError::MalformedInput("no channels".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &channel_ids {
            if !seen.insert(id) {
                return Err(IngestError::MalformedInput(format!(
                    "duplicate channel id `{id}`"
                )));
            }
        }
        if samples.ncols() < 2 {
            return Err(IngestError::MalformedInput(format!(
                "need at least 2 samples per channel, got {}",
                samples.ncols()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(IngestError::MalformedInput(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if !t0.is_finite() {
            return Err(IngestError::MalformedInput("non-finite t0".into()));
        }
        for col in 0..samples.ncols() {
            for row in 0..samples.nrows() {
                if !samples[(row, col)].is_finite() {
                    return Err(IngestError::GapDetected { row: col, col: row });
                }
            }
        }
        Ok(Self {
            channel_ids,
            sample_rate_hz,
            t0,
            samples,
        })
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Channel-major sample matrix (`M x N`).
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    /// Number of channels `M`.
    pub fn channel_count(&self) -> usize {
        self.samples.nrows()
    }

    /// Number of samples per channel `N`.
    pub fn sample_count(&self) -> usize {
        self.samples.ncols()
    }

    /// Total duration covered by the samples, in seconds.
    pub fn duration_s(&self) -> f64 {
        self.sample_count() as f64 / self.sample_rate_hz
    }

    /// Cuts the set into overlapping windows of `length_s` every `step_s`.
    ///
    /// Windows are ordered by start time; a final partial window is dropped.
    /// The window count obeys `floor((N_total - N_win) / N_step) + 1`.
    pub fn sliding_windows(
        &self,
        length_s: f64,
        step_s: f64,
    ) -> Result<Vec<MeasurementWindow<'_>>, WindowError> {
        if step_s <= 0.0 || step_s.is_nan() {
            return Err(WindowError::NonPositiveStep(step_s));
        }
        let n_total = self.sample_count();
        let n_win = (length_s * self.sample_rate_hz).round() as usize;
        if n_win > n_total || length_s <= 0.0 {
            return Err(WindowError::WindowTooLong {
                length_s,
                duration_s: self.duration_s(),
            });
        }
        if n_win < MIN_WINDOW_SAMPLES {
            return Err(WindowError::TooFewSamplesPerWindow {
                got: n_win,
                min: MIN_WINDOW_SAMPLES,
            });
        }
        let n_step = ((step_s * self.sample_rate_hz).round() as usize).max(1);
        let count = (n_total - n_win) / n_step + 1;
        Ok((0..count)
            .map(|index| MeasurementWindow {
                source: self,
                start: index * n_step,
                len: n_win,
                index,
            })
            .collect())
    }

    /// Parses CSV as described in the module docs.
    pub fn from_csv(reader: impl Read, gaps: GapPolicy) -> Result<Self, IngestError> {
        let mut lines = BufReader::new(reader).lines();

        let mut first = match lines.next() {
            Some(line) => line?,
            None => return Err(IngestError::MalformedInput("empty input".into())),
        };
        let mut declared_rate = None;
        let mut declared_t0 = None;
        if first.starts_with('#') {
            for token in first.trim_start_matches('#').split_whitespace() {
                if let Some(v) = token.strip_prefix("rate_hz=") {
                    declared_rate = Some(v.parse::<f64>().map_err(|_| {
                        IngestError::MalformedInput(format!("bad rate_hz value `{v}`"))
                    })?);
                } else if let Some(v) = token.strip_prefix("t0=") {
                    declared_t0 = Some(v.parse::<f64>().map_err(|_| {
                        IngestError::MalformedInput(format!("bad t0 value `{v}`"))
                    })?);
                }
            }
            first = match lines.next() {
                Some(line) => line?,
                None => return Err(IngestError::MalformedInput("missing header row".into())),
            };
        }

        let header: Vec<String> = split_csv_row(&first);
        if header.is_empty() {
            return Err(IngestError::MalformedInput("empty header row".into()));
        }
        let has_time = header[0].trim() == "t";
        let channel_ids: Vec<String> = if has_time {
            header[1..].iter().map(|s| s.trim().to_string()).collect()
        } else {
            header.iter().map(|s| s.trim().to_string()).collect()
        };
        if channel_ids.is_empty() {
            return Err(IngestError::MalformedInput("no channel columns".into()));
        }
        if !has_time && declared_rate.is_none() {
            return Err(IngestError::MalformedInput(
                "no `t` column and no `rate_hz` metadata".into(),
            ));
        }

        let n_cols = header.len();
        let mut times: Vec<f64> = Vec::new();
        // Time-major accumulation; transposed into channel rows at the end.
        let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); channel_ids.len()];
        for (row_idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = split_csv_row(&line);
            if row.len() != n_cols {
                return Err(IngestError::MalformedInput(format!(
                    "row {row_idx} has {} cells, expected {n_cols}",
                    row.len()
                )));
            }
            let data_cells = if has_time {
                let t: f64 = row[0].trim().parse().map_err(|_| {
                    IngestError::MalformedInput(format!("bad time value `{}`", row[0]))
                })?;
                times.push(t);
                &row[1..]
            } else {
                &row[..]
            };
            for (ch, cell) in data_cells.iter().enumerate() {
                let cell = cell.trim();
                let value = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    None
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        IngestError::MalformedInput(format!("bad numeric cell `{cell}`"))
                    })?;
                    if v.is_finite() {
                        Some(v)
                    } else {
                        None
                    }
                };
                cells[ch].push(value);
            }
        }

        let n = cells[0].len();
        if n < 2 {
            return Err(IngestError::MalformedInput(format!(
                "need at least 2 samples, got {n}"
            )));
        }

        let (rate, t0) = if has_time {
            for k in 1..times.len() {
                if times[k] <= times[k - 1] {
                    return Err(IngestError::TimeOrderError { row: k });
                }
            }
            match declared_rate {
                Some(rate) => (rate, declared_t0.unwrap_or(times[0])),
                None => {
                    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
                    for k in 1..n {
                        let step = times[k] - times[k - 1];
                        if (step - dt).abs() > 1e-6 * dt {
                            return Err(IngestError::MalformedInput(format!(
                                "non-uniform sample spacing at sample {k}: {step} s vs {dt} s"
                            )));
                        }
                    }
                    (1.0 / dt, times[0])
                }
            }
        } else {
            (declared_rate.unwrap(), declared_t0.unwrap_or(0.0))
        };

        let filled = repair_gaps(cells, gaps)?;
        let m = filled.len();
        let samples = DMatrix::from_fn(m, n, |i, j| filled[i][j]);
        Self::new(channel_ids, rate, t0, samples)
    }

    /// Writes CSV with a metadata comment, a header and a time column.
    ///
    /// Floating-point values use the shortest representation that parses
    /// back to the identical bits, so `from_csv(to_csv(cs)) == cs`.
    pub fn to_csv(&self, mut writer: impl Write) -> std::io::Result<()> {
        writeln!(writer, "# rate_hz={} t0={}", self.sample_rate_hz, self.t0)?;
        write!(writer, "t")?;
        for id in &self.channel_ids {
            write!(writer, ",{id}")?;
        }
        writeln!(writer)?;
        for k in 0..self.sample_count() {
            write!(writer, "{}", self.t0 + k as f64 / self.sample_rate_hz)?;
            for i in 0..self.channel_count() {
                write!(writer, ",{}", self.samples[(i, k)])?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Parses the JSON object form.
    pub fn from_json(reader: impl Read, gaps: GapPolicy) -> Result<Self, IngestError> {
        let repr: ChannelSetRepr = serde_json::from_reader(reader)
            .map_err(|e| IngestError::MalformedInput(e.to_string()))?;
        let m = repr.samples.len();
        if m == 0 {
            return Err(IngestError::MalformedInput("no channels".into()));
        }
        let n = repr.samples[0].len();
        for (i, row) in repr.samples.iter().enumerate() {
            if row.len() != n {
                return Err(IngestError::MalformedInput(format!(
                    "channel {i} has {} samples, expected {n}",
                    row.len()
                )));
            }
        }
        let cells: Vec<Vec<Option<f64>>> = repr
            .samples
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| v.filter(|x| x.is_finite()))
                    .collect()
            })
            .collect();
        let filled = repair_gaps(cells, gaps)?;
        let samples = DMatrix::from_fn(m, n, |i, j| filled[i][j]);
        Self::new(repr.channel_ids, repr.sample_rate_hz, repr.t0, samples)
    }

    /// Writes the JSON object form.
    pub fn to_json(&self, writer: impl Write) -> Result<(), IngestError> {
        let rows: Vec<Vec<f64>> = (0..self.channel_count())
            .map(|i| self.samples.row(i).iter().copied().collect())
            .collect();
        let repr = ChannelSetOut {
            channel_ids: &self.channel_ids,
            sample_rate_hz: self.sample_rate_hz,
            t0: self.t0,
            samples: rows,
        };
        serde_json::to_writer_pretty(writer, &repr)
            .map_err(|e| IngestError::MalformedInput(e.to_string()))
    }

    /// Serializes in the requested format.
    pub fn serialize(&self, writer: impl Write, format: Format) -> Result<(), IngestError> {
        match format {
            Format::Csv => self.to_csv(writer).map_err(IngestError::Io),
            Format::Json => self.to_json(writer),
        }
    }
}

/// Parses a byte stream in the given format into a validated [`ChannelSet`].
pub fn ingest(reader: impl Read, format: Format, gaps: GapPolicy) -> Result<ChannelSet, IngestError> {
    match format {
        Format::Csv => ChannelSet::from_csv(reader, gaps),
        Format::Json => ChannelSet::from_json(reader, gaps),
    }
}

/// A read-only view of a channel set restricted to one time window.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementWindow<'a> {
    source: &'a ChannelSet,
    start: usize,
    len: usize,
    index: usize,
}

impl<'a> MeasurementWindow<'a> {
    /// `M x N_win` view of the window samples.
    pub fn data(&self) -> DMatrixView<'a, f64> {
        self.source.samples.columns(self.start, self.len)
    }

    /// Position of the window in the sliding sequence.
    pub fn index(&self) -> usize {
        self.index
    }

    /// Absolute start time of the window, in seconds.
    pub fn t_start(&self) -> f64 {
        self.source.t0 + self.start as f64 / self.source.sample_rate_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.source.sample_rate_hz
    }

    pub fn sample_count(&self) -> usize {
        self.len
    }

    pub fn channel_count(&self) -> usize {
        self.source.channel_count()
    }
}

#[derive(Deserialize)]
struct ChannelSetRepr {
    channel_ids: Vec<String>,
    sample_rate_hz: f64,
    #[serde(default)]
    t0: f64,
    samples: Vec<Vec<Option<f64>>>,
}

#[derive(Serialize)]
struct ChannelSetOut<'a> {
    channel_ids: &'a [String],
    sample_rate_hz: f64,
    t0: f64,
    samples: Vec<Vec<f64>>,
}

/// Minimal CSV field splitting; quoting is not needed for numeric payloads,
/// but quoted channel ids are tolerated.
fn split_csv_row(line: &str) -> Vec<String> {
    line.split(',')
        .map(|s| s.trim().trim_matches('"').to_string())
        .collect()
}

/// Applies the gap policy channel by channel.
fn repair_gaps(
    cells: Vec<Vec<Option<f64>>>,
    policy: GapPolicy,
) -> Result<Vec<Vec<f64>>, IngestError> {
    let mut out = Vec::with_capacity(cells.len());
    for (ch, series) in cells.into_iter().enumerate() {
        let n = series.len();
        let mut filled = Vec::with_capacity(n);
        let mut k = 0;
        while k < n {
            match series[k] {
                Some(v) => {
                    filled.push(v);
                    k += 1;
                }
                None => {
                    let run_start = k;
                    let mut run_end = k;
                    while run_end < n && series[run_end].is_none() {
                        run_end += 1;
                    }
                    let run_len = run_end - run_start;
                    let fillable = match policy {
                        GapPolicy::Reject => false,
                        GapPolicy::FillLinear { max_gap } => {
                            run_len <= max_gap && run_start > 0 && run_end < n
                        }
                    };
                    if !fillable {
                        return Err(IngestError::GapDetected {
                            row: run_start,
                            col: ch,
                        });
                    }
                    let left = filled[run_start - 1];
                    let right = series[run_end].unwrap();
                    for j in 0..run_len {
                        let frac = (j + 1) as f64 / (run_len + 1) as f64;
                        filled.push(left + frac * (right - left));
                    }
                    k = run_end;
                }
            }
        }
        out.push(filled);
    }
    Ok(out)
}
