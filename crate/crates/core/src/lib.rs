//! Identification of low-damped oscillatory modes and their observability
//! mode shapes from multi-channel frequency measurements.
//!
//! The analysis runs in two parts. Part I slides a window over the input
//! channels and decomposes each window with a two-layer combination of real
//! and complex principal component analysis; every complex component that
//! survives a frequency-band and regression-error gate becomes a mode
//! *observation* (frequency, decay rate and one complex observability phasor
//! per channel). Part II clusters the observations with k-Means, selects the
//! number of clusters by silhouette score, and reports each cluster centroid
//! as an averaged mode *estimate*.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`timeseries`]: ingestion, validation and sliding windows,
//! - [`sigproc`]: scalar-series building blocks (EMD, analytic signal,
//!   tapering, mean frequency, exponential fitting),
//! - [`decomp`]: PCA, complex PCA and their two-layer combination,
//! - [`observation`]: Part I, producing [`observation::ModeObservation`]s,
//! - [`clustering`]: Part II, producing [`clustering::ModeEstimate`]s,
//! - [`synth`]: a ringdown generator used as ground truth in tests and for
//!   demonstration data.

pub mod clustering;
pub mod decomp;
pub mod observation;
pub mod sigproc;
pub mod synth;
pub mod timeseries;

pub use clustering::{
    merge_replicates, select_and_cluster, ClusterConfig, ClusterError, ClusterOutput,
    EstimatesReport, ModeEstimate,
};
pub use decomp::{ComponentSelection, CpcaResult, DecompError, PcaResult, TwoLayerResult};
pub use observation::{
    run_part1, ModeObservation, ObservationError, ObservationSet, PipelineConfig,
};
pub use sigproc::{EmdConfig, EmdResult, ExpFit, SigprocError};
pub use synth::{generate, EventSpec, ModeSpec, ScenarioSpec, SynthError, TrendSpec};
pub use timeseries::{
    ingest, ChannelSet, Format, GapPolicy, IngestError, MeasurementWindow, WindowError,
};

/// Complex sample type used throughout the crate.
pub type Complex64 = num_complex::Complex<f64>;
