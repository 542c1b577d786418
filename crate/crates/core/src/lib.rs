//! Detection of market states from rolling correlation matrices.
//!
//! The crate turns a panel of daily prices into a sequence of epoch
//! correlation matrices, measures how different every pair of epochs is,
//! embeds the epochs in a low-dimensional map and clusters them into market
//! states. Sector-level states, short event trajectories and a random-matrix
//! check of the noise-suppression step are built on the same pieces.
//!
//! ```
//! use marketstates::{corrmat::power_map_values, nalgebra::DMatrix};
//!
//! let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
//! let m = power_map_values(&c, 1.0).unwrap();
//! assert_eq!(m[(0, 1)], 0.25);
//! assert_eq!(m[(0, 0)], 1.0);
//! ```

pub mod config;
pub mod corrmat;
pub mod demo;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod rmt;
pub mod sector;
pub mod seed;
pub mod states;
pub mod trajectory;

pub use nalgebra;

pub use config::PipelineConfig;
pub use corrmat::{epoch_correlations, power_map, CorrelationMatrix, EpochCorrelationSeries, EpochSpec};
pub use error::{Error, ErrorClass, Result};
pub use geometry::{classical_mds, similarity_matrix, Embedding, SimilarityMatrix};
pub use ingest::{load_prices, log_returns, ContinuityPolicy, PricePanel, ReturnPanel};
pub use pipeline::{run_pipeline, RunOutcome};
pub use states::{fit_states, optimize_states, ClusteringRun, SearchSettings, StateModel};
pub use trajectory::{analyze_trajectory, cut_window, Classification, TrajectoryReport};
