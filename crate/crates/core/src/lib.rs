//! Perception-aware trajectory planning for 2D LiDAR robots.
//!
//! A metric encoding map ([`mem::MetricEncodingMap`]) stores, per grid cell, which of 64
//! view angles see only degenerate geometry. Search and trajectory
//! optimization read it to keep the sensor on features, and
//! [`localizer::track_trajectory`] measures the localization error a
//! trajectory actually produces. [`pipeline`] ties the stages together.
//!
//! The guide in `book/` walks through each stage with runnable examples.

pub mod artifacts;
pub mod banded;
pub mod error;
pub mod lbfgs;
pub mod localizer;
pub mod maps;
pub mod mem;
pub mod minco;
pub mod optimizer;
pub mod pipeline;
pub mod render;
pub mod scan;
pub mod search;
pub mod world;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/localizability.md")]
    mod localizability {}
    #[doc = include_str!("../../../book/src/metric-encoding-map.md")]
    mod metric_encoding_map {}
    #[doc = include_str!("../../../book/src/perception-aware-search.md")]
    mod perception_aware_search {}
    #[doc = include_str!("../../../book/src/trajectory-optimization.md")]
    mod trajectory_optimization {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli-and-files.md")]
    mod cli_and_files {}
}
