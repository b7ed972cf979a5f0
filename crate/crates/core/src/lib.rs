//! Vehicular beaconing simulator with neighbor-awareness metrics.
//!
//! Geometry and the awareness model are generic over the float type; the
//! aliases below fix them to `f64`, which is what the simulation uses.

// `!(x > 0.0)` is the NaN-rejecting check used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod awareness;
pub mod beaconing;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod metrics;
pub mod mobility;
pub mod rng;

pub use error::{Error, Result};

pub type Point = geometry::Point2<f64>;
pub type Polygon = geometry::ObstaclePolygon<f64>;
pub type Index = geometry::SpatialIndex<f64>;
pub type Model = awareness::AwarenessModel<f64>;
pub type FitPoint = awareness::FitPoint<f64>;
