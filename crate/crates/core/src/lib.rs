//! Convex elastic smoothing of vehicle trajectories.

pub mod audit;
pub mod bubbles;
pub mod geometry;
pub mod pipeline;
pub mod scalar;
pub mod scenarios;
pub mod solver;
pub mod speed;
pub mod stretch;

pub use scalar::Scalar;
pub use speed::{SpeedBoundary, SpeedProfile};
pub use stretch::{ReferencePath, VehicleParams};

pub type Point = geometry::Point2<f64>;
pub type Polygon = geometry::Polygon<f64>;
pub type Workspace = geometry::Workspace<f64>;
pub type Bubble = bubbles::Bubble<f64>;
pub type BubbleParams = bubbles::BubbleParams<f64>;
pub type BubbleSequence = bubbles::BubbleSequence<f64>;
pub type PathGeometry = speed::PathGeometry<f64>;
