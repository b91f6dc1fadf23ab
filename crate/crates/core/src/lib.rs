//! Link delay distribution estimation from end-to-end unicast measurements.
//!
//! Each link delay is modelled as a generalized hyperexponential mixture over
//! a known set of exponential rates. For every path, the empirical MGF of the
//! path delay fixes the right-hand side of a square polynomial system whose
//! roots contain the weight vectors of the links on that path. Solving these
//! systems and intersecting their solution sets across paths, using a
//! 1-identifiable routing matrix, assigns a weight vector to every link.

pub mod epsbuild;
pub mod error;
pub mod experiments;
pub mod expmeans;
pub mod linalg;
pub mod matching;
pub mod mgfest;
pub mod model;
pub mod pipeline;
pub mod poly;
pub mod refine;
pub mod polysolve;
pub mod simulate;

pub use error::{Error, Result};
