//! Exact Doob-Meyer decomposition laboratory on finite filtered probability spaces.

pub mod cli;
pub mod doob;
pub mod dyadic;
pub mod error;
pub mod filtered_space;
pub mod io;
pub mod komlos;
pub mod limit;
pub mod processes;
pub mod report;

pub use doob::{doob_decompose_discrete, ui_diagnostics, DoobPair, UiDiagnostics};
pub use dyadic::{DyadicGrid, DyadicTime};
pub use error::{Error, Result};
pub use filtered_space::{FiniteFilteredSpace, Partition, RandomVariable, StoppingTime};
pub use komlos::{komlos_extract, min_norm_convex_hull, ConvexWeights, KomlosReport};
pub use processes::AdaptedProcess;
