pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod initial;
pub mod io;
pub mod measures;
pub mod noise;
pub mod scalar;

pub use diagnostics::DiagnosticsRecord;
pub use dynamics::{PathState, SimConfig, Stepper};
pub use error::{LlbError, Result};
pub use experiments::{StudyKind, StudyReport, StudySpec};
pub use field::{Grid, Spectrum, VectorField};

pub type Field64 = VectorField<f64>;
pub type Field32 = VectorField<f32>;
