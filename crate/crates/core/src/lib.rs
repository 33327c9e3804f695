//! Hierarchical-likelihood estimation for generalized linear mixed models.

pub mod adtape;
pub mod design;
pub mod error;
pub mod estimate;
pub mod family;
pub mod fixtures;
pub mod io;
pub mod laplace;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod quadrature;
pub mod simgen;
pub mod splines;
pub mod study;
pub mod timing;

pub use design::{build_dataset, DesignSpec, Levels, Table, Term};
pub use error::{Error, ErrorKind, Result};
pub use estimate::{fit, FitOptions, FitResult, Method, SdScale, SCHEMA_VERSION};
pub use family::Family;
pub use io::{FitReport, SimulationManifest};
pub use model::{Dataset, GlmmSpec, ParamState};
pub use oracle::OracleReport;
pub use simgen::{SimDataset, SimScenario};
pub use splines::KnotSpec;
pub use study::{StudyConfig, StudyReport};
pub use timing::{BenchReport, LadderReport};
