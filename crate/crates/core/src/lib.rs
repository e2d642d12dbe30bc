//! Critical lengths for boundary control of the linear KdV equation on star graphs.

pub mod banded;
pub mod catalog;
pub mod config;
pub mod critical_sets;
pub mod cubic;
pub mod error;
pub mod gramian;
pub mod simulator;
pub mod spectral;

pub use catalog::{load_catalog, save_catalog, CatalogDocument};
pub use config::GraphConfig;
pub use critical_sets::{CriticalSetId, CriticalWitness, SearchBox, WitnessData};
pub use cubic::{ComplexScalar, CubicRoots, Multiplicity};
pub use error::{Error, Result};
pub use gramian::{GramianResult, HumControlResult};
pub use spectral::{SpectralMatrix, SpectralSolution};
pub use simulator::{ControlSignal, GraphGrid, StateField, TraceRecord};
