//! View-by-view refinement of a model bundle, and the degradation harness.

pub mod bridge;
pub mod bundle;
pub mod harness;
pub mod refine;
pub mod stubs;

pub use bundle::{BundleView, ModelBundle};
pub use refine::{refine, run_refine, NormalBlend, RefineConfig, RefineReport};
pub use stubs::{NormalPredictor, RefineRequest, Refiner, StubMode};
