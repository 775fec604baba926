//! Beamspace MIMO capacity bounds and loaded N-port antenna synthesis.
//!
//! The crate computes channel-capacity bounds for loaded N-port antenna
//! structures under radiated-power, current-norm and dual constraints, and
//! synthesizes feed/load configurations that approach those bounds via
//! alternating continuous/combinatorial optimization.

pub mod capacity;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod modal;
pub mod network;
pub mod optimizer;
pub mod quad;

pub use dataset::{load_dataset, save_dataset, synthesize_dipole_grid, PortDataset};
pub use error::{Error, Result};
pub use grid::AngleGrid;
pub use modal::{compute_correlation, modal_decomposition, ModalBasis};
