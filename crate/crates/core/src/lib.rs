//! Shallow cuttings for 3-D dominance ranges in a simulated block-I/O model.
//!
//! The crate provides:
//!
//! - [`iomodel`]: a simulated external memory with exact block-transfer
//!   accounting under configurable `(M, B)`;
//! - [`extsort`]: multiway external merge sort at the textbook pass count;
//! - [`geometry`] / [`oracle`]: rank-space types and brute-force references;
//! - [`staircase2d`]: monotone staircases (2-D shallow cuttings);
//! - [`gridstruct`]: the slab-grid tree answering dominance reporting,
//!   counting, and selection, plus the additive-error offline counter;
//! - [`findany`]: batched offline find-any by distribution sweeping;
//! - [`cutting3d`]: the event-driven hierarchical construction of k-level
//!   shallow cuttings in sort-bound I/Os;
//! - [`approxcount`] / [`offreport`]: the two offline applications built on
//!   top of the cuttings.

pub mod approxcount;
pub mod cutting3d;
pub mod extsort;
pub mod findany;
pub mod geometry;
pub mod gridstruct;
pub mod iomodel;
pub mod offreport;
pub mod oracle;
pub mod staircase2d;

pub use geometry::{Apex, Cell, Cutting, Point3, QueryPoint, Rank, RawPoint};
pub use iomodel::{ExtVec, IoConfig, IoError, IoStats, Session, Word};
