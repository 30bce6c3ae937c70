//! Procedural CBCT-like jaw cases with per-tooth ground truth.
//!
//! Each tooth is a superellipsoid crown over tapered-cone roots placed at
//! an arc-length station on a quartic dental arch. A case is fully
//! determined by `(corpus seed, case id)`.

mod arch;
mod io;
mod jaw;
mod split;
mod template;

pub use arch::{ArchCurve, ArchParams};
pub use io::{case_dir, load_case, load_case_dir, save_case, TeethFile, ToothEntry};
pub use jaw::{
    assemble_jaw, boundary_voxels, case_seed, generate_tooth, surface_points, GeneratedTooth, JawCase, SynthConfig,
    ToothRecord,
};
pub use split::{largest_remainder, split_dataset, DatasetSplit};
pub use template::{Crown, Root, ToothTemplate};
