//! File formats, CSV output and study drivers on top of `voltgrid-core`.

pub mod csvio;
pub mod scn;
pub mod study;
pub mod threaded;
