//! Controlled visual-perception probes for vision-language models.
//!
//! The crate generates deterministic text-reading stimuli that isolate object
//! quality, size, distractors, global location, and patch-boundary cuts; runs
//! them against model backends; and scores and aggregates the replies.

pub mod adapters;
pub mod analysis;
pub mod forge;
pub mod glyphs;
pub mod metrics;
pub mod patch;
pub mod raster;

/// `round(num / den)` for non-negative integers, halves away from zero.
#[inline]
pub(crate) fn round_ratio(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}
