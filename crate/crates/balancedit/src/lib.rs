//! Codebook-based editing of a small multimodal transformer.
//!
//! The crate is a self-contained laboratory: a from-scratch decoder with
//! hand-written gradients ([`numerics`], [`backbone`]), a codebook of edits
//! with per-edit influence radii ([`codebook`], [`editor`]), a synthetic
//! image/question world to edit against ([`worldgen`]), and an evaluation
//! harness that scores reliability, generality, and locality ([`eval`]).

pub mod backbone;
pub mod codebook;
pub mod config;
pub mod editor;
pub mod eval;
pub mod numerics;
pub mod worldgen;

/// Derives independent stream seeds from one master seed (splitmix64 step).
/// Every randomized stage gets its own stream so adding a stage never
/// perturbs the draws of another.
pub fn subseed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
