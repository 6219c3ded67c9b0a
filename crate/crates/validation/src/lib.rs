//! Full-scale acceptance runs for `nngp-gauge`; everything lives in
//! `tests/acceptance.rs`. Kept in its own package so the long runs come last
//! in `cargo test --workspace`.
