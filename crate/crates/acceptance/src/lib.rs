//! Acceptance suite for `critical-sparse`; see `tests/acceptance.rs`.
