pub mod gen;
pub mod gfn;
pub mod inconsistency;
pub mod lir;
pub mod synth;
pub mod verify;

use crate::config::usage;

pub fn required<T>(value: Option<T>, name: &str) -> anyhow::Result<T> {
    match value {
        Some(v) => Ok(v),
        None => usage(format!("missing required value --{name} (flag or config)")),
    }
}

/// Core parse errors on enumerated flag values are usage errors.
pub fn parse_flag<T: std::str::FromStr<Err = lirlab_core::Error>>(value: &str) -> anyhow::Result<T> {
    value.parse().or_else(|e: lirlab_core::Error| usage(e.to_string()))
}
