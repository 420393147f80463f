//! Bundled network data.

use crate::native::parse_native_case;
use crate::network::NetworkCase;

/// IEEE 14-bus case in the native format.
pub const IEEE14_CASE: &str = include_str!("../data/ieee14.case");

/// The bundled IEEE 14-bus case.
pub fn ieee14() -> NetworkCase {
    parse_native_case(IEEE14_CASE).expect("bundled case is valid")
}

/// The same network as a PSS/E v26 RAW file (no cost data).
pub const IEEE14_RAW: &str = include_str!("../data/ieee14.raw");

/// Cost sidecar for [`IEEE14_RAW`].
pub const IEEE14_COSTS: &str = include_str!("../data/ieee14.costs");
