//! Regularized vacuum stress of a massless scalar field near the axis of
//! cones, wedges and the Dowker space.
//!
//! The crate is layered bottom-up:
//!
//! * [`scalar`] and [`jet`]: arithmetic carriers (binary64, double-double,
//!   forward-mode Taylor jets).
//! * [`kernels`]: closed-form Euclidean Green functions, image and
//!   periodicity sums, and the name-keyed [`kernels::KernelRegistry`].
//! * [`stress`]: cylindrical point-split assembly of `T_00, T_rr, T_⊥⊥, T_zz`.
//! * [`asymptotics`]: small-radius exponent fits, analyticity verdicts and
//!   coupling roots.
//! * [`oracles`]: finite differences, Richardson extrapolation and explicit
//!   image sums used to certify everything above.
//! * [`verify`]: the invariant suites behind the `verify` command.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod jet;
pub mod kernels;
pub mod oracles;
pub mod scalar;
pub mod stress;
pub mod verify;

pub use error::{Error, Result};
pub use jet::{Jet, Layout};
pub use kernels::{ConeGeometry, Geometry, PointPair, SumControl};
pub use scalar::{Dd, Precision, Scalar};
pub use stress::{Component, Coupling, SplitAxis, SplitConfig, StressPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
