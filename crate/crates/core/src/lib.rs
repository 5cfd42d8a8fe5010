// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Constants are kept with the digits they are quoted to.
#![allow(clippy::excessive_precision)]
pub mod analysis;
pub mod error;
pub mod evolution;
pub mod measure;
pub mod quad;
pub mod regularized;
pub mod testfn;
pub mod trajectory;
pub mod weakops;
