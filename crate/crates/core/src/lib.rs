// Negated float comparisons are how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod locking;
pub mod ga;
pub mod harness;
pub mod smt;
