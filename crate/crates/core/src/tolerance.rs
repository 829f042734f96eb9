//! Shared numeric tolerances for the floating-point modules.
//!
//! Exact-rational code never consults these. Every approximate comparison
//! in the crate goes through this module so the tolerances are stated once.

/// Absolute tolerance for equality of floating-point quantities.
pub const EQ: f64 = 1e-10;

/// Slack granted to the favorable side of an inequality check.
pub const INEQ_SLACK: f64 = 1e-9;

/// Singular values at or below this are treated as zero in rank decisions.
pub const RANK: f64 = 1e-8;

/// Tolerance for operator eigen-relations (noise operators acting on
/// orthogonal pieces must scale them by their eigenvalue to this accuracy).
pub const OP_EIGEN: f64 = 1e-12;

/// A "1-bounded" function may exceed unit magnitude by at most this.
pub const SUP_SLACK: f64 = 1e-12;

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EQ
}

/// a <= b up to inequality slack.
pub fn leq(a: f64, b: f64) -> bool {
    a <= b + INEQ_SLACK
}

/// a >= b up to inequality slack.
pub fn geq(a: f64, b: f64) -> bool {
    a + INEQ_SLACK >= b
}
