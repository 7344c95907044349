//! Convex bodies, Euclidean projections and penalty functions.

mod body;
mod penalty;

pub use body::{
    lp_norm, BodySpec, ConvexBody, DYKSTRA_MAX_ITER, DYKSTRA_TOL, LP_MULTIPLIER_TOL, MEMBERSHIP_TOL,
};
pub use penalty::{
    penalty_constants, regularize, AffineConstraint, ConstantsReport, Constraint, ConstraintFn,
    LpNormConstraint, Penalty, PenaltySpec,
};
