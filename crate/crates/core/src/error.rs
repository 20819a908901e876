use thiserror::Error;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    /// A state index or value falls outside its grid.
    #[error("{what} = {value} lies outside its grid [{min}, {max}]")]
    Domain {
        what: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// Explicit Euler step would not be monotone: some node's total exit rate
    /// times `dt` exceeds the bound.
    #[error(
        "stability bound violated in {scheme}: exit rate {rate:.6e}/day x dt {dt:.6e} = {product:.4} > {bound}"
    )]
    Stability {
        scheme: &'static str,
        rate: f64,
        dt: f64,
        product: f64,
        bound: f64,
    },

    #[error("invalid initial mass: {0}")]
    InvalidMass(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The fixed-point loop ran out of iterations; carries the sup-distance trace.
    #[error("fixed-point iteration did not converge in {iterations} iterations (last distance {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        trace: Vec<f64>,
    },
}
