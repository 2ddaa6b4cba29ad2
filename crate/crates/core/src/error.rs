use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure space: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("exponent p = {0} must satisfy p >= 1")]
    InvalidExponent(f64),

    #[error("map is not measure-preserving at atom {atom}: preimage mass {preimage_mass}, atom mass {mass}")]
    NotMeasurePreserving {
        atom: usize,
        preimage_mass: f64,
        mass: f64,
    },

    #[error("map entry {index} = {value} is outside 0..{d}")]
    MapOutOfRange { index: usize, value: usize, d: usize },

    #[error("operator {name} is not Dunford-Schwartz: L1 norm {l1}, Linf norm {linf}")]
    NotDunfordSchwartz { name: String, l1: f64, linf: f64 },

    #[error("invalid entanglement map: {0}")]
    InvalidEntanglement(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("naive evaluation needs {required} stage applications, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("elimination table needs an estimated {estimate} complex entries, cap is {cap}")]
    MemoryCapExceeded { estimate: u128, cap: u128 },

    #[error("polynomial must be non-constant with integer coefficients")]
    ConstantPolynomial,

    #[error("polynomial takes nonpositive value {value} at n = {n}")]
    NonPositivePolynomial { n: u64, value: i128 },

    #[error("polynomial value overflows at n = {0}")]
    PolynomialOverflow(u64),

    #[error("defective unimodular eigenvalue {re}{im:+}i: algebraic multiplicity {algebraic}, smallest unused singular value {sigma:e}")]
    DefectiveEigenvalue {
        re: f64,
        im: f64,
        algebraic: usize,
        sigma: f64,
    },

    #[error("eigenvalue computation failed")]
    EigenFailure,

    #[error("function is not in the {part} part: off-part component has norm {residual:e}")]
    NotInPart { part: &'static str, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
