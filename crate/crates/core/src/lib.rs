//! Entangled ergodic averages of Dunford-Schwartz operators on finite
//! probability spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`measure`]: finite probability spaces, functions and weighted norms;
//! * [`operators`]: dense operators, Dunford-Schwartz checks, Koopman and
//!   Volterra constructors, the linear modulus;
//! * [`jdlg`]: the reversible/stable spectral splitting of an operator;
//! * [`engine`]: entangled averages by enumeration and by variable elimination;
//! * [`weights`]: weight sequences, Cesàro and Besicovitch diagnostics,
//!   weighted averages;
//! * [`splitting`]: twisted-compactness certificates and the recursive
//!   splitting tree with its numerical bounds.

pub mod engine;
pub mod error;
pub mod jdlg;
pub mod measure;
pub mod operators;
pub mod par;
pub mod poly;
pub mod splitting;
pub mod weights;

pub use error::{Error, Result};
pub use measure::{FiniteMeasureSpace, Func};
pub use operators::OperatorRep;
pub use par::Parallelism;
pub use poly::PolynomialIndex;
