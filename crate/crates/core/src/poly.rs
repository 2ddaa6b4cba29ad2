use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer polynomial `q(n) = c_0 + c_1 n + … + c_r n^r` used as an exponent
/// or subsequence index. Must be non-constant and positive on the indices it
/// is evaluated at.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct PolynomialIndex {
    coeffs: Vec<i64>,
}

impl TryFrom<Vec<i64>> for PolynomialIndex {
    type Error = Error;

    fn try_from(coeffs: Vec<i64>) -> Result<Self> {
        PolynomialIndex::new(coeffs)
    }
}

impl From<PolynomialIndex> for Vec<i64> {
    fn from(p: PolynomialIndex) -> Self {
        p.coeffs
    }
}

impl PolynomialIndex {
    /// Coefficients in increasing degree.
    pub fn new(mut coeffs: Vec<i64>) -> Result<Self> {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0 {
            coeffs.pop();
        }
        if coeffs.len() < 2 {
            return Err(Error::ConstantPolynomial);
        }
        Ok(Self { coeffs })
    }

    pub fn identity() -> Self {
        Self { coeffs: vec![0, 1] }
    }

    pub fn square() -> Self {
        Self { coeffs: vec![0, 0, 1] }
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, n: u64) -> Result<i128> {
        let x = n as i128;
        let mut acc: i128 = 0;
        for &c in self.coeffs.iter().rev() {
            acc = acc
                .checked_mul(x)
                .and_then(|v| v.checked_add(c as i128))
                .ok_or(Error::PolynomialOverflow(n))?;
        }
        Ok(acc)
    }

    /// `(q(1), …, q(N))`, rejecting the first nonpositive value.
    pub fn positive_values(&self, count: usize) -> Result<Vec<u64>> {
        (1..=count as u64)
            .map(|n| {
                let v = self.eval(n)?;
                if v <= 0 {
                    return Err(Error::NonPositivePolynomial { n, value: v });
                }
                u64::try_from(v).map_err(|_| Error::PolynomialOverflow(n))
            })
            .collect()
    }
}
