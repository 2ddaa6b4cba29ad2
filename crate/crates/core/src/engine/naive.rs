//! Reference evaluator: enumerate every tuple `(n_1, …, n_k) ∈ {1..N}^k` and
//! push `f` through the whole operator chain for each one.

use num_complex::Complex64;

use super::{EntangledProblem, EvalOptions};
use crate::error::{Error, Result};
use crate::par;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const TUPLES_PER_CHUNK: usize = 64;

/// Per-variable exponent tables `e_j(n)`, each of length `N`.
pub(crate) fn naive_sum(
    p: &EntangledProblem,
    f: &[Complex64],
    exponents: &[Vec<u64>],
    horizon: usize,
    absolute: bool,
    opts: &EvalOptions,
) -> Result<Vec<Complex64>> {
    let k = p.ent.k();
    let m = p.ent.m();
    let tuples = (horizon as u128)
        .checked_pow(k as u32)
        .ok_or(Error::BudgetExceeded {
            required: u128::MAX,
            budget: opts.naive_budget,
        })?;
    let required = tuples.saturating_mul(m as u128);
    if required > opts.naive_budget {
        return Err(Error::BudgetExceeded {
            required,
            budget: opts.naive_budget,
        });
    }
    let tuples = tuples as usize;
    let d = f.len();
    let alpha = p.ent.alpha_zero_based();
    let chunks = tuples.div_ceil(TUPLES_PER_CHUNK);

    let partials = par::map_indices(opts.parallelism, chunks, |c| {
        let mut acc = vec![ZERO; d];
        let mut g = vec![ZERO; d];
        let mut scratch = vec![ZERO; d];
        let mut digits = vec![0usize; k];
        for t in c * TUPLES_PER_CHUNK..((c + 1) * TUPLES_PER_CHUNK).min(tuples) {
            let mut rem = t;
            for slot in digits.iter_mut().rev() {
                *slot = rem % horizon;
                rem /= horizon;
            }
            g.copy_from_slice(f);
            for i in 0..m {
                let j = alpha[i];
                p.t[i].apply_power_in_place(&mut g, exponents[j][digits[j]], &mut scratch);
                if i + 1 < m {
                    p.a[i].apply_in_place(&mut g, &mut scratch);
                }
            }
            for (a, x) in acc.iter_mut().zip(&g) {
                if absolute {
                    *a += x.norm();
                } else {
                    *a += x;
                }
            }
        }
        acc
    });

    let mut total = vec![ZERO; d];
    for part in &partials {
        for (a, x) in total.iter_mut().zip(part) {
            *a += x;
        }
    }
    let scale = 1.0 / tuples as f64;
    Ok(total.into_iter().map(|x| x * scale).collect())
}
