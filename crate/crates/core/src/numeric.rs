//! Small numerical helpers shared by the likelihood kernels.

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Neumaier-compensated summation. Used for every likelihood reduction so the
/// result does not depend on how the terms were produced.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Element-wise compensated accumulation of equal-length vectors.
pub fn compensated_vec_sum<'a, I>(len: usize, vectors: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![CompensatedSum::new(); len];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            a.add(*x);
        }
    }
    acc.iter().map(CompensatedSum::value).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(logistic(x))` without cancellation for large |x|.
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut terms = vec![1e16, 1.0, -1e16];
        terms.extend(std::iter::repeat_n(1e-3, 1000));
        let s = compensated_sum(terms);
        assert!((s - 2.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn log_logistic_matches_direct_form() {
        for x in [-30.0, -2.0, 0.0, 1.5, 40.0] {
            let direct = logistic(x).ln();
            assert!((log_logistic(x) - direct).abs() < 1e-12);
        }
        assert!(log_logistic(-800.0).is_finite());
    }

    #[test]
    fn log_sum_exp_is_shift_stable() {
        let a = log_sum_exp(&[1000.0, 1000.0]);
        assert!((a - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
