//! Deterministic reductions over per-path samples.
//!
//! Every Monte-Carlo mean in the crate goes through [`pairwise_sum`] on a
//! vector collected in path order, so results do not depend on how many
//! worker threads produced the samples.

/// Pairwise (cascade) summation with a fixed split order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let se = if n > 1 {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se, n }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.se.is_finite()
    }

    /// `|mean - target| <= k * se`, with an absolute floor for zero-variance estimates.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + 1e-12 * (1.0 + target.abs())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample correlation of two equally long samples.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let cov: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    pairwise_sum(&cov) / (pairwise_sum(&va) * pairwise_sum(&vb)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn mean_se_of_constant_is_zero_variance() {
        let m = MeanSe::from_samples(&[2.5; 17]);
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.se, 0.0);
        assert!(m.within(2.5, 3.0));
    }

    #[test]
    fn se_matches_textbook_formula() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let m = MeanSe::from_samples(&xs);
        // sample variance 5/3, se = sqrt(5/3/4)
        assert!((m.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
