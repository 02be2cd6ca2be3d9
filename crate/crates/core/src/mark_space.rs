//! Finite atomic Lévy measures and the L²(λ) arithmetic on them.
//!
//! The jump measure is `λ = Σ_i λ_i δ_{e_i}`, so every integral against λ is
//! a finite weighted sum and a function on the mark space is just one value
//! block per atom.

use crate::error::{check_len, invalid, Result};

/// `λ = Σ_i intensity_i · δ_{mark_i}` on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkSpace {
    marks: Vec<Vec<f64>>,
    intensities: Vec<f64>,
}

impl MarkSpace {
    /// The empty measure: no jumps at all.
    pub fn empty() -> Self {
        MarkSpace {
            marks: Vec::new(),
            intensities: Vec::new(),
        }
    }

    pub fn new(marks: Vec<Vec<f64>>, intensities: Vec<f64>) -> Result<Self> {
        check_len("mark space intensities", marks.len(), intensities.len())?;
        if let Some(first) = marks.first() {
            if first.is_empty() {
                return Err(invalid("atom", "marks need at least one component"));
            }
            for m in &marks {
                check_len("mark components", first.len(), m.len())?;
                if m.iter().any(|c| !c.is_finite()) {
                    return Err(invalid("atom", "mark components must be finite"));
                }
            }
        }
        for &l in &intensities {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid("atom", "intensity must be positive"));
            }
        }
        for i in 0..marks.len() {
            for j in 0..i {
                if marks[i] == marks[j] {
                    return Err(invalid("atom", "atom marks must be pairwise distinct"));
                }
            }
        }
        let ms = MarkSpace { marks, intensities };
        // Σ λ_i (1 ∧ |e_i|²) is a finite sum of finite terms; kept as an explicit check.
        debug_assert!(ms.levy_integrability().is_finite());
        Ok(ms)
    }

    /// Single atom; the most common case in the test batteries.
    pub fn single(mark: f64, intensity: f64) -> Result<Self> {
        MarkSpace::new(vec![vec![mark]], vec![intensity])
    }

    pub fn atoms(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn mark_dim(&self) -> usize {
        self.marks.first().map_or(1, Vec::len)
    }

    pub fn marks(&self) -> &[Vec<f64>] {
        &self.marks
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn intensity(&self, j: usize) -> f64 {
        self.intensities[j]
    }

    /// Total jump rate `λ(U)`.
    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }

    /// `Σ_i λ_i (1 ∧ |e_i|²)`.
    pub fn levy_integrability(&self) -> f64 {
        self.marks
            .iter()
            .zip(&self.intensities)
            .map(|(e, l)| l * e.iter().map(|c| c * c).sum::<f64>().min(1.0))
            .sum()
    }
}

/// A function on the mark space with values in `R^k`: one block of `k`
/// numbers per atom, stored atom-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaVector {
    values: Vec<f64>,
    block: usize,
}

impl LambdaVector {
    pub fn new(values: Vec<f64>, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(invalid("block", "block size must be at least 1"));
        }
        if values.len() % block != 0 {
            return Err(crate::Error::DimensionMismatch {
                context: "lambda vector blocks",
                expected: (values.len() / block + 1) * block,
                got: values.len(),
            });
        }
        Ok(LambdaVector { values, block })
    }

    /// Scalar-valued (`k = 1`) function on the atoms.
    pub fn scalar(values: Vec<f64>) -> Self {
        LambdaVector { values, block: 1 }
    }

    pub fn zeros(ms: &MarkSpace, block: usize) -> Self {
        LambdaVector {
            values: vec![0.0; ms.atoms() * block.max(1)],
            block: block.max(1),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn atoms(&self) -> usize {
        self.values.len() / self.block
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.values[j * self.block..(j + 1) * self.block]
    }

    pub fn scaled(&self, c: f64) -> Self {
        LambdaVector {
            values: self.values.iter().map(|v| c * v).collect(),
            block: self.block,
        }
    }

    fn conform(&self, ms: &MarkSpace) -> Result<()> {
        check_len("lambda vector atoms", ms.atoms(), self.atoms())
    }
}

/// `‖v‖_{L²_λ} = sqrt(Σ_i λ_i |v_i|²)`.
pub fn l2_lambda_norm(v: &LambdaVector, ms: &MarkSpace) -> Result<f64> {
    v.conform(ms)?;
    Ok(l2_lambda_norm_raw(v.values(), v.block(), ms.intensities()))
}

/// Unchecked form used on the solver's flat arrays.
pub fn l2_lambda_norm_raw(values: &[f64], block: usize, intensities: &[f64]) -> f64 {
    values
        .chunks(block)
        .zip(intensities)
        .map(|(b, l)| l * b.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// `∫ v(e) κ(e) λ(de) = Σ_i λ_i v_i κ_i` for scalar-valued `v`, `κ`.
pub fn integrate_kernel(v: &LambdaVector, kappa: &LambdaVector, ms: &MarkSpace) -> Result<f64> {
    v.conform(ms)?;
    kappa.conform(ms)?;
    if v.block() != 1 || kappa.block() != 1 {
        return Err(crate::Error::DimensionMismatch {
            context: "integrate_kernel block size",
            expected: 1,
            got: v.block().max(kappa.block()),
        });
    }
    Ok(integrate_kernel_raw(v.values(), kappa.values(), ms.intensities()))
}

pub fn integrate_kernel_raw(v: &[f64], kappa: &[f64], intensities: &[f64]) -> f64 {
    v.iter()
        .zip(kappa)
        .zip(intensities)
        .map(|((a, b), l)| l * a * b)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_atoms(l1: f64, l2: f64) -> MarkSpace {
        MarkSpace::new(vec![vec![1.0], vec![-0.5]], vec![l1, l2]).unwrap()
    }

    #[test]
    fn norm_single_atom() {
        let ms = MarkSpace::single(1.0, 2.0).unwrap();
        let n = l2_lambda_norm(&LambdaVector::scalar(vec![3.0]), &ms).unwrap();
        assert!((n - 18f64.sqrt()).abs() < 1e-12);
        assert!((n - 4.242640687).abs() < 1e-9);
    }

    #[test]
    fn norm_of_zero_is_zero() {
        let ms = two_atoms(1.0, 4.0);
        assert_eq!(l2_lambda_norm(&LambdaVector::zeros(&ms, 1), &ms).unwrap(), 0.0);
    }

    #[test]
    fn norm_two_atoms() {
        let ms = two_atoms(1.0, 4.0);
        let n = l2_lambda_norm(&LambdaVector::scalar(vec![1.0, 0.5]), &ms).unwrap();
        assert!((n - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kernel_integrals() {
        let ms = two_atoms(1.0, 4.0);
        let v = LambdaVector::scalar(vec![1.0, 1.0]);
        let k = LambdaVector::scalar(vec![0.0, 0.0]);
        assert_eq!(integrate_kernel(&v, &k, &ms).unwrap(), 0.0);

        let ms1 = MarkSpace::single(0.3, 3.0).unwrap();
        let r = integrate_kernel(
            &LambdaVector::scalar(vec![2.0]),
            &LambdaVector::scalar(vec![-1.0]),
            &ms1,
        )
        .unwrap();
        assert_eq!(r, -6.0);

        let ms2 = two_atoms(1.0, 1.0);
        let r = integrate_kernel(
            &LambdaVector::scalar(vec![1.0, -1.0]),
            &LambdaVector::scalar(vec![0.5, 0.5]),
            &ms2,
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let ms = two_atoms(1.0, 4.0);
        assert!(l2_lambda_norm(&LambdaVector::scalar(vec![1.0]), &ms).is_err());
        let bad = LambdaVector::new(vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert!(integrate_kernel(&bad, &bad, &ms).is_err());
    }

    #[test]
    fn construction_invariants() {
        assert!(MarkSpace::single(1.0, -2.0).is_err());
        assert!(MarkSpace::single(1.0, 0.0).is_err());
        assert!(MarkSpace::new(vec![vec![1.0], vec![1.0]], vec![1.0, 2.0]).is_err());
        let empty = MarkSpace::empty();
        assert_eq!(empty.atoms(), 0);
        assert_eq!(l2_lambda_norm(&LambdaVector::scalar(vec![]), &empty).unwrap(), 0.0);
    }

    fn space_and_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..6).prop_flat_map(|m| {
            (
                prop::collection::vec(0.01f64..10.0, m),
                prop::collection::vec(-5.0f64..5.0, m),
                prop::collection::vec(-5.0f64..5.0, m),
            )
        })
    }

    fn distinct_marks(m: usize) -> Vec<Vec<f64>> {
        (0..m).map(|i| vec![i as f64 + 0.5]).collect()
    }

    proptest! {
        #[test]
        fn homogeneity((lam, v, _w) in space_and_pair(), c in -10.0f64..10.0) {
            let ms = MarkSpace::new(distinct_marks(lam.len()), lam).unwrap();
            let v = LambdaVector::scalar(v);
            let lhs = l2_lambda_norm(&v.scaled(c), &ms).unwrap();
            let rhs = c.abs() * l2_lambda_norm(&v, &ms).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn triangle_inequality((lam, v, w) in space_and_pair()) {
            let ms = MarkSpace::new(distinct_marks(lam.len()), lam).unwrap();
            let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            let n = |x: Vec<f64>| l2_lambda_norm(&LambdaVector::scalar(x), &ms).unwrap();
            prop_assert!(n(sum) <= n(v.clone()) + n(w.clone()) + 1e-12);
        }

        #[test]
        fn cauchy_schwarz((lam, v, k) in space_and_pair()) {
            let ms = MarkSpace::new(distinct_marks(lam.len()), lam).unwrap();
            let v = LambdaVector::scalar(v);
            let k = LambdaVector::scalar(k);
            let lhs = integrate_kernel(&v, &k, &ms).unwrap().abs();
            let rhs = l2_lambda_norm(&v, &ms).unwrap() * l2_lambda_norm(&k, &ms).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }
}
