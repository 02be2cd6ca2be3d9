//! Empirical covariations of the residual martingale with the drivers.

use super::DiscreteSolution;
use crate::path_engine::PathBundle;
use crate::stats::MeanSe;

/// Path averages of `Σ_i ΔM ΔW`, `Σ_i ΔM Δπ̂_j`, and the energies
/// `Σ|ΔM|²`, `Σ|Z|² h`, `Σ_j λ_j |V_j|² h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityReport {
    /// `[M^c, W^l]` at `c * d + l`.
    pub m_w: Vec<MeanSe>,
    /// `[M^c, π̂_j]` at `j * k + c`.
    pub m_pi: Vec<MeanSe>,
    pub m_energy: MeanSe,
    pub z_energy: MeanSe,
    pub v_energy: MeanSe,
}

impl OrthogonalityReport {
    /// Every covariation within `k_se` standard errors of zero.
    pub fn covariations_within(&self, k_se: f64) -> bool {
        self.m_w.iter().chain(&self.m_pi).all(|c| c.within(0.0, k_se))
    }

    /// Largest `|mean| / se` over the covariations (0 when all are exactly 0).
    pub fn worst_z_score(&self) -> f64 {
        self.m_w
            .iter()
            .chain(&self.m_pi)
            .map(|c| {
                if c.mean == 0.0 {
                    0.0
                } else {
                    c.mean.abs() / c.se
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn orthogonality_report(sol: &DiscreteSolution, bundle: &PathBundle) -> OrthogonalityReport {
    let (n, steps, k, d, m) = (sol.n_paths(), sol.steps(), sol.dim(), sol.brownian_dim(), sol.atoms());
    let h = sol.grid().h();
    let lam = sol.intensities();
    let mut comp = vec![0.0; m];
    let mut mw = vec![vec![0.0; n]; k * d];
    let mut mpi = vec![vec![0.0; n]; k * m];
    let mut me = vec![0.0; n];
    let mut ze = vec![0.0; n];
    let mut ve = vec![0.0; n];
    for p in 0..n {
        for i in 0..steps {
            let dm = sol.dm(p, i);
            let dw = bundle.dw(p, i);
            bundle.compensated_into(p, i, &mut comp);
            for c in 0..k {
                for l in 0..d {
                    mw[c * d + l][p] += dm[c] * dw[l];
                }
                for j in 0..m {
                    mpi[j * k + c][p] += dm[c] * comp[j];
                }
                me[p] += dm[c] * dm[c];
            }
            ze[p] += sol.z(p, i).iter().map(|z| z * z).sum::<f64>() * h;
            let v = sol.v(p, i);
            for j in 0..m {
                for c in 0..k {
                    ve[p] += lam[j] * v[j * k + c] * v[j * k + c] * h;
                }
            }
        }
    }
    OrthogonalityReport {
        m_w: mw.iter().map(|x| MeanSe::from_samples(x)).collect(),
        m_pi: mpi.iter().map(|x| MeanSe::from_samples(x)).collect(),
        m_energy: MeanSe::from_samples(&me),
        z_energy: MeanSe::from_samples(&ze),
        v_energy: MeanSe::from_samples(&ve),
    }
}
