use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::expm::expm;
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const FREQ_SUM_TOL: f64 = 1e-12;
const BALANCE_TOL: f64 = 1e-10;
const INPUT_FREQ_TOL: f64 = 1e-8;

/// Reversible continuous-time Markov chain: rate matrix `Q` and its
/// stationary distribution `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    q: DMatrix<f64>,
    pi: DVector<f64>,
}

impl RateModel {
    /// Validates that `Q` is a rate matrix, `π` a positive probability
    /// vector, and that `(Q, π)` satisfy stationarity and detailed balance.
    pub fn new(q: DMatrix<f64>, pi: DVector<f64>) -> Result<Self> {
        let m = q.nrows();
        if m < 2 || !q.is_square() || pi.len() != m {
            return Err(Error::InvalidModel(format!(
                "need an m x m rate matrix with m >= 2 and a length-m frequency vector (got {}x{} and {})",
                q.nrows(),
                q.ncols(),
                pi.len()
            )));
        }
        if q.iter().chain(pi.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("non-finite entry".into()));
        }
        let scale = q.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
        for i in 0..m {
            for j in 0..m {
                if i != j && q[(i, j)] < 0.0 {
                    return Err(Error::InvalidModel(format!("negative rate q[{i}][{j}]")));
                }
            }
            let row: f64 = q.row(i).sum();
            if row.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidModel(format!("row {i} sums to {row:e}, not 0")));
            }
        }
        if pi.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidModel("stationary frequencies must be positive".into()));
        }
        if (pi.sum() - 1.0).abs() > FREQ_SUM_TOL {
            return Err(Error::InvalidModel(format!("frequencies sum to {}", pi.sum())));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let gap = pi[i] * q[(i, j)] - pi[j] * q[(j, i)];
                if gap.abs() > BALANCE_TOL * scale {
                    return Err(Error::InvalidModel(format!(
                        "detailed balance fails for states {i},{j} (gap {gap:e})"
                    )));
                }
            }
        }
        let flow = q.transpose() * &pi;
        if flow.amax() > BALANCE_TOL * scale {
            return Err(Error::InvalidModel("π is not stationary for Q".into()));
        }
        Ok(RateModel { q, pi })
    }

    pub fn m(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Expected number of substitutions per unit time at stationarity,
    /// `-Σ π_i q_ii`.
    pub fn mean_rate(&self) -> f64 {
        -(0..self.m()).map(|i| self.pi[i] * self.q[(i, i)]).sum::<f64>()
    }

    /// Largest exit rate `max_i |q_ii|`, the uniformization rate.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.m()).map(|i| -self.q[(i, i)]).fold(0.0, f64::max)
    }

    pub fn rescaled(&self, factor: f64) -> RateModel {
        RateModel { q: &self.q * factor, pi: self.pi.clone() }
    }

    /// `P(t) = exp(Qt)` by scaling and squaring.
    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(DMatrix::identity(self.m(), self.m()));
        }
        let mut p = expm(&(&self.q * t));
        clamp_probabilities(&mut p)?;
        Ok(p)
    }

    /// Spectral decomposition through the symmetrized matrix
    /// `diag(π)^½ Q diag(π)^-½`.
    pub fn eigen(&self) -> ReversibleEigen {
        let m = self.m();
        let sqrt_pi = self.pi.map(f64::sqrt);
        let mut sym = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                sym[(i, j)] = sqrt_pi[i] * self.q[(i, j)] / sqrt_pi[j];
            }
        }
        // Remove rounding asymmetry before the symmetric solver.
        let sym = (&sym + sym.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        ReversibleEigen { values: eig.eigenvalues, vectors: eig.eigenvectors, sqrt_pi }
    }
}

/// Eigen-decomposition route to `P(t)`, independent of the Padé path.
#[derive(Debug, Clone)]
pub struct ReversibleEigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    sqrt_pi: DVector<f64>,
}

impl ReversibleEigen {
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        check_time(t)?;
        let m = self.values.len();
        let scaled = DMatrix::from_fn(m, m, |i, k| self.vectors[(i, k)] * (self.values[k] * t).exp());
        let core = scaled * self.vectors.transpose();
        let mut p = DMatrix::from_fn(m, m, |i, j| core[(i, j)] * self.sqrt_pi[j] / self.sqrt_pi[i]);
        clamp_probabilities(&mut p)?;
        Ok(p)
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} must be finite and nonnegative")));
    }
    Ok(())
}

fn clamp_probabilities(p: &mut DMatrix<f64>) -> Result<()> {
    super::clamp_nonnegative(p, "transition matrix")?;
    for x in p.iter_mut() {
        if *x > 1.0 {
            *x = 1.0;
        }
    }
    Ok(())
}

/// General reversible model on `m` states: `q_ij = r_ij π_j` for `i != j`,
/// with exchangeabilities `r` listed for `i < j` in row-major order.
/// With `normalize`, `Q` is rescaled to one expected substitution per unit
/// time.
pub fn build_reversible(
    m: usize,
    exchangeabilities: &[f64],
    base_freqs: &[f64],
    normalize: bool,
) -> Result<RateModel> {
    if m < 2 {
        return Err(Error::InvalidModel(format!("state count {m} < 2")));
    }
    let n_pairs = m * (m - 1) / 2;
    if exchangeabilities.len() != n_pairs {
        return Err(Error::InvalidModel(format!(
            "expected {n_pairs} exchangeabilities for {m} states, got {}",
            exchangeabilities.len()
        )));
    }
    if base_freqs.len() != m {
        return Err(Error::InvalidModel(format!(
            "expected {m} base frequencies, got {}",
            base_freqs.len()
        )));
    }
    if exchangeabilities.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidModel("exchangeabilities must be finite and nonnegative".into()));
    }
    if base_freqs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidModel("base frequencies must be positive".into()));
    }
    let total: f64 = base_freqs.iter().sum();
    if (total - 1.0).abs() > INPUT_FREQ_TOL {
        return Err(Error::InvalidModel(format!("base frequencies sum to {total}, not 1")));
    }
    let pi = DVector::from_iterator(m, base_freqs.iter().map(|p| p / total));

    let mut q = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            q[(i, j)] = exchangeabilities[k] * pi[j];
            q[(j, i)] = exchangeabilities[k] * pi[i];
            k += 1;
        }
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -off;
    }
    if normalize {
        let rate = -(0..m).map(|i| pi[i] * q[(i, i)]).sum::<f64>();
        if rate <= 0.0 {
            return Err(Error::InvalidModel("cannot normalize a model with zero rates".into()));
        }
        q /= rate;
    }
    RateModel::new(q, pi)
}

/// Four-state GTR model. Exchangeabilities are ordered AC, AG, AT, CG, CT,
/// GT; frequencies A, C, G, T.
pub fn build_gtr(exchangeabilities: &[f64], base_freqs: &[f64], normalize: bool) -> Result<RateModel> {
    if exchangeabilities.len() != 6 || base_freqs.len() != 4 {
        return Err(Error::InvalidModel("GTR needs 6 exchangeabilities and 4 frequencies".into()));
    }
    build_reversible(4, exchangeabilities, base_freqs, normalize)
}

/// Normalized Jukes–Cantor model.
pub fn jukes_cantor() -> RateModel {
    build_gtr(&[1.0; 6], &[0.25; 4], true).expect("JC69 is valid")
}

/// Two-state chain `Q = [[-α, α], [β, -β]]`.
pub fn build_two_state(alpha: f64, beta: f64) -> Result<RateModel> {
    if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidModel("two-state rates must be positive".into()));
    }
    let q = DMatrix::from_row_slice(2, 2, &[-alpha, alpha, beta, -beta]);
    let pi = DVector::from_vec(vec![beta / (alpha + beta), alpha / (alpha + beta)]);
    RateModel::new(q, pi)
}

pub fn transition_matrix(model: &RateModel, t: f64) -> Result<DMatrix<f64>> {
    model.transition_matrix(t)
}
