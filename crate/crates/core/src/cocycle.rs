//! Transfer matrices of the eigenvalue equation `Uψ = e^{iE}ψ`, rescaled
//! cocycle products, Lyapunov estimates and forward shooting.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::model::{cis, PhaseSequence, Scattering};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// A 2×2 complex matrix acting on coefficient pairs `(c_{2k-2}, c_{2k-1})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferMatrix(pub [[Complex64; 2]; 2]);

impl TransferMatrix {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self([[one, zero], [zero, one]])
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        Self([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.norm() < 1e-300 {
            return Err(Error::Numeric("singular transfer matrix".into()));
        }
        let m = &self.0;
        Ok(Self([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    /// Induced ∞-norm (largest absolute row sum).
    pub fn sup_norm(&self) -> f64 {
        let m = &self.0;
        (m[0][0].norm() + m[0][1].norm()).max(m[1][0].norm() + m[1][1].norm())
    }

    fn scale(&mut self, s: f64) {
        for row in &mut self.0 {
            for v in row {
                *v *= s;
            }
        }
    }
}

fn require_transmission(s: Scattering) -> Result<()> {
    if s.t <= 0.0 {
        return Err(Error::SingularModel("transfer matrices need t > 0"));
    }
    Ok(())
}

/// `T_k(E)` built from the phases at `2k-2`, `2k-1`, `2k`.
pub fn transfer_matrix<P: PhaseSequence + ?Sized>(
    p: &P,
    s: Scattering,
    k: i64,
    e: f64,
) -> Result<TransferMatrix> {
    require_transmission(s)?;
    let (r, t) = (s.r, s.t);
    let (th0, th1, th2) = (p.theta(2 * k - 2), p.theta(2 * k - 1), p.theta(2 * k));
    let (al0, al1, al2) = (p.alpha(2 * k - 2), p.alpha(2 * k - 1), p.alpha(2 * k));
    let (ga0, ga1, ga2) = (p.gamma(2 * k - 2), p.gamma(2 * k - 1), p.gamma(2 * k));
    let rt = r / t;
    let t2 = t * t;
    let r2t2 = r * r / t2;
    let m11 = -cis(-(e + ga1 + ga0 + th1 + th0));
    let m12 = I * rt * (cis(-(e + ga1 - al0 + th1 + th0)) - cis(-(ga1 - al1)));
    let m21 = I * rt * (cis(-(th0 - th2 + ga2 + ga1 + ga0 + al1)) - cis(-(e + th0 + th1 + ga2 + ga1 + ga0 + al2)));
    let m22 = -cis(e + th2 + th1 - ga2 - ga1) / t2
        + r2t2 * cis(-(ga2 + ga1)) * (cis(th2 - th0 + al0 - al1) + cis(-(al2 - al1)))
        - r2t2 * cis(-(e + th0 + th1 + ga2 + ga1 + al2 - al0));
    Ok(TransferMatrix([[m11, m12], [m21, m22]]))
}

/// `(a_1(E), a_2(E))` with `(c_2, c_3) = c_1 (a_1, a_2)` on the half line.
pub fn boundary_vector<P: PhaseSequence + ?Sized>(p: &P, s: Scattering, e: f64) -> Result<[Complex64; 2]> {
    require_transmission(s)?;
    let (r, t) = (s.r, s.t);
    let (th0, th1, th2) = (p.theta(0), p.theta(1), p.theta(2));
    let (al1, al2) = (p.alpha(1), p.alpha(2));
    let (ga1, ga2) = (p.gamma(1), p.gamma(2));
    let t2 = t * t;
    let a1 = I / t * (cis(-(e + ga1 + th1 + th0)) - r * cis(-(ga1 - al1)));
    let a2 = -cis(e + th2 + th1 - ga2 - ga1) / t2
        + r / t2 * cis(-(ga2 + ga1)) * (cis(th2 - th0 - al1) + r * cis(-(al2 - al1)))
        - r / t2 * cis(-(e + th0 + th1 + ga2 + ga1 + al2));
    Ok([a1, a2])
}

/// Running product `T_n ⋯ T_1` kept at unit sup norm with the removed scale
/// accumulated in `log_scale`.
#[derive(Clone, Debug)]
pub struct CocycleAccumulator {
    current: TransferMatrix,
    log_scale: f64,
    count: u64,
}

impl Default for CocycleAccumulator {
    fn default() -> Self {
        Self {
            current: TransferMatrix::identity(),
            log_scale: 0.0,
            count: 0,
        }
    }
}

impl CocycleAccumulator {
    /// Left-multiplies by `m`.
    pub fn push(&mut self, m: &TransferMatrix) {
        self.current = m.mul(&self.current);
        self.count += 1;
    }

    pub fn rescale(&mut self) -> Result<()> {
        let n = self.current.sup_norm();
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::Numeric(format!(
                "cocycle norm {n} after {} factors (log scale {})",
                self.count, self.log_scale
            )));
        }
        self.log_scale += Float::ln(n);
        self.current.scale(1.0 / n);
        Ok(())
    }

    /// `log ‖T_n ⋯ T_1‖` reconstructed from the scale and the current factor.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + Float::ln(self.current.sup_norm())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn current(&self) -> &TransferMatrix {
        &self.current
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CocycleResult {
    pub gamma: f64,
    /// Batch-means spread over 32 segments; a convergence gauge, not an i.i.d. error bar.
    pub stderr: f64,
    pub n_factors: u64,
}

pub const SEGMENTS: usize = 32;

/// `γ̂ = log ‖T_n ⋯ T_1‖ / n` with the induced ∞-norm.
pub fn lyapunov<P: PhaseSequence + ?Sized>(
    p: &P,
    s: Scattering,
    e: f64,
    n_factors: u64,
    rescale_every: u64,
) -> Result<CocycleResult> {
    require_transmission(s)?;
    if n_factors < 1000 {
        return Err(invalid("n_factors", format!("{n_factors} is below 1000")));
    }
    if rescale_every == 0 {
        return Err(invalid("rescale_every", "must be positive"));
    }
    let mut acc = CocycleAccumulator::default();
    let mut marks = Vec::with_capacity(SEGMENTS + 1);
    marks.push((0u64, 0.0));
    let boundary = |s: usize| s as u64 * n_factors / SEGMENTS as u64;
    for k in 1..=n_factors {
        acc.push(&transfer_matrix(p, s, k as i64, e)?);
        if k % rescale_every == 0 || acc.current.sup_norm() > 1e150 {
            acc.rescale()?;
        }
        if k == boundary(marks.len()) {
            marks.push((k, acc.log_norm()));
        }
    }
    let total = acc.log_norm();
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite log norm at E = {e}")));
    }
    let gamma = total / n_factors as f64;
    let rates: Vec<f64> = marks
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0) as f64)
        .collect();
    let m = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (rates.len() - 1) as f64;
    Ok(CocycleResult {
        gamma,
        stderr: Float::sqrt(var / rates.len() as f64),
        n_factors,
    })
}

/// Coefficients `c_1, c_2, …, c_{2 n_pairs + 1}` of a generalized half-line
/// eigenfunction.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingSolution {
    pub c1: Complex64,
    /// `c_2, c_3, …`; pair `j` is `(pairs[2j], pairs[2j+1]) = (c_{2j+2}, c_{2j+3})`.
    pub pairs: Vec<Complex64>,
}

impl ShootingSolution {
    /// Coefficient of site `k ≥ 1`.
    pub fn coefficient(&self, k: usize) -> Option<Complex64> {
        match k {
            0 => None,
            1 => Some(self.c1),
            _ => self.pairs.get(k - 2).copied(),
        }
    }
}

pub fn solve_forward<P: PhaseSequence + ?Sized>(
    p: &P,
    s: Scattering,
    e: f64,
    c1: Complex64,
    n_pairs: usize,
) -> Result<ShootingSolution> {
    let a = boundary_vector(p, s, e)?;
    let mut v = [c1 * a[0], c1 * a[1]];
    let mut pairs = Vec::with_capacity(2 * n_pairs);
    for k in 1..=n_pairs {
        if k > 1 {
            v = transfer_matrix(p, s, k as i64, e)?.apply(v);
        }
        pairs.push(v[0]);
        pairs.push(v[1]);
    }
    Ok(ShootingSolution { c1, pairs })
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Numeric("fewer than two points to fit".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("degenerate abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Envelope slope of `ln (|c_{2k}|² + |c_{2k+1}|²)^{1/2}` against `2k` over the
/// middle half of the pairs; `coeffs[2j], coeffs[2j+1]` is pair `j`.
pub fn decay_rate(coeffs: &[Complex64]) -> Result<f64> {
    let n_pairs = coeffs.len() / 2;
    if n_pairs < 16 {
        return Err(invalid("coeffs", format!("{n_pairs} pairs; at least 16 are needed")));
    }
    let (lo, hi) = (n_pairs / 4, n_pairs - n_pairs / 4);
    let pts: Vec<(f64, f64)> = (lo..hi)
        .filter_map(|j| {
            let m = coeffs[2 * j].norm_sqr() + coeffs[2 * j + 1].norm_sqr();
            (m > 0.0).then(|| (2.0 * j as f64, 0.5 * Float::ln(m)))
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::Numeric("envelope vanishes on the fit range".into()));
    }
    fit_slope(&pts)
}
