//! Five-diagonal unitary truncations of the Floquet operator, built either from
//! the closed-form columns or from the product of the two block-diagonal
//! factors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::model::{cis, reduce_angle, Fnv, ModelParams, PhaseSequence, RankOneShifted, Scattering};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Index window of a truncation.
///
/// Half-line sites `1..=sites` are stored at `site - 1`. Full-line sites
/// `-half_width..=half_width` are stored at `site + half_width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    HalfLine { sites: usize },
    FullLine { half_width: usize },
}

impl Geometry {
    pub fn n_dim(&self) -> usize {
        match *self {
            Geometry::HalfLine { sites } => sites,
            Geometry::FullLine { half_width } => 2 * half_width + 1,
        }
    }

    pub fn first_site(&self) -> i64 {
        match *self {
            Geometry::HalfLine { .. } => 1,
            Geometry::FullLine { half_width } => -(half_width as i64),
        }
    }

    pub fn last_site(&self) -> i64 {
        self.first_site() + self.n_dim() as i64 - 1
    }

    pub fn site_of(&self, index: usize) -> i64 {
        self.first_site() + index as i64
    }

    pub fn index_of(&self, site: i64) -> Option<usize> {
        if site < self.first_site() || site > self.last_site() {
            None
        } else {
            Some((site - self.first_site()) as usize)
        }
    }

    pub fn is_half_line(&self) -> bool {
        matches!(self, Geometry::HalfLine { .. })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Geometry::HalfLine { sites } => {
                if sites < 8 || sites % 2 != 0 {
                    return Err(invalid("n_dim", format!("{sites} must be even and at least 8")));
                }
            }
            Geometry::FullLine { half_width } => {
                if half_width < 8 || half_width % 2 != 0 {
                    return Err(invalid(
                        "half_width",
                        format!("{half_width} must be even and at least 8"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Treatment of the blocks cut by the truncation window.
///
/// `Open` is the plain restriction of the infinite operator: columns next to a
/// cut lose their outgoing entries. `Closed` replaces each cut block by the
/// unimodular phase `e^{-iθ_k}` of that block, which makes the truncation
/// exactly unitary; spectral computations use it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    #[default]
    Open,
    Closed,
}

/// Pentadiagonal matrix stored by columns: `cols[c][row - c + 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedUnitary {
    geometry: Geometry,
    boundary: Boundary,
    cols: Vec<[Complex64; 5]>,
    params_digest: u64,
}

impl BandedUnitary {
    fn zeros(geometry: Geometry, boundary: Boundary, params_digest: u64) -> Self {
        Self {
            geometry,
            boundary,
            cols: vec![[ZERO; 5]; geometry.n_dim()],
            params_digest,
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n_dim(&self) -> usize {
        self.cols.len()
    }

    /// Digest of the parameters the operator was assembled from (0 for explicit phases).
    pub fn params_digest(&self) -> u64 {
        self.params_digest
    }

    /// Entry `(row, col)` in storage indices.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let d = row as isize - col as isize + 2;
        if (0..5).contains(&d) && row < self.n_dim() {
            self.cols[col][d as usize]
        } else {
            ZERO
        }
    }

    fn set_at(&mut self, row: i64, col: i64, value: Complex64) {
        let (Some(r), Some(c)) = (self.geometry.index_of(row), self.geometry.index_of(col)) else {
            return;
        };
        self.cols[c][(r as isize - c as isize + 2) as usize] = value;
    }

    /// Raw column storage, offsets `-2..=2` relative to the diagonal.
    pub fn column(&self, col: usize) -> &[Complex64; 5] {
        &self.cols[col]
    }

    /// `y = U x` restricted to the columns in `active`; returns the range of
    /// rows that may be nonzero. Rows outside that range are left untouched.
    pub fn apply_range(&self, x: &[Complex64], y: &mut [Complex64], active: Range<usize>) -> Range<usize> {
        let n = self.n_dim();
        let lo = active.start.saturating_sub(2);
        let hi = (active.end + 2).min(n);
        for v in &mut y[lo..hi] {
            *v = ZERO;
        }
        let s = active.start.max(2).min(active.end);
        let e = active.end.min(n.saturating_sub(2)).max(s);
        for (c, &xc) in x.iter().enumerate().take(s).skip(active.start) {
            self.scatter_edge(c, xc, y);
        }
        for (c, &xc) in x.iter().enumerate().take(e).skip(s) {
            let col = &self.cols[c];
            let ys = &mut y[c - 2..c + 3];
            ys[0] += col[0] * xc;
            ys[1] += col[1] * xc;
            ys[2] += col[2] * xc;
            ys[3] += col[3] * xc;
            ys[4] += col[4] * xc;
        }
        for (c, &xc) in x.iter().enumerate().take(active.end).skip(e) {
            self.scatter_edge(c, xc, y);
        }
        lo..hi
    }

    fn scatter_edge(&self, c: usize, xc: Complex64, y: &mut [Complex64]) {
        let n = self.n_dim();
        let r0 = c as isize - 2;
        for (d, u) in self.cols[c].iter().enumerate() {
            let r = r0 + d as isize;
            if r >= 0 && (r as usize) < n {
                y[r as usize] += u * xc;
            }
        }
    }

    /// `y = U x`.
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.apply_range(x, y, 0..self.n_dim());
    }

    /// `y = U† x`.
    pub fn adjoint_matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.n_dim();
        for (c, out) in y.iter_mut().enumerate().take(n) {
            let mut acc = ZERO;
            let r0 = c as isize - 2;
            for (d, u) in self.cols[c].iter().enumerate() {
                let r = r0 + d as isize;
                if r >= 0 && (r as usize) < n {
                    acc += u.conj() * x[r as usize];
                }
            }
            *out = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.n_dim();
        DMatrix::from_fn(n, n, |r, c| self.get(r, c))
    }

    /// Stored entries inside the matrix as `(row, col, value)` in storage indices.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let n = self.n_dim();
        self.cols.iter().enumerate().flat_map(move |(c, col)| {
            col.iter().enumerate().filter_map(move |(d, &v)| {
                let r = c as isize + d as isize - 2;
                (r >= 0 && (r as usize) < n).then_some((r as usize, c, v))
            })
        })
    }

    /// FNV-1a digest over geometry, boundary and entry bits.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        match self.geometry {
            Geometry::HalfLine { sites } => {
                h.write(b"H");
                h.write(&(sites as u64).to_le_bytes());
            }
            Geometry::FullLine { half_width } => {
                h.write(b"F");
                h.write(&(half_width as u64).to_le_bytes());
            }
        }
        h.write(match self.boundary {
            Boundary::Open => b"O",
            Boundary::Closed => b"C",
        });
        for col in &self.cols {
            for v in col {
                h.write(&v.re.to_bits().to_le_bytes());
                h.write(&v.im.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.geometry != other.geometry {
            return Err(Error::Geometry("operators have different windows".into()));
        }
        Ok(self
            .cols
            .iter()
            .zip(&other.cols)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max))
    }

    fn scale_column(&mut self, col: usize, factor: Complex64) {
        for v in &mut self.cols[col] {
            *v *= factor;
        }
    }
}

/// The 2×2 blocks `S_k` for `k` in a contiguous range.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPair {
    first: i64,
    blocks: Vec<[[Complex64; 2]; 2]>,
}

impl BlockPair {
    pub fn range(&self) -> Range<i64> {
        self.first..self.first + self.blocks.len() as i64
    }

    pub fn get(&self, k: i64) -> Option<&[[Complex64; 2]; 2]> {
        let i = k - self.first;
        (i >= 0).then(|| self.blocks.get(i as usize)).flatten()
    }

    /// Blocks with even `k` form `U_e`; odd `k` form `U_o`.
    pub fn is_even(k: i64) -> bool {
        k.rem_euclid(2) == 0
    }
}

/// `S_k = e^{-iθ_k} [[r e^{-iα_k}, i t e^{iγ_k}], [i t e^{-iγ_k}, r e^{iα_k}]]`.
pub fn block<P: PhaseSequence + ?Sized>(phases: &P, s: Scattering, k: i64) -> [[Complex64; 2]; 2] {
    let th = cis(-phases.theta(k));
    let a = phases.alpha(k);
    let g = phases.gamma(k);
    [
        [th * s.r * cis(-a), th * I * s.t * cis(g)],
        [th * I * s.t * cis(-g), th * s.r * cis(a)],
    ]
}

pub fn build_blocks<P: PhaseSequence + ?Sized>(phases: &P, s: Scattering, k_range: Range<i64>) -> BlockPair {
    BlockPair {
        first: k_range.start,
        blocks: k_range.map(|k| block(phases, s, k)).collect(),
    }
}

/// `U(β,θ)` on the full-line window `[-half_width, half_width]` from the
/// closed-form columns.
pub fn assemble_full(params: &ModelParams, half_width: usize, boundary: Boundary) -> Result<BandedUnitary> {
    let geometry = Geometry::FullLine { half_width };
    geometry.validate()?;
    Ok(assemble_almost_periodic(params, geometry, boundary))
}

/// `U(β,θ)⁺` on sites `1..=n_dim` from the closed-form columns.
pub fn assemble_half(params: &ModelParams, n_dim: usize, boundary: Boundary) -> Result<BandedUnitary> {
    let geometry = Geometry::HalfLine { sites: n_dim };
    geometry.validate()?;
    Ok(assemble_almost_periodic(params, geometry, boundary))
}

/// `U_λ(β,θ)⁺` with `λ` taken from `params`.
pub fn assemble_rank_one(params: &ModelParams, n_dim: usize, boundary: Boundary) -> Result<BandedUnitary> {
    perturb_rank_one(&assemble_half(params, n_dim, boundary)?, params.lambda())
}

fn assemble_almost_periodic(params: &ModelParams, geometry: Geometry, boundary: Boundary) -> BandedUnitary {
    let ap = params.phases();
    let (r, t) = (params.r(), params.t());
    let alpha = params.alpha();
    let mut u = BandedUnitary::zeros(geometry, boundary, params.digest());
    let (lo, hi) = (geometry.first_site(), geometry.last_site());
    for s in lo..=hi {
        // every column splits into an upper pair with phase 2πβ(2s-1)+2θ and
        // a lower pair with phase 2πβ(2s+1)+2θ (up to the odd/even layout)
        if s % 2 == 0 {
            let a = cis(-ap.pair_phase(2 * s - 1));
            let b = cis(-ap.pair_phase(2 * s + 1));
            u.set_at(s - 1, s, I * r * t * a);
            u.set_at(s, s, r * r * a);
            u.set_at(s + 1, s, I * r * t * b);
            u.set_at(s + 2, s, -t * t * b);
        } else {
            let a = cis(-ap.pair_phase(2 * s - 3));
            let b = cis(-ap.pair_phase(2 * s - 1));
            u.set_at(s - 2, s, -t * t * a);
            u.set_at(s - 1, s, I * t * r * a);
            u.set_at(s, s, r * r * b);
            u.set_at(s + 1, s, I * t * r * b);
        }
    }
    if geometry.is_half_line() {
        let c = cis(-ap.pair_phase(1)) * cis(-alpha);
        u.set_at(1, 1, r * c);
        u.set_at(2, 1, I * t * c);
    }
    if boundary == Boundary::Closed {
        let c = cis(-ap.pair_phase(2 * hi - 1));
        u.set_at(hi - 1, hi, I * t * c * cis(alpha));
        u.set_at(hi, hi, r * c * cis(alpha));
        if !geometry.is_half_line() {
            let c = cis(-ap.pair_phase(2 * lo - 1)) * cis(-alpha);
            u.set_at(lo, lo, r * c);
            u.set_at(lo, lo + 1, I * t * c);
        }
    }
    u
}

/// Closed-form columns for arbitrary phases on a half-line window.
pub fn assemble_half_from_phases<P: PhaseSequence + ?Sized>(
    phases: &P,
    s: Scattering,
    n_dim: usize,
    boundary: Boundary,
) -> Result<BandedUnitary> {
    let geometry = Geometry::HalfLine { sites: n_dim };
    geometry.validate()?;
    Ok(assemble_general(phases, s, geometry, boundary))
}

/// Closed-form columns for arbitrary phases on a full-line window.
pub fn assemble_full_from_phases<P: PhaseSequence + ?Sized>(
    phases: &P,
    s: Scattering,
    half_width: usize,
    boundary: Boundary,
) -> Result<BandedUnitary> {
    let geometry = Geometry::FullLine { half_width };
    geometry.validate()?;
    Ok(assemble_general(phases, s, geometry, boundary))
}

fn assemble_general<P: PhaseSequence + ?Sized>(
    p: &P,
    sc: Scattering,
    geometry: Geometry,
    boundary: Boundary,
) -> BandedUnitary {
    let (r, t) = (sc.r, sc.t);
    let th = |k: i64| p.theta(k);
    let al = |k: i64| p.alpha(k);
    let ga = |k: i64| p.gamma(k);
    let mut u = BandedUnitary::zeros(geometry, boundary, 0);
    let (lo, hi) = (geometry.first_site(), geometry.last_site());
    for s in lo..=hi {
        if geometry.is_half_line() && s == 1 {
            continue;
        }
        if s % 2 == 0 {
            let a = cis(-(th(s) + th(s - 1)));
            let b = cis(-(th(s) + th(s + 1)));
            u.set_at(s - 1, s, I * r * t * a * cis(-(al(s) - ga(s - 1))));
            u.set_at(s, s, r * r * a * cis(-(al(s) - al(s - 1))));
            u.set_at(s + 1, s, I * r * t * b * cis(-(ga(s) + al(s + 1))));
            u.set_at(s + 2, s, -t * t * b * cis(-(ga(s) + ga(s + 1))));
        } else {
            let e = s - 1;
            let a = cis(-(th(e) + th(e - 1)));
            let b = cis(-(th(e) + th(e + 1)));
            u.set_at(e - 1, s, -t * t * a * cis(ga(e) + ga(e - 1)));
            u.set_at(e, s, I * r * t * a * cis(ga(e) + al(e - 1)));
            u.set_at(e + 1, s, r * r * b * cis(al(e) - al(e + 1)));
            u.set_at(e + 2, s, I * r * t * b * cis(al(e) - ga(e + 1)));
        }
    }
    if geometry.is_half_line() {
        let c = cis(-(th(0) + th(1)));
        u.set_at(1, 1, r * c * cis(-al(1)));
        u.set_at(2, 1, I * t * c * cis(-ga(1)));
    }
    if boundary == Boundary::Closed {
        let c = cis(-(th(hi) + th(hi - 1)));
        u.set_at(hi - 1, hi, I * t * c * cis(ga(hi - 1)));
        u.set_at(hi, hi, r * c * cis(al(hi - 1)));
        if !geometry.is_half_line() {
            let c = cis(-(th(lo) + th(lo - 1)));
            u.set_at(lo, lo, r * c * cis(-al(lo)));
            u.set_at(lo, lo + 1, I * t * c * cis(ga(lo)));
        }
    }
    u
}

/// `U_o U_e` on a window from the block factors. A block cut by the window
/// keeps its single in-window entry (`Open`) or becomes `e^{-iθ_k}`
/// (`Closed`); the half-line origin always uses `e^{-iθ_0}`.
pub fn assemble_factorized<P: PhaseSequence + ?Sized>(
    phases: &P,
    s: Scattering,
    geometry: Geometry,
    boundary: Boundary,
) -> Result<BandedUnitary> {
    geometry.validate()?;
    let (lo, hi) = (geometry.first_site(), geometry.last_site());
    let blocks = build_blocks(phases, s, lo - 1..hi + 1);
    let factor = |parity: i64| -> BandedUnitary {
        let mut f = BandedUnitary::zeros(geometry, boundary, 0);
        let mut k = lo - 1;
        while k <= hi {
            if k.rem_euclid(2) == parity {
                let b = blocks.get(k).expect("block range covers the window");
                let (inside_a, inside_b) = (k >= lo, k < hi);
                if inside_a && inside_b {
                    f.set_at(k, k, b[0][0]);
                    f.set_at(k + 1, k, b[1][0]);
                    f.set_at(k, k + 1, b[0][1]);
                    f.set_at(k + 1, k + 1, b[1][1]);
                } else if inside_b {
                    let closed = boundary == Boundary::Closed || geometry.is_half_line();
                    let v = if closed { cis(-phases.theta(k)) } else { b[1][1] };
                    f.set_at(k + 1, k + 1, v);
                } else if inside_a {
                    let v = if boundary == Boundary::Closed {
                        cis(-phases.theta(k))
                    } else {
                        b[0][0]
                    };
                    f.set_at(k, k, v);
                }
            }
            k += 1;
        }
        f
    };
    let ue = factor(0);
    let uo = factor(1);
    Ok(banded_product(&uo, &ue))
}

fn banded_product(a: &BandedUnitary, b: &BandedUnitary) -> BandedUnitary {
    let n = b.n_dim();
    let mut out = BandedUnitary::zeros(b.geometry, b.boundary, b.params_digest);
    for c in 0..n {
        for (db, &bv) in b.cols[c].iter().enumerate() {
            let j = c as isize + db as isize - 2;
            if bv == ZERO || j < 0 || j as usize >= n {
                continue;
            }
            for (da, &av) in a.cols[j as usize].iter().enumerate() {
                let i = j + da as isize - 2;
                if av == ZERO || i < 0 || i as usize >= n {
                    continue;
                }
                let d = i - c as isize + 2;
                debug_assert!((0..5).contains(&d), "product leaves the five-band");
                out.cols[c][d as usize] += av * bv;
            }
        }
    }
    out
}

/// `U⁺ (I + (e^{iλ} - 1) P_{φ_1})`: column of site 1 times `e^{iλ}`.
pub fn perturb_rank_one(u_plus: &BandedUnitary, lambda: f64) -> Result<BandedUnitary> {
    if !u_plus.geometry.is_half_line() {
        return Err(Error::Geometry(
            "rank-one perturbation expects a half-line operator; use perturb_rank_one_full".into(),
        ));
    }
    Ok(scaled_site_one(u_plus, lambda))
}

/// Full-line analogue `U (I + (e^{iλ} - 1) P_{φ_1})`.
pub fn perturb_rank_one_full(u: &BandedUnitary, lambda: f64) -> Result<BandedUnitary> {
    if u.geometry.is_half_line() {
        return Err(Error::Geometry("expected a full-line operator".into()));
    }
    Ok(scaled_site_one(u, lambda))
}

fn scaled_site_one(u: &BandedUnitary, lambda: f64) -> BandedUnitary {
    let mut out = u.clone();
    if !lambda.is_finite() || reduce_angle(lambda) == 0.0 {
        return out;
    }
    let col = u.geometry.index_of(1).expect("site 1 lies in every window");
    out.scale_column(col, cis(lambda));
    out
}

/// Half-line phases of `U_λ⁺` for the generic builders.
pub fn rank_one_phases<P: PhaseSequence>(inner: P, lambda: f64) -> RankOneShifted<P> {
    RankOneShifted { inner, lambda }
}

/// Largest deviation of `U†U` from the identity, split into the interior block
/// and the pairs that touch a boundary column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitarityDefect {
    pub interior: f64,
    pub boundary: f64,
}

pub fn unitarity_defect(u: &BandedUnitary) -> UnitarityDefect {
    let n = u.n_dim();
    let skip_front = if u.geometry.is_half_line() { 0 } else { 2 };
    let is_interior = |c: usize| c >= skip_front && c + 2 < n;
    let mut out = UnitarityDefect {
        interior: 0.0,
        boundary: 0.0,
    };
    for i in 0..n {
        for j in i..(i + 5).min(n) {
            let mut acc = ZERO;
            for (d, ui) in u.cols[i].iter().enumerate() {
                let r = i as isize + d as isize - 2;
                if r < 0 || r as usize >= n {
                    continue;
                }
                acc += ui.conj() * u.get(r as usize, j);
            }
            if i == j {
                acc -= 1.0;
            }
            let e = acc.norm();
            if is_interior(i) && is_interior(j) {
                out.interior = out.interior.max(e);
            } else {
                out.boundary = out.boundary.max(e);
            }
        }
    }
    out
}

/// `max |U(β,θ)⁺ - e^{-2iθ} U(β,0)⁺|` on sites `1..=n_dim`.
pub fn theta_covariance_check(params: &ModelParams, n_dim: usize, boundary: Boundary) -> Result<f64> {
    let u = assemble_half(params, n_dim, boundary)?;
    let base = assemble_half(&params.with_theta(0.0)?, n_dim, boundary)?;
    let phase = cis(-2.0 * params.theta());
    Ok(u
        .cols
        .iter()
        .zip(&base.cols)
        .flat_map(|(a, b)| a.iter().zip(b).map(move |(x, y)| (x - phase * y).norm()))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_params, AlmostPeriodic, BetaValue, Dyadic};
    use core::f64::consts::{PI, TAU};
    use num_traits::Float;

    fn params(t: f64, alpha: f64, theta: f64, beta: f64) -> ModelParams {
        make_params(t, alpha, theta, 0.0, BetaValue::Float(beta)).unwrap()
    }

    #[test]
    fn blocks_unitary_with_expected_determinant() {
        let p = params(0.6, 0.3, 1.1, 0.37);
        let ap = p.phases();
        let bp = build_blocks(&ap, p.scattering(), -5..6);
        for k in bp.range() {
            let s = bp.get(k).unwrap();
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            // oracle: det = e^{-2iθ_k}(r² + t²)
            assert!((det - cis(-2.0 * ap.theta(k))).norm() < 1e-14);
            let row0 = s[0][0].norm_sqr() + s[0][1].norm_sqr();
            let cross = s[0][0] * s[1][0].conj() + s[0][1] * s[1][1].conj();
            assert!((row0 - 1.0).abs() < 1e-14 && cross.norm() < 1e-14);
        }
    }

    #[test]
    fn block_extremes() {
        let ap = AlmostPeriodic::new(BetaValue::Float(0.2), 0.4, 0.7);
        let s0 = block(&ap, Scattering::from_t(0.0).unwrap(), 3);
        assert_eq!(s0[0][1], ZERO);
        assert!((s0[0][0] - cis(-ap.theta(3) - 0.7)).norm() < 1e-15);
        let s1 = block(&ap, Scattering::from_t(1.0).unwrap(), 3);
        assert_eq!(s1[0][0], ZERO);
        assert!((s1[0][1] - I * cis(-ap.theta(3) + ap.gamma(3))).norm() < 1e-15);
    }

    #[test]
    fn t_zero_is_diagonal_with_theta_phases() {
        let p = params(0.0, 0.0, 0.3, 0.21);
        let u = assemble_full(&p, 16, Boundary::Open).unwrap();
        for (r, c, v) in u.entries() {
            if r != c {
                assert_eq!(v, ZERO);
                continue;
            }
            let s = u.geometry().site_of(c);
            let want = cis(-(TAU * 0.21 * (2 * s - 1) as f64 + 0.6));
            assert!((v - want).norm() < 1e-13, "site {s}");
        }
    }

    #[test]
    fn r_zero_shifts_by_two() {
        let p = params(1.0, 0.0, 0.3, 0.21);
        let u = assemble_full(&p, 16, Boundary::Open).unwrap();
        let g = u.geometry();
        for s in -6..6i64 {
            let c = g.index_of(s).unwrap();
            let (target, m) = if s % 2 == 0 { (s + 2, 2 * s + 1) } else { (s - 2, 2 * s - 3) };
            let want = -cis(-(TAU * 0.21 * m as f64 + 0.6));
            let got = u.get(g.index_of(target).unwrap(), c);
            assert!((got - want).norm() < 1e-13, "site {s}");
        }
    }

    #[test]
    fn half_line_first_column() {
        let p = params(0.8, 0.45, 1.3, 0.31);
        let u = assemble_half(&p, 16, Boundary::Open).unwrap();
        let ph = cis(-(TAU * 0.31 + 2.6)) * cis(-0.45);
        assert!((u.get(0, 0) - p.r() * ph).norm() < 1e-14);
        assert!((u.get(1, 0) - I * p.t() * ph).norm() < 1e-14);
        assert_eq!(u.get(2, 0), ZERO);
    }

    #[test]
    fn factorized_matches_closed_form() {
        for boundary in [Boundary::Open, Boundary::Closed] {
            let p = params(0.55, 0.9, 2.1, 0.618);
            let ap = p.phases();
            for geometry in [Geometry::HalfLine { sites: 20 }, Geometry::FullLine { half_width: 10 }] {
                let a = match geometry {
                    Geometry::HalfLine { sites } => assemble_half(&p, sites, boundary).unwrap(),
                    Geometry::FullLine { half_width } => assemble_full(&p, half_width, boundary).unwrap(),
                };
                let b = assemble_factorized(&ap, p.scattering(), geometry, boundary).unwrap();
                assert!(a.max_abs_diff(&b).unwrap() < 1e-13, "{geometry:?} {boundary:?}");
            }
        }
    }

    #[test]
    fn closed_boundary_is_unitary() {
        let p = params(0.7, 0.2, 0.9, 0.41);
        for u in [
            assemble_half(&p, 24, Boundary::Closed).unwrap(),
            assemble_full(&p, 12, Boundary::Closed).unwrap(),
        ] {
            let d = unitarity_defect(&u);
            assert!(d.interior < 1e-14 && d.boundary < 1e-14, "{d:?}");
        }
    }

    #[test]
    fn open_boundary_defect_at_r_zero() {
        let p = params(1.0, 0.0, 0.0, 0.3);
        let u = assemble_half(&p, 16, Boundary::Open).unwrap();
        let d = unitarity_defect(&u);
        assert!(d.interior < 1e-14);
        assert!((d.boundary - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_scales_first_column_only() {
        let p = params(0.6, 0.1, 0.2, 0.3);
        let u = assemble_half(&p, 16, Boundary::Open).unwrap();
        assert_eq!(perturb_rank_one(&u, 0.0).unwrap(), u);
        let v = perturb_rank_one(&u, PI).unwrap();
        for c in 1..16 {
            assert_eq!(v.column(c), u.column(c));
        }
        assert!((v.get(0, 0) + u.get(0, 0)).norm() < 1e-15);
        let f = assemble_full(&p, 8, Boundary::Open).unwrap();
        assert!(matches!(perturb_rank_one(&f, 1.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn rank_one_equals_shifted_theta_zero() {
        let p = params(0.6, 0.4, 0.2, 0.3).with_lambda(1.2).unwrap();
        let a = assemble_rank_one(&p, 16, Boundary::Closed).unwrap();
        let phases = rank_one_phases(p.phases(), 1.2);
        let b = assemble_half_from_phases(&phases, p.scattering(), 16, Boundary::Closed).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn covariance_zero_theta_is_exact() {
        let p = params(0.6, 0.4, 0.0, 0.3);
        assert_eq!(theta_covariance_check(&p, 16, Boundary::Open).unwrap(), 0.0);
        let p = p.with_theta(PI).unwrap();
        assert!(theta_covariance_check(&p, 16, Boundary::Open).unwrap() < 1e-13);
    }

    #[test]
    fn small_windows_rejected() {
        let p = params(0.6, 0.0, 0.0, 0.3);
        assert!(assemble_half(&p, 6, Boundary::Open).is_err());
        assert!(assemble_half(&p, 9, Boundary::Open).is_err());
        assert!(assemble_full(&p, 7, Boundary::Open).is_err());
    }

    #[test]
    fn exact_beta_large_sites() {
        let b = Dyadic::one().add_pow2(24).unwrap();
        let p = make_params(0.6, 0.0, 0.0, 0.0, BetaValue::Exact(b)).unwrap();
        let u = assemble_half(&p, 16, Boundary::Closed).unwrap();
        assert!(unitarity_defect(&u).interior < 1e-14);
        assert!(Float::abs(u.get(0, 0).norm() - p.r()) < 1e-15);
    }
}
