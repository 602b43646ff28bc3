//! Dense complex linear algebra used throughout the simulator.
//!
//! Hermitian systems are solved with an `LDL^H` factorization written out by
//! hand so that its arithmetic can be tallied with an [`OpTally`]. The
//! counting convention follows the usual massive-MIMO cost model: a complex
//! multiplication is one unit, a complex-by-real division is two real
//! divisions, additions are free.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative threshold below which a negative eigenvalue is treated as round-off.
pub const PSD_CLAMP_TOL: f64 = 1e-10;

/// Sink for arithmetic counts. `()` discards everything.
pub trait OpTally {
    fn complex_mults(&mut self, n: u64);
    fn real_divs(&mut self, n: u64);
}

impl OpTally for () {
    #[inline(always)]
    fn complex_mults(&mut self, _n: u64) {}
    #[inline(always)]
    fn real_divs(&mut self, _n: u64) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub complex_mults: u64,
    pub real_divs: u64,
}

impl OpTally for OpCount {
    #[inline]
    fn complex_mults(&mut self, n: u64) {
        self.complex_mults += n;
    }
    #[inline]
    fn real_divs(&mut self, n: u64) {
        self.real_divs += n;
    }
}

impl std::ops::Add for OpCount {
    type Output = OpCount;
    fn add(self, rhs: OpCount) -> OpCount {
        OpCount {
            complex_mults: self.complex_mults + rhs.complex_mults,
            real_divs: self.real_divs + rhs.real_divs,
        }
    }
}

/// Stage-by-stage cost of evaluating `tr(A^{-1} B)` through an `LDL^H`
/// factorization of `A`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceSolveCost {
    pub factorization: OpCount,
    pub forward: OpCount,
    pub diagonal: OpCount,
    pub backward: OpCount,
}

impl TraceSolveCost {
    /// Real multiplications under the cost model: three per complex
    /// multiplication in every stage, plus the real divisions of the diagonal
    /// stage. Divisions performed while forming `L` are not part of the model
    /// and are excluded here (they stay visible in `factorization.real_divs`).
    pub fn real_multiplications(&self) -> u64 {
        3 * (self.factorization.complex_mults
            + self.forward.complex_mults
            + self.diagonal.complex_mults
            + self.backward.complex_mults)
            + self.diagonal.real_divs
    }
}

impl std::ops::Add for TraceSolveCost {
    type Output = TraceSolveCost;
    fn add(self, rhs: Self) -> Self {
        TraceSolveCost {
            factorization: self.factorization + rhs.factorization,
            forward: self.forward + rhs.forward,
            diagonal: self.diagonal + rhs.diagonal,
            backward: self.backward + rhs.backward,
        }
    }
}

/// `A = L D L^H` with `L` unit lower triangular (stored row-major) and `D`
/// real positive diagonal.
#[derive(Debug, Clone)]
pub struct Ldlh {
    n: usize,
    l: Vec<C64>,
    d: Vec<f64>,
}

impl Ldlh {
    pub fn factor(a: &CMat) -> Result<Self> {
        Self::factor_counted(a, &mut ())
    }

    /// Left-looking factorization. Every update term `L_ik conj(L_jk) d_k`
    /// costs two multiplications, which gives `(n^3 - n)/3` in total.
    pub fn factor_counted<T: OpTally>(a: &CMat, tally: &mut T) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "LDL^H needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        let mut d = vec![0.0; n];
        for j in 0..n {
            let (head, tail) = l.split_at_mut(j * n + n);
            let row_j = &head[j * n..j * n + j];
            let mut dj = a[(j, j)].re;
            for (k, ljk) in row_j.iter().enumerate() {
                dj -= (ljk * ljk.conj()).re * d[k];
            }
            tally.complex_mults(2 * j as u64);
            if !(dj > f64::EPSILON * scale * n as f64) || !dj.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: dj });
            }
            d[j] = dj;
            for i in (j + 1)..n {
                let row_i = &mut tail[(i - j - 1) * n..(i - j - 1) * n + j + 1];
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= row_i[k] * row_j[k].conj() * d[k];
                }
                row_i[j] = s / dj;
            }
            let below = (n - 1 - j) as u64;
            tally.complex_mults(2 * j as u64 * below);
            tally.real_divs(2 * below);
            head[j * n + j] = C64::new(1.0, 0.0);
        }
        Ok(Ldlh { n, l, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> &[f64] {
        &self.d
    }

    #[inline]
    fn l_at(&self, i: usize, k: usize) -> C64 {
        self.l[i * self.n + k]
    }

    /// Solves `L z = b` in place.
    fn forward<T: OpTally>(&self, z: &mut [C64], tally: &mut T) {
        for i in 0..self.n {
            let row = &self.l[i * self.n..i * self.n + i];
            let mut s = z[i];
            for (lik, zk) in row.iter().zip(z.iter()) {
                s -= lik * zk;
            }
            z[i] = s;
        }
        tally.complex_mults((self.n * (self.n - 1) / 2) as u64);
    }

    fn scale_diag<T: OpTally>(&self, z: &mut [C64], tally: &mut T) {
        for (zi, di) in z.iter_mut().zip(&self.d) {
            *zi /= *di;
        }
        tally.real_divs(2 * self.n as u64);
    }

    /// Solves `L^H c = y` in place for rows `n-1` down to `stop`.
    fn backward_to<T: OpTally>(&self, y: &mut [C64], stop: usize, tally: &mut T) {
        let n = self.n;
        for i in (stop..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l_at(k, i).conj() * y[k];
            }
            y[i] = s;
        }
        let rows = n - stop;
        tally.complex_mults((rows * (rows - 1) / 2) as u64);
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        let mut z: Vec<C64> = b.iter().copied().collect();
        self.forward(&mut z, &mut ());
        self.scale_diag(&mut z, &mut ());
        self.backward_to(&mut z, 0, &mut ());
        CVec::from_vec(z)
    }

    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let mut out = b.clone();
        let mut buf = vec![C64::new(0.0, 0.0); self.n];
        for c in 0..b.ncols() {
            buf.copy_from_slice(out.column(c).as_slice());
            self.forward(&mut buf, &mut ());
            self.scale_diag(&mut buf, &mut ());
            self.backward_to(&mut buf, 0, &mut ());
            out.column_mut(c).copy_from_slice(&buf);
        }
        out
    }

    /// `x^H A^{-1} x`, computed as `sum |z_i|^2 / d_i` with `L z = x`.
    pub fn inv_quad_form(&self, x: &CVec) -> f64 {
        let mut z: Vec<C64> = x.iter().copied().collect();
        self.forward(&mut z, &mut ());
        z.iter().zip(&self.d).map(|(zi, di)| zi.norm_sqr() / di).sum()
    }

    /// `tr(A^{-1} B)` using only the diagonal of `A^{-1} B`: full forward
    /// solves, the diagonal scaling, then a backward solve truncated at the
    /// row that carries the wanted diagonal entry.
    pub fn trace_inv_times<T: OpTally>(&self, b: &CMat, cost: &mut T) -> C64 {
        let mut fwd = CountSplit::default();
        let c = self.trace_inv_times_staged(b, &mut fwd);
        let total = fwd.forward + fwd.diagonal + fwd.backward;
        cost.complex_mults(total.complex_mults);
        cost.real_divs(total.real_divs);
        c
    }

    fn trace_inv_times_staged(&self, b: &CMat, stages: &mut CountSplit) -> C64 {
        let n = self.n;
        let mut acc = C64::new(0.0, 0.0);
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for m in 0..n {
            buf.copy_from_slice(b.column(m).as_slice());
            self.forward(&mut buf, &mut stages.forward);
            self.scale_diag(&mut buf, &mut stages.diagonal);
            self.backward_to(&mut buf, m, &mut stages.backward);
            acc += buf[m];
        }
        acc
    }
}

#[derive(Default)]
struct CountSplit {
    forward: OpCount,
    diagonal: OpCount,
    backward: OpCount,
}

/// `tr(A^{-1} B)` for Hermitian positive definite `A`, returning the value
/// together with the per-stage arithmetic cost.
pub fn trace_inv_times_counted(a: &CMat, b: &CMat) -> Result<(C64, TraceSolveCost)> {
    let mut factorization = OpCount::default();
    let f = Ldlh::factor_counted(a, &mut factorization)?;
    let mut stages = CountSplit::default();
    let value = f.trace_inv_times_staged(b, &mut stages);
    Ok((
        value,
        TraceSolveCost {
            factorization,
            forward: stages.forward,
            diagonal: stages.diagonal,
            backward: stages.backward,
        },
    ))
}

/// `tr(A B)` from the diagonal of the product only (`n^2` multiplications).
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(n, n, C64::new(s, 0.0))
}

/// Adds `s * x x^H` to `a`.
pub fn add_outer(a: &mut CMat, x: &CVec, s: f64) {
    let n = x.len();
    for c in 0..n {
        let xc = x[c].conj() * s;
        let col = a.column_mut(c);
        for (dst, xr) in col.into_iter().zip(x.iter()) {
            *dst += xr * xc;
        }
    }
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.total_cmp(y));
    v
}

/// Hermitian PSD square root. Negative eigenvalues above
/// `-PSD_CLAMP_TOL * eigmax` are clamped to zero; anything more negative is
/// rejected.
pub fn psd_sqrt(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if is_scaled_identity(a) {
        let s = a[(0, 0)].re;
        if s < 0.0 {
            return Err(Error::Indefinite { min_eig: s, max_eig: s });
        }
        return Ok(scaled_identity(n, s.sqrt()));
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_CLAMP_TOL * max.max(f64::MIN_POSITIVE) {
        return Err(Error::Indefinite { min_eig: min, max_eig: max });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = C64::new(lam.max(0.0).sqrt(), 0.0);
        for v in scaled.column_mut(j).iter_mut() {
            *v *= s;
        }
    }
    Ok(scaled * eig.eigenvectors.adjoint())
}

fn is_scaled_identity(a: &CMat) -> bool {
    let n = a.nrows();
    let d = a[(0, 0)];
    for c in 0..n {
        for r in 0..n {
            let v = a[(r, c)];
            if r == c {
                if v != d {
                    return false;
                }
            } else if v.re != 0.0 || v.im != 0.0 {
                return false;
            }
        }
    }
    d.im == 0.0
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Frobenius-relative distance `||a - b|| / ||b||`.
pub fn frobenius_rel(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}
