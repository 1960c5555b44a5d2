//! Elementary symmetric functions of symmetric matrices.
//!
//! `σ_k(A)` is the k-th elementary symmetric polynomial of the eigenvalues of `A`.
//! Three evaluation paths exist (eigenvalues, principal minors, and the trace
//! form for k = 2) so they can be checked against each other.

#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Below this ratio `|σ₂| / σ₁²` the trace form loses too many digits and the
/// eigenvalue path is used instead.
const SIGMA2_CANCELLATION_RATIO: f64 = 1e-8;

/// Dense symmetric matrix stored as its upper triangle, row by row.
#[derive(Clone)]
pub struct SymmetricMatrix {
    dim: usize,
    entries: Vec<f64>,
    eig: OnceLock<Vec<f64>>,
}

impl PartialEq for SymmetricMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.entries == other.entries
    }
}

impl fmt::Debug for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect();
        f.debug_struct("SymmetricMatrix").field("dim", &self.dim).field("rows", &rows).finish()
    }
}

#[inline]
fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self { dim, entries: vec![0.0; dim * (dim + 1) / 2], eig: OnceLock::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        Self::from_diagonal(&vec![value; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds the matrix from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.entries[packed_index(dim, i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds from dense rows; the rows must be square and symmetric to `1e-12` relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows must form a non-empty square matrix".into()));
        }
        let scale = rows.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::Shape(format!("entry ({i},{j}) is not symmetric")));
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[packed_index(self.dim, i, j)]
    }

    /// Sets entries `(i, j)` and `(j, i)`; drops any cached eigenvalues.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[packed_index(self.dim, i, j)] = value;
        self.eig = OnceLock::new();
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `tr(A²) = Σ_ij a_ij²`.
    pub fn trace_of_square(&self) -> f64 {
        self.frobenius_pairing(self)
    }

    /// `Σ_ij a_ij b_ij`.
    pub fn frobenius_pairing(&self, other: &SymmetricMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let p = self.get(i, j) * other.get(i, j);
                s += if i == j { p } else { 2.0 * p };
            }
        }
        s
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|x| t * x).collect(), eig: OnceLock::new() }
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect();
        Self { dim: self.dim, entries, eig: OnceLock::new() }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Eigenvalues in ascending order (cyclic Jacobi, cached after the first call).
    pub fn eigenvalues(&self) -> &[f64] {
        self.eig.get_or_init(|| jacobi_eigenvalues(self.to_rows()))
    }
}

/// Cyclic Jacobi rotations with a fixed (row-major) sweep order.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let norm = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let target = JACOBI_TOL * norm.max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Membership report for the cone `Γ_k⁺`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeReport {
    pub k: usize,
    /// `σ_1, …, σ_k`.
    pub sigmas: Vec<f64>,
    pub in_cone: bool,
}

fn check_k(a: &SymmetricMatrix, k: usize) -> Result<()> {
    if k == 0 || k > a.dim() {
        return Err(Error::domain(format!("k = {k} outside 1..={}", a.dim())));
    }
    Ok(())
}

/// Elementary symmetric polynomials `e_0..=e_k` of `values`.
pub fn elementary_symmetric(values: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &x in values {
        for j in (1..=k).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// `σ_k(A)`. Uses the trace for k = 1, the trace form with fallback for k = 2 and
/// eigenvalues otherwise.
pub fn sigma_k(a: &SymmetricMatrix, k: usize) -> Result<f64> {
    check_k(a, k)?;
    Ok(match k {
        1 => a.trace(),
        2 => sigma2(a),
        _ => elementary_symmetric(a.eigenvalues(), k)[k],
    })
}

/// `σ_k(A)` from the eigenvalues.
pub fn sigma_k_eigen(a: &SymmetricMatrix, k: usize) -> Result<f64> {
    check_k(a, k)?;
    Ok(elementary_symmetric(a.eigenvalues(), k)[k])
}

/// `σ_k(A)` as the sum of all k×k principal minors.
pub fn sigma_k_minors(a: &SymmetricMatrix, k: usize) -> Result<f64> {
    check_k(a, k)?;
    let n = a.dim();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut total = 0.0;
    loop {
        let sub: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| a.get(i, j)).collect()).collect();
        total += determinant(sub);
        // Next combination in lexicographic order.
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(total)
}

/// Determinant by Gaussian elimination with partial pivoting.
fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap_or(c);
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in (c + 1)..n {
            let f = m[r][c] / m[c][c];
            if f != 0.0 {
                for j in c..n {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    det
}

/// `(σ₁² − tr A²)/2` without any fallback.
pub fn sigma2_trace_form(a: &SymmetricMatrix) -> f64 {
    let s1 = a.trace();
    0.5 * (s1 * s1 - a.trace_of_square())
}

/// `σ₂(A)` by the trace form, switching to eigenvalues when cancellation is severe.
pub fn sigma2(a: &SymmetricMatrix) -> f64 {
    let s1 = a.trace();
    let s2 = 0.5 * (s1 * s1 - a.trace_of_square());
    if s2.abs() < SIGMA2_CANCELLATION_RATIO * s1 * s1 {
        elementary_symmetric(a.eigenvalues(), 2)[2]
    } else {
        s2
    }
}

/// Cone membership with zero tolerance.
pub fn in_gamma_k_plus(a: &SymmetricMatrix, k: usize) -> Result<ConeReport> {
    in_gamma_k_plus_with_margin(a, k, 0.0)
}

/// Cone membership requiring every `σ_j > margin`.
pub fn in_gamma_k_plus_with_margin(a: &SymmetricMatrix, k: usize, margin: f64) -> Result<ConeReport> {
    check_k(a, k)?;
    let sigmas: Vec<f64> = (1..=k).map(|j| sigma_k(a, j)).collect::<Result<_>>()?;
    let in_cone = sigmas.iter().all(|&s| s > margin);
    Ok(ConeReport { k, sigmas, in_cone })
}

/// First Newton transform `T₁(A) = σ₁(A)·I − A`.
pub fn newton_transform(a: &SymmetricMatrix) -> SymmetricMatrix {
    let s1 = a.trace();
    SymmetricMatrix::from_fn(a.dim(), |i, j| if i == j { s1 - a.get(i, i) } else { -a.get(i, j) })
}

/// Entrywise derivative `∂σ₂/∂a_ij`, differentiating `½(σ₁² − Σ_ij a_ij²)` with the
/// entries treated as independent.
pub fn dsigma2(a: &SymmetricMatrix) -> SymmetricMatrix {
    let s1 = a.trace();
    SymmetricMatrix::from_fn(a.dim(), |i, j| {
        let kron = if i == j { 1.0 } else { 0.0 };
        kron * s1 - a.get(i, j)
    })
}

/// Garding pairing: `(Σ T₁(A)_ij B_ij, 2 σ₂(A)^{1/2} σ₂(B)^{1/2})`.
pub fn garding_pairing(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("dimensions {} and {} differ", a.dim(), b.dim())));
    }
    for (name, m) in [("first argument", a), ("second argument", b)] {
        if a.dim() < 2 {
            return Err(Error::domain("garding pairing needs n >= 2"));
        }
        let rep = in_gamma_k_plus(m, 2)?;
        if !rep.in_cone {
            return Err(Error::cone(name, format!("sigma_1 = {}, sigma_2 = {}", rep.sigmas[0], rep.sigmas[1])));
        }
    }
    let pairing = newton_transform(a).frobenius_pairing(b);
    let bound = 2.0 * sigma2(a).sqrt() * sigma2(b).sqrt();
    Ok((pairing, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> SymmetricMatrix {
        SymmetricMatrix::from_diagonal(d)
    }

    /// Brute-force σ₂ as the sum of pairwise eigenvalue products.
    fn pairwise(d: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..d.len() {
            for j in (i + 1)..d.len() {
                s += d[i] * d[j];
            }
        }
        s
    }

    #[test]
    fn sigma_k_examples() {
        assert_eq!(sigma_k(&SymmetricMatrix::identity(5), 2).unwrap(), 10.0);
        assert_eq!(sigma_k(&diag(&[1.0, 2.0, 3.0]), 2).unwrap(), pairwise(&[1.0, 2.0, 3.0]));
        assert_eq!(sigma_k(&diag(&[1.0, 1.0, -1.0]), 2).unwrap(), -1.0);
        assert!(matches!(sigma_k(&diag(&[1.0, 2.0]), 3), Err(Error::Domain(_))));
        assert!(matches!(sigma_k(&diag(&[1.0, 2.0]), 0), Err(Error::Domain(_))));
    }

    #[test]
    fn cone_examples() {
        let r = in_gamma_k_plus(&SymmetricMatrix::scalar(5, 0.5), 2).unwrap();
        assert!(r.in_cone);
        assert!((r.sigmas[0] - 2.5).abs() < 1e-15 && (r.sigmas[1] - 2.5).abs() < 1e-15);
        assert!(!in_gamma_k_plus(&diag(&[1.0, 1.0, -1.0]), 2).unwrap().in_cone);
        assert!(!in_gamma_k_plus(&SymmetricMatrix::zeros(4), 1).unwrap().in_cone);
    }

    #[test]
    fn newton_and_derivative_examples() {
        assert_eq!(newton_transform(&diag(&[1.0, 2.0, 3.0])), diag(&[5.0, 4.0, 3.0]));
        assert_eq!(newton_transform(&SymmetricMatrix::identity(6)), SymmetricMatrix::scalar(6, 5.0));
        assert_eq!(newton_transform(&SymmetricMatrix::zeros(3)), SymmetricMatrix::zeros(3));
        assert_eq!(dsigma2(&SymmetricMatrix::identity(5)), SymmetricMatrix::scalar(5, 4.0));
        assert_eq!(dsigma2(&diag(&[2.0, 0.0, 0.0, 0.0, 0.0])), diag(&[0.0, 2.0, 2.0, 2.0, 2.0]));
    }

    #[test]
    fn dsigma2_matches_finite_differences() {
        let a =
            SymmetricMatrix::from_fn(4, |i, j| 0.3 * (i as f64) - 0.7 * (j as f64) + if i == j { 2.0 } else { 0.1 });
        let d = dsigma2(&a);
        let h = 1e-5;
        for i in 0..4 {
            for j in i..4 {
                let mut p = a.clone();
                p.set(i, j, a.get(i, j) + h);
                let mut m = a.clone();
                m.set(i, j, a.get(i, j) - h);
                let fd = (sigma_k_minors(&p, 2).unwrap() - sigma_k_minors(&m, 2).unwrap()) / (2.0 * h);
                // A symmetric perturbation moves both (i,j) and (j,i).
                let fd = if i == j { fd } else { fd / 2.0 };
                assert!((fd - d.get(i, j)).abs() < 1e-6, "({i},{j}): {fd} vs {}", d.get(i, j));
            }
        }
    }

    #[test]
    fn garding_examples() {
        let (p, b) = garding_pairing(&SymmetricMatrix::identity(5), &SymmetricMatrix::identity(5)).unwrap();
        assert!((p - 20.0).abs() < 1e-13 && (b - 20.0).abs() < 1e-13);
        let half = SymmetricMatrix::scalar(5, 0.5);
        let (p, b) = garding_pairing(&half, &half).unwrap();
        assert!((p - 5.0).abs() < 1e-13 && (b - 5.0).abs() < 1e-13);
        let (p, b) = garding_pairing(&diag(&[1.0, 2.0, 3.0]), &SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(p, 12.0);
        assert!((b - 2.0 * 11f64.sqrt() * 3f64.sqrt()).abs() < 1e-13);
        assert!(p >= b);
        let bad = diag(&[1.0, 1.0, -1.0]);
        assert!(matches!(garding_pairing(&bad, &SymmetricMatrix::identity(3)), Err(Error::ConeViolation { .. })));
    }

    #[test]
    fn eigenvalues_of_rotated_diagonal() {
        // Q diag(1,2,3) Qᵀ with a Givens rotation in the (0,2) plane.
        let (c, s) = (0.6f64, 0.8f64);
        let a = SymmetricMatrix::from_rows(&[
            vec![c * c * 1.0 + s * s * 3.0, 0.0, c * s * (3.0 - 1.0)],
            vec![0.0, 2.0, 0.0],
            vec![c * s * (3.0 - 1.0), 0.0, s * s * 1.0 + c * c * 3.0],
        ])
        .unwrap();
        let ev = a.eigenvalues();
        for (x, y) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        assert!(SymmetricMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).is_err());
    }

    #[test]
    fn sigma2_fallback_on_cancellation() {
        // Eigenvalues (1, 1, -0.5 + 1e-12): σ₂ = 1e-12 + ... nearly cancels.
        let d = [1.0, 1.0, -0.5 + 1e-9];
        let exact = pairwise(&d);
        let got = sigma2(&diag(&d));
        assert!((got - exact).abs() <= 1e-15);
    }

    fn sym_strategy(max_n: usize) -> impl Strategy<Value = SymmetricMatrix> {
        (2..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(-3.0f64..3.0, n * (n + 1) / 2).prop_map(move |v| {
                let mut it = v.into_iter();
                SymmetricMatrix::from_fn(n, |_, _| it.next().unwrap())
            })
        })
    }

    /// Γ₂⁺ samples: shift a random matrix by a multiple of the identity large enough
    /// to make it positive definite.
    fn cone_strategy(max_n: usize) -> impl Strategy<Value = SymmetricMatrix> {
        (2..=max_n).prop_flat_map(cone_strategy_n)
    }

    fn cone_strategy_n(n: usize) -> impl Strategy<Value = SymmetricMatrix> {
        let sym = proptest::collection::vec(-3.0f64..3.0, n * (n + 1) / 2).prop_map(move |v| {
            let mut it = v.into_iter();
            SymmetricMatrix::from_fn(n, |_, _| it.next().unwrap())
        });
        (sym, 0.1f64..2.0).prop_map(|(a, extra)| {
            let shift = a.eigenvalues()[0].abs() + extra;
            a.add(&SymmetricMatrix::scalar(a.dim(), shift))
        })
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #[test]
        fn homogeneity(a in sym_strategy(7), t in 0.1f64..5.0, k in 1usize..=3) {
            prop_assume!(k <= a.dim());
            let lhs = sigma_k_eigen(&a.scaled(t), k).unwrap();
            let rhs = t.powi(k as i32) * sigma_k_eigen(&a, k).unwrap();
            let abs_ev: Vec<f64> = a.eigenvalues().iter().map(|x| x.abs()).collect();
            let scale = t.powi(k as i32) * elementary_symmetric(&abs_ev, k)[k];
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn minors_agree_with_eigenvalues(a in sym_strategy(8), k in 1usize..=8) {
            prop_assume!(k <= a.dim());
            let m = sigma_k_minors(&a, k).unwrap();
            let e = sigma_k_eigen(&a, k).unwrap();
            // Scale by the size of the terms being summed to avoid spurious failures near zero.
            let ev = a.eigenvalues();
            let abs_terms = elementary_symmetric(&ev.iter().map(|x| x.abs()).collect::<Vec<_>>(), k)[k];
            prop_assert!((m - e).abs() <= 1e-10 * abs_terms.max(1e-300));
        }

        #[test]
        fn eigen_cache_is_reproducible(a in sym_strategy(8)) {
            let cached = a.eigenvalues().to_vec();
            let fresh = SymmetricMatrix::from_rows(&a.to_rows()).unwrap();
            for (x, y) in cached.iter().zip(fresh.eigenvalues()) {
                let scale = cached.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn gamma2_is_a_cone(a in cone_strategy(8), t in 0.01f64..100.0) {
            prop_assert!(in_gamma_k_plus(&a, 2).unwrap().in_cone);
            prop_assert!(in_gamma_k_plus(&a.scaled(t), 2).unwrap().in_cone);
        }

        /// Newton–Maclaurin: σ₂ / C(n,2) ≤ (σ₁/n)² on Γ₂⁺, so σ₁ ≥ √(2n/(n−1)) σ₂^{1/2}.
        /// Since ∂σ₂^{1/2}/∂a = T₁(A)/(2σ₂^{1/2}) and tr T₁ = (n−1)σ₁, the trace of the
        /// derivative is (n−1)σ₁/(2σ₂^{1/2}) ≥ √(n(n−1)/2), with equality at A = I.
        /// The weaker bound √(n(n−1)/2)·(n−1)/n follows.
        #[test]
        fn newton_maclaurin_trace_bound(a in cone_strategy(8)) {
            let n = a.dim() as f64;
            let s2 = sigma2(&a);
            let tr = newton_transform(&a).trace() / (2.0 * s2.sqrt());
            let sharp = (n * (n - 1.0) / 2.0).sqrt();
            prop_assert!(tr >= sharp * (1.0 - 1e-12));
            prop_assert!(tr >= sharp * (n - 1.0) / n);
        }

        #[test]
        fn dsigma2_is_newton_transform(a in sym_strategy(8)) {
            prop_assert_eq!(dsigma2(&a), newton_transform(&a));
        }

        #[test]
        fn trace_of_newton_transform(a in sym_strategy(8)) {
            let n = a.dim() as f64;
            let t = newton_transform(&a).trace();
            prop_assert!((t - (n - 1.0) * a.trace()).abs() <= 1e-12 * (1.0 + t.abs()));
        }

        #[test]
        fn garding_inequality((a, b) in (2usize..=6).prop_flat_map(|n| (cone_strategy_n(n), cone_strategy_n(n)))) {
            let (p, lb) = garding_pairing(&a, &b).unwrap();
            prop_assert!(p >= lb * (1.0 - 1e-12));
        }

        #[test]
        fn garding_equality_on_rays(a in cone_strategy(8), t in 0.1f64..10.0) {
            let (p, lb) = garding_pairing(&a, &a.scaled(t)).unwrap();
            prop_assert!(rel(p, lb) < 1e-10);
        }
    }
}
