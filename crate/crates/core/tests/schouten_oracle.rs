//! Independent check of the closed-form conformal Schouten eigenvalues.
//!
//! The metric `g = e^{−2u} g₀` on S⁵ is written in stereographic coordinates as a
//! plain coefficient field `g_ij(x)`. Christoffel symbols, Ricci and Schouten tensors
//! are then computed from first principles with nested central differences, without
//! using any conformal transformation law.

#![allow(clippy::needless_range_loop)]

use sigma2_core::symfun::SymmetricMatrix;
use sigma2_core::BackgroundGeometry;

const N: usize = 5;
const H: f64 = 1e-3;

type Mat = [[f64; N]; N];

fn u_of_theta(t: f64) -> (f64, f64, f64) {
    let u = 0.3 * t.cos() + 0.1 * (2.0 * t).cos();
    let du = -0.3 * t.sin() - 0.2 * (2.0 * t).sin();
    let d2u = -0.3 * t.cos() - 0.4 * (2.0 * t).cos();
    (u, du, d2u)
}

fn metric(x: &[f64; N]) -> Mat {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let theta = 2.0 * r2.sqrt().atan();
    let (u, _, _) = u_of_theta(theta);
    // Round metric 4/(1+|x|²)² δ, then the conformal factor e^{−2u}.
    let c = 4.0 / (1.0 + r2).powi(2) * (-2.0 * u).exp();
    let mut g = [[0.0; N]; N];
    for (i, row) in g.iter_mut().enumerate() {
        row[i] = c;
    }
    g
}

fn inverse(m: &Mat) -> Mat {
    let mut a = *m;
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for c in 0..N {
        let p = (c..N).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(p, c);
        inv.swap(p, c);
        let d = a[c][c];
        for j in 0..N {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..N {
            if r != c {
                let f = a[r][c];
                for j in 0..N {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

fn shifted(x: &[f64; N], k: usize, s: f64) -> [f64; N] {
    let mut y = *x;
    y[k] += s;
    y
}

/// Γ^k_ij at x.
fn christoffel(x: &[f64; N]) -> [[[f64; N]; N]; N] {
    let g = metric(x);
    let gi = inverse(&g);
    let mut dg = [[[0.0; N]; N]; N]; // dg[l][i][j] = ∂_l g_ij
    for l in 0..N {
        let p = metric(&shifted(x, l, H));
        let m = metric(&shifted(x, l, -H));
        for i in 0..N {
            for j in 0..N {
                dg[l][i][j] = (p[i][j] - m[i][j]) / (2.0 * H);
            }
        }
    }
    let mut gam = [[[0.0; N]; N]; N];
    for k in 0..N {
        for i in 0..N {
            for j in 0..N {
                let mut s = 0.0;
                for l in 0..N {
                    s += gi[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                }
                gam[k][i][j] = 0.5 * s;
            }
        }
    }
    gam
}

fn ricci(x: &[f64; N]) -> Mat {
    let gam = christoffel(x);
    let mut dgam = vec![[[[0.0; N]; N]; N]; N]; // dgam[m][k][i][j] = ∂_m Γ^k_ij
    for m in 0..N {
        let p = christoffel(&shifted(x, m, H));
        let q = christoffel(&shifted(x, m, -H));
        for k in 0..N {
            for i in 0..N {
                for j in 0..N {
                    dgam[m][k][i][j] = (p[k][i][j] - q[k][i][j]) / (2.0 * H);
                }
            }
        }
    }
    let mut ric = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..N {
                s += dgam[k][k][i][j] - dgam[j][k][i][k];
                for l in 0..N {
                    s += gam[k][k][l] * gam[l][i][j] - gam[k][j][l] * gam[l][i][k];
                }
            }
            ric[i][j] = s;
        }
    }
    ric
}

/// Eigenvalues of g⁻¹S_g at x via the symmetric matrix g^{-1/2} S g^{-1/2}.
fn schouten_eigenvalues(x: &[f64; N]) -> Vec<f64> {
    let g = metric(x);
    let gi = inverse(&g);
    let ric = ricci(x);
    let n = N as f64;
    let mut scal = 0.0;
    for i in 0..N {
        for j in 0..N {
            scal += gi[i][j] * ric[i][j];
        }
    }
    // g is a multiple of the identity in these coordinates, so g^{-1/2} is scalar.
    let c = g[0][0];
    let rows: Vec<Vec<f64>> = (0..N)
        .map(|i| (0..N).map(|j| (ric[i][j] - scal / (2.0 * (n - 1.0)) * g[i][j]) / (n - 2.0) / c).collect())
        .collect();
    // Symmetrize away the finite-difference noise.
    let sym: Vec<Vec<f64>> = (0..N).map(|i| (0..N).map(|j| 0.5 * (rows[i][j] + rows[j][i])).collect()).collect();
    SymmetricMatrix::from_rows(&sym).unwrap().eigenvalues().to_vec()
}

#[test]
fn sphere_closed_forms_match_general_coordinate_oracle() {
    let bg = BackgroundGeometry::round_sphere(N).unwrap();
    // Points on a 2D patch spanned by the first two coordinates.
    for &(a, b) in &[(0.3f64, 0.1f64), (0.7, -0.4), (1.2, 0.5), (0.05, 0.02)] {
        let x = [a, b, 0.0, 0.0, 0.0];
        let rho: f64 = (a * a + b * b).sqrt();
        let theta = 2.0 * rho.atan();
        let (u, du, d2u) = u_of_theta(theta);
        let w = bg.pointwise_schouten(theta, du, d2u, du * theta.cos() / theta.sin());
        // Eigenvalues of g⁻¹S_g are e^{2u} times those of W.
        let mut expected = vec![w.radial, w.tangential, w.tangential, w.tangential, w.tangential];
        for v in expected.iter_mut() {
            *v *= (2.0 * u).exp();
        }
        expected.sort_by(f64::total_cmp);
        let got = schouten_eigenvalues(&x);
        for (e, g) in expected.iter().zip(&got) {
            assert!((e - g).abs() < 1e-5, "at ({a},{b}): expected {expected:?}, oracle {got:?}");
        }
    }
}

#[test]
fn equator_point_values() {
    let bg = BackgroundGeometry::round_sphere(N).unwrap();
    let t = std::f64::consts::FRAC_PI_2;
    let du = -0.1 * t.sin();
    let d2u = -0.1 * t.cos();
    let w = bg.pointwise_schouten(t, du, d2u, du * t.cos() / t.sin());
    assert!((w.radial - 0.505).abs() < 1e-15);
    assert!((w.tangential - 0.495).abs() < 1e-15);
}
