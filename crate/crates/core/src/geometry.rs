//! Background metrics, the conformal Schouten tensor of `g = e^{−2u} g₀`, and the
//! integral functionals built from it.
//!
//! All tensors are expressed in a g₀-orthonormal frame. For a rotationally symmetric
//! exponent `u` the conformal Schouten tensor
//!
//! ```text
//! W = ∇²u + du⊗du − ½|∇u|² g₀ + S_{g₀}
//! ```
//!
//! has one radial eigenvalue and an (n−1)-fold tangential block, so every node is
//! summarised by a [`RadialSchouten`].

use std::sync::Arc;

use serde::Serialize;

use crate::discretize::{integrate, GridKind, RadialGrid};
use crate::error::{Error, Result};
use crate::symfun::SymmetricMatrix;

/// Which closed-form background is in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BackgroundKind {
    /// Unit round sphere, `S_{g₀} = ½ g₀`.
    RoundSphere,
    /// Euclidean ball of the given radius, `S_{g₀} = 0`.
    FlatRadialBall { radius: f64 },
    /// Ball of the given radius carrying the normal-coordinate curvature expansion
    /// `R = ΔR(0) r²/(2n)`, `Ric(x, x) = ΔR(0) r⁴/(n(n+2))`, `Ric(P) = 0`, `√det g₁ = 1`.
    CurvatureModel { radius: f64, laplacian_r: f64 },
}

/// Analytic background metric `g₀` in dimension n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BackgroundGeometry {
    kind: BackgroundKind,
    dim: usize,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 5 {
        return Err(Error::domain(format!("dimension n = {dim} must be >= 5")));
    }
    Ok(())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::domain(format!("radius {radius} must be positive")));
    }
    Ok(())
}

impl BackgroundGeometry {
    pub fn round_sphere(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { kind: BackgroundKind::RoundSphere, dim })
    }

    pub fn flat_ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        check_radius(radius)?;
        Ok(Self { kind: BackgroundKind::FlatRadialBall { radius }, dim })
    }

    /// Curvature-expansion model with `ΔR(0) ≤ 0` (a Weyl-nonflat point has `ΔR(0) = −|W(P)|²/6`).
    pub fn curvature_model(dim: usize, radius: f64, laplacian_r: f64) -> Result<Self> {
        check_dim(dim)?;
        check_radius(radius)?;
        if !(laplacian_r <= 0.0 && laplacian_r.is_finite()) {
            return Err(Error::domain(format!("laplacian of R at the origin must be <= 0, got {laplacian_r}")));
        }
        Ok(Self { kind: BackgroundKind::CurvatureModel { radius, laplacian_r }, dim })
    }

    pub fn kind(&self) -> BackgroundKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The curvature model takes the normal-coordinate expansions of R and Ric as given.
    pub fn assumes_curvature_expansions(&self) -> bool {
        matches!(self.kind, BackgroundKind::CurvatureModel { .. })
    }

    /// Uniform grid of the matching kind.
    pub fn grid(&self, n_nodes: usize) -> Result<RadialGrid> {
        match self.kind {
            BackgroundKind::RoundSphere => RadialGrid::sphere(self.dim, n_nodes),
            BackgroundKind::FlatRadialBall { radius } | BackgroundKind::CurvatureModel { radius, .. } => {
                RadialGrid::ball(self.dim, n_nodes, radius)
            }
        }
    }

    /// Checks that `grid` samples this background.
    pub fn check_grid(&self, grid: &RadialGrid) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::Shape(format!("grid dimension {} vs background dimension {}", grid.dim(), self.dim)));
        }
        let ok = match (self.kind, grid.kind()) {
            (BackgroundKind::RoundSphere, GridKind::SphereLatitude) => true,
            (BackgroundKind::FlatRadialBall { radius }, GridKind::BallRadius { radius: r })
            | (BackgroundKind::CurvatureModel { radius, .. }, GridKind::BallRadius { radius: r }) => {
                (radius - r).abs() <= 1e-14 * radius
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!("{:?} grid does not fit {:?}", grid.kind(), self.kind)));
        }
        Ok(())
    }

    /// Scalar curvature of g₀ at coordinate `x` (θ or r).
    pub fn scalar_curvature(&self, x: f64) -> f64 {
        let n = self.dim as f64;
        match self.kind {
            BackgroundKind::RoundSphere => n * (n - 1.0),
            BackgroundKind::FlatRadialBall { .. } => 0.0,
            BackgroundKind::CurvatureModel { laplacian_r, .. } => laplacian_r * x * x / (2.0 * n),
        }
    }

    /// `Ric(∂_r, ∂_r)` of g₀ at coordinate `x`.
    pub fn ricci_radial(&self, x: f64) -> f64 {
        let n = self.dim as f64;
        match self.kind {
            BackgroundKind::RoundSphere => n - 1.0,
            BackgroundKind::FlatRadialBall { .. } => 0.0,
            BackgroundKind::CurvatureModel { laplacian_r, .. } => laplacian_r * x * x / (n * (n + 2.0)),
        }
    }

    /// Radial and tangential eigenvalues of `S_{g₀}` at coordinate `x`.
    pub fn background_schouten(&self, x: f64) -> (f64, f64) {
        match self.kind {
            BackgroundKind::RoundSphere => (0.5, 0.5),
            BackgroundKind::FlatRadialBall { .. } => (0.0, 0.0),
            BackgroundKind::CurvatureModel { .. } => {
                let n = self.dim as f64;
                let r_scal = self.scalar_curvature(x);
                let ric_r = self.ricci_radial(x);
                let ric_t = (r_scal - ric_r) / (n - 1.0);
                let shift = r_scal / (2.0 * (n - 1.0));
                ((ric_r - shift) / (n - 2.0), (ric_t - shift) / (n - 2.0))
            }
        }
    }

    /// `Σκ²` of the trace-free tangential Hessian correction carried by the curvature
    /// model: the Christoffel symbols of normal coordinates shift `∇²u` by a block
    /// whose squared norm is `u'² r² (−ΔR(0))/(n(n+2))` on spherical average.
    pub fn hessian_anisotropy_sq(&self, x: f64, du: f64) -> f64 {
        match self.kind {
            BackgroundKind::CurvatureModel { laplacian_r, .. } => {
                let n = self.dim as f64;
                du * du * x * x * (-laplacian_r) / (n * (n + 2.0))
            }
            _ => 0.0,
        }
    }

    /// Conformal Schouten eigenvalues at one node from `u'`, `u''` and the tangential
    /// quotient `q` (`u' cot θ` or `u'/r`, replaced by `u''` at poles).
    pub fn pointwise_schouten(&self, x: f64, du: f64, d2u: f64, q: f64) -> RadialSchouten {
        let half_sq = 0.5 * du * du;
        let (s_r, s_t) = self.background_schouten(x);
        RadialSchouten {
            dim: self.dim,
            radial: d2u + half_sq + s_r,
            tangential: q - half_sq + s_t,
            aniso_sq: self.hessian_anisotropy_sq(x, du),
        }
    }
}

/// Rotationally symmetric Schouten data at one node.
///
/// The matrix is `diag(radial, tangential + κ₁, …, tangential + κ_{n−1})` with
/// `Σκ = 0` and `Σκ² = aniso_sq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialSchouten {
    pub dim: usize,
    pub radial: f64,
    pub tangential: f64,
    pub aniso_sq: f64,
}

impl RadialSchouten {
    pub fn isotropic(dim: usize, radial: f64, tangential: f64) -> Self {
        Self { dim, radial, tangential, aniso_sq: 0.0 }
    }

    pub fn sigma1(&self) -> f64 {
        self.radial + (self.dim as f64 - 1.0) * self.tangential
    }

    pub fn sigma2(&self) -> f64 {
        let m = self.dim as f64 - 1.0;
        m * self.radial * self.tangential + 0.5 * m * (m - 1.0) * self.tangential * self.tangential
            - 0.5 * self.aniso_sq
    }

    /// `tr W = σ₁` and `tr W² = σ₁² − 2σ₂`.
    pub fn trace_of_square(&self) -> f64 {
        let m = self.dim as f64 - 1.0;
        self.radial * self.radial + m * self.tangential * self.tangential + self.aniso_sq
    }

    /// Radial and mean tangential entries of `T₁(W) = σ₁ I − W`.
    pub fn newton_diagonal(&self) -> (f64, f64) {
        let s1 = self.sigma1();
        (s1 - self.radial, s1 - self.tangential)
    }

    pub fn in_gamma2(&self) -> bool {
        self.sigma1() > 0.0 && self.sigma2() > 0.0
    }

    /// Tangential offsets `κ_i`: alternating `±c` on an even number of slots, a trailing
    /// zero when n − 1 is odd.
    pub fn tangential_offsets(&self) -> Vec<f64> {
        let m = self.dim - 1;
        let active = if m % 2 == 0 { m } else { m - 1 };
        let c = if active == 0 { 0.0 } else { (self.aniso_sq / active as f64).sqrt() };
        (0..m)
            .map(|i| {
                if i >= active {
                    0.0
                } else if i % 2 == 0 {
                    c
                } else {
                    -c
                }
            })
            .collect()
    }

    pub fn to_matrix(&self) -> SymmetricMatrix {
        let mut d = Vec::with_capacity(self.dim);
        d.push(self.radial);
        d.extend(self.tangential_offsets().into_iter().map(|k| self.tangential + k));
        SymmetricMatrix::from_diagonal(&d)
    }
}

/// Samples of the conformal exponent `u` (with `g = e^{−2u} g₀`) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalField {
    grid: Arc<RadialGrid>,
    u: Vec<f64>,
}

impl ConformalField {
    pub fn new(grid: Arc<RadialGrid>, u: Vec<f64>) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::Shape(format!("{} samples for {} nodes", u.len(), grid.len())));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at node {i}")));
        }
        Ok(Self { grid, u })
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let u = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::new(grid, u)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn into_values(self) -> Vec<f64> {
        self.u
    }

    /// Same grid, new samples.
    pub fn with_values(&self, u: Vec<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.grid), u)
    }

    /// `u + c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self { grid: Arc::clone(&self.grid), u: self.u.iter().map(|v| v + c).collect() }
    }

    /// `(u', u'', q)` with q the tangential quotient.
    pub fn derivatives(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let du = self.grid.first_derivative_operator().apply_unchecked(&self.u);
        let d2u = self.grid.second_derivative_operator().apply_unchecked(&self.u);
        let q = self.grid.tangential_quotient(&du, &d2u);
        (du, d2u, q)
    }
}

/// Conformal Schouten data per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SchoutenField {
    pub nodes: Vec<RadialSchouten>,
}

impl SchoutenField {
    pub fn matrix(&self, i: usize) -> SymmetricMatrix {
        self.nodes[i].to_matrix()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First node (in grid order) outside Γ₂⁺, if any.
    pub fn first_outside_gamma2(&self) -> Option<usize> {
        self.nodes.iter().position(|w| !w.in_gamma2())
    }
}

/// `W` of `g = e^{−2u} g₀` at every node.
pub fn schouten_conformal(bg: &BackgroundGeometry, field: &ConformalField) -> Result<SchoutenField> {
    bg.check_grid(field.grid())?;
    let (du, d2u, q) = field.derivatives();
    let nodes =
        field.grid().nodes().iter().enumerate().map(|(i, &x)| bg.pointwise_schouten(x, du[i], d2u[i], q[i])).collect();
    Ok(SchoutenField { nodes })
}

/// `σ₂(g) = e^{4u} σ₂(W)` per node.
pub fn sigma2_metric(bg: &BackgroundGeometry, field: &ConformalField) -> Result<Vec<f64>> {
    let w = schouten_conformal(bg, field)?;
    Ok(w.nodes.iter().zip(field.values()).map(|(w, &u)| (4.0 * u).exp() * w.sigma2()).collect())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::domain(format!("epsilon {eps} outside [0, 2]")));
    }
    Ok(())
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("{what} is not finite")))
    }
}

/// `F₂ = ∫ e^{(4−n)u} σ₂(W) dvol(g₀)`.
pub fn functional_f2(bg: &BackgroundGeometry, field: &ConformalField) -> Result<f64> {
    let w = schouten_conformal(bg, field)?;
    let n = bg.dim() as f64;
    let dens: Vec<f64> = w.nodes.iter().zip(field.values()).map(|(w, &u)| ((4.0 - n) * u).exp() * w.sigma2()).collect();
    finite(integrate(field.grid(), &dens)?, "F2")
}

/// `V_ε = ∫ e^{(2ε−n)u} dvol(g₀)`.
pub fn functional_v_eps(bg: &BackgroundGeometry, field: &ConformalField, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    bg.check_grid(field.grid())?;
    let n = bg.dim() as f64;
    let dens: Vec<f64> = field.values().iter().map(|&u| ((2.0 * eps - n) * u).exp()).collect();
    finite(integrate(field.grid(), &dens)?, "V_eps")
}

/// `F̃_{2,ε} = V_ε^{−(n−4)/(n−2ε)} F₂`.
pub fn functional_f2_tilde_eps(bg: &BackgroundGeometry, field: &ConformalField, eps: f64) -> Result<f64> {
    let f2 = functional_f2(bg, field)?;
    let v = functional_v_eps(bg, field, eps)?;
    Ok(normalized(f2, v, bg.dim(), eps))
}

/// `F̃₂ = vol(g)^{−(n−4)/n} F₂`.
pub fn functional_f2_tilde(bg: &BackgroundGeometry, field: &ConformalField) -> Result<f64> {
    functional_f2_tilde_eps(bg, field, 0.0)
}

/// `V^{−(n−4)/(n−2ε)} F`.
pub fn normalized(f2: f64, v_eps: f64, dim: usize, eps: f64) -> f64 {
    let n = dim as f64;
    v_eps.powf(-(n - 4.0) / (n - 2.0 * eps)) * f2
}

/// Relative residual of the divergence identity
///
/// ```text
/// 2∫σ₂(g) = −∫T^{ij}u_i u_j + (n−1)/2 ∫σ₁(g)|∇u|²_g + ∫T^{ij}S(g₀)_{ij}
/// ```
///
/// (all integrals against dvol(g)). Needs a closed background, so only the round
/// sphere is accepted.
pub fn divergence_identity_residual(bg: &BackgroundGeometry, field: &ConformalField) -> Result<f64> {
    if bg.kind() != BackgroundKind::RoundSphere {
        return Err(Error::domain("the divergence identity needs a closed background (round sphere)"));
    }
    let w = schouten_conformal(bg, field)?;
    let (du, _, _) = field.derivatives();
    let n = bg.dim() as f64;
    let mut lhs = Vec::with_capacity(w.len());
    let mut rhs = Vec::with_capacity(w.len());
    for (i, (wi, &u)) in w.nodes.iter().zip(field.values()).enumerate() {
        let e = ((4.0 - n) * u).exp();
        let (t_rr, _) = wi.newton_diagonal();
        let (s_r, s_t) = bg.background_schouten(field.grid().nodes()[i]);
        let s1 = wi.sigma1();
        let t_dot_s = t_rr * s_r + (n - 1.0) * (s1 - wi.tangential) * s_t;
        let g2 = du[i] * du[i];
        lhs.push(2.0 * e * wi.sigma2());
        rhs.push(e * (-t_rr * g2 + 0.5 * (n - 1.0) * s1 * g2 + t_dot_s));
    }
    let l = integrate(field.grid(), &lhs)?;
    let r = integrate(field.grid(), &rhs)?;
    Ok((l - r).abs() / (l.abs() + r.abs()))
}

/// `F₂ / vol(g)^{(n−4)/n}` for an admissible field.
pub fn sobolev_quotient(bg: &BackgroundGeometry, field: &ConformalField) -> Result<f64> {
    let w = schouten_conformal(bg, field)?;
    if let Some(i) = w.first_outside_gamma2() {
        return Err(Error::cone(
            format!("node {i} (x = {})", field.grid().nodes()[i]),
            format!("sigma_1 = {}, sigma_2 = {}", w.nodes[i].sigma1(), w.nodes[i].sigma2()),
        ));
    }
    functional_f2_tilde(bg, field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symfun::{garding_pairing, sigma_k};
    use std::f64::consts::PI;

    fn sphere_field(n: usize, nodes: usize, f: impl Fn(f64) -> f64) -> (BackgroundGeometry, ConformalField) {
        let bg = BackgroundGeometry::round_sphere(n).unwrap();
        let grid = Arc::new(bg.grid(nodes).unwrap());
        (bg, ConformalField::from_fn(grid, f).unwrap())
    }

    #[test]
    fn round_sphere_zero_field() {
        let (bg, f) = sphere_field(5, 64, |_| 0.0);
        let w = schouten_conformal(&bg, &f).unwrap();
        for i in 0..w.len() {
            assert_eq!(w.matrix(i), SymmetricMatrix::scalar(5, 0.5));
        }
        for s in sigma2_metric(&bg, &f).unwrap() {
            assert_eq!(s, 2.5);
        }
    }

    #[test]
    fn flat_constant_field_has_zero_schouten() {
        let bg = BackgroundGeometry::flat_ball(6, 1.0).unwrap();
        let grid = Arc::new(bg.grid(32).unwrap());
        let f = ConformalField::from_fn(grid.clone(), |_| 1.3).unwrap();
        let w = schouten_conformal(&bg, &f).unwrap();
        for node in &w.nodes {
            assert!(node.radial.abs() < 1e-10 && node.tangential.abs() < 1e-10);
        }
        let zero = ConformalField::from_fn(grid, |_| 0.0).unwrap();
        assert!(sigma2_metric(&bg, &zero).unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn cosine_at_equator() {
        let (bg, f) = sphere_field(5, 257, |t| 0.1 * t.cos());
        let w = schouten_conformal(&bg, &f).unwrap();
        let mid = w.nodes[128];
        assert!((mid.radial - 0.505).abs() < 1e-9, "{}", mid.radial);
        assert!((mid.tangential - 0.495).abs() < 1e-9, "{}", mid.tangential);
    }

    #[test]
    fn constant_field_scaling() {
        let (bg, f) = sphere_field(5, 64, |_| 0.3);
        for s in sigma2_metric(&bg, &f).unwrap() {
            assert!((s / (2.5 * (1.2f64).exp()) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn round_sphere_functionals() {
        let (bg, f) = sphere_field(5, 256, |_| 0.0);
        let f2 = functional_f2(&bg, &f).unwrap();
        assert!((f2 / (2.5 * PI.powi(3)) - 1.0).abs() < 1e-8);
        let ft = functional_f2_tilde(&bg, &f).unwrap();
        assert!((ft / (2.5 * PI.powi(3).powf(0.8)) - 1.0).abs() < 1e-8);
        let v2 = functional_v_eps(&bg, &f, 2.0).unwrap();
        assert!((v2 / PI.powi(3) - 1.0).abs() < 1e-8);
        assert!(functional_v_eps(&bg, &f, 2.5).is_err());
        assert!((sobolev_quotient(&bg, &f).unwrap() - ft).abs() < 1e-12);
    }

    #[test]
    fn conformal_covariance() {
        let (bg, f) = sphere_field(5, 128, |t| 0.2 * t.cos() + 0.05 * (2.0 * t).cos());
        let c = 0.37;
        let g = f.shifted(c);
        let s_f = sigma2_metric(&bg, &f).unwrap();
        let s_g = sigma2_metric(&bg, &g).unwrap();
        for (a, b) in s_f.iter().zip(&s_g) {
            assert!((b / (a * (4.0 * c).exp()) - 1.0).abs() < 1e-10);
        }
        let n = 5.0;
        let rel = |a: f64, b: f64| (a / b - 1.0).abs();
        assert!(rel(functional_f2(&bg, &g).unwrap(), functional_f2(&bg, &f).unwrap() * ((4.0 - n) * c).exp()) < 1e-10);
        for eps in [0.0, 0.5, 2.0] {
            let vf = functional_v_eps(&bg, &f, eps).unwrap();
            let vg = functional_v_eps(&bg, &g, eps).unwrap();
            assert!(rel(vg, vf * ((2.0 * eps - n) * c).exp()) < 1e-10);
            let tf = functional_f2_tilde_eps(&bg, &f, eps).unwrap();
            let tg = functional_f2_tilde_eps(&bg, &g, eps).unwrap();
            assert!(rel(tf, tg) < 1e-10);
        }
        assert!(rel(sobolev_quotient(&bg, &f).unwrap(), sobolev_quotient(&bg, &g).unwrap()) < 1e-10);
    }

    #[test]
    fn constants_are_critical() {
        let (bg, f) = sphere_field(7, 100, |_| -0.4);
        let s = sigma2_metric(&bg, &f).unwrap();
        for v in &s {
            assert!((v - s[0]).abs() <= 4.0 * f64::EPSILON * s[0]);
        }
    }

    #[test]
    fn divergence_identity_trivial_and_convergent() {
        let (bg, f) = sphere_field(5, 200, |_| 0.0);
        assert!(divergence_identity_residual(&bg, &f).unwrap() <= 1e-10);
        let (bg, f200) = sphere_field(5, 200, |t| 0.2 * t.cos());
        let (_, f400) = sphere_field(5, 400, |t| 0.2 * t.cos());
        let r200 = divergence_identity_residual(&bg, &f200).unwrap();
        let r400 = divergence_identity_residual(&bg, &f400).unwrap();
        assert!(r200 <= 1e-3, "{r200}");
        assert!(r400 <= r200 / 3.0, "{r200} -> {r400}");
    }

    #[test]
    fn divergence_identity_rejects_open_backgrounds() {
        let bg = BackgroundGeometry::flat_ball(5, 1.0).unwrap();
        let f = ConformalField::from_fn(Arc::new(bg.grid(32).unwrap()), |r| r * r).unwrap();
        assert!(divergence_identity_residual(&bg, &f).is_err());
    }

    #[test]
    fn sobolev_quotient_requires_admissibility() {
        // Large oscillation drives σ₂ negative somewhere.
        let (bg, f) = sphere_field(5, 128, |t| 3.0 * (3.0 * t).cos());
        assert!(matches!(sobolev_quotient(&bg, &f), Err(Error::ConeViolation { .. })));
        let (bg, f) = sphere_field(5, 128, |t| 0.1 * t.cos());
        let q = sobolev_quotient(&bg, &f).unwrap();
        assert!(q.is_finite() && q > 0.0);
    }

    #[test]
    fn grid_compatibility() {
        let bg = BackgroundGeometry::round_sphere(5).unwrap();
        let ball = Arc::new(RadialGrid::ball(5, 32, 1.0).unwrap());
        let f = ConformalField::from_fn(ball, |_| 0.0).unwrap();
        assert!(matches!(schouten_conformal(&bg, &f), Err(Error::Shape(_))));
        let other_dim = Arc::new(RadialGrid::sphere(6, 32).unwrap());
        let f = ConformalField::from_fn(other_dim, |_| 0.0).unwrap();
        assert!(matches!(schouten_conformal(&bg, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn radial_schouten_matches_matrix() {
        for aniso in [0.0, 0.3] {
            for n in [5, 6, 9] {
                let w = RadialSchouten { dim: n, radial: 0.7, tangential: 0.4, aniso_sq: aniso };
                let m = w.to_matrix();
                assert!((sigma_k(&m, 2).unwrap() - w.sigma2()).abs() < 1e-13);
                assert!((m.trace() - w.sigma1()).abs() < 1e-13);
                assert!((m.trace_of_square() - w.trace_of_square()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn pole_eigenvalues_coincide() {
        let (bg, f) = sphere_field(5, 256, |t| 0.2 * t.cos() + 0.1 * (2.0 * t).cos());
        let w = schouten_conformal(&bg, &f).unwrap();
        for i in [0, 255] {
            assert!((w.nodes[i].radial - w.nodes[i].tangential).abs() < 1e-6);
        }
    }

    #[test]
    fn garding_positivity_against_background() {
        let (bg, f) = sphere_field(5, 128, |t| 0.3 * t.cos());
        let w = schouten_conformal(&bg, &f).unwrap();
        let s0 = SymmetricMatrix::scalar(5, 0.5);
        for i in 0..w.len() {
            let (p, b) = garding_pairing(&w.matrix(i), &s0).unwrap();
            assert!(p >= b * (1.0 - 1e-12));
        }
    }

    #[test]
    fn curvature_model_background_trace() {
        let bg = BackgroundGeometry::curvature_model(9, 1.0, -1.0).unwrap();
        let n = 9.0;
        for r in [0.1, 0.5, 0.9] {
            let (s_r, s_t) = bg.background_schouten(r);
            let tr = s_r + (n - 1.0) * s_t;
            assert!((tr - bg.scalar_curvature(r) / (2.0 * (n - 1.0))).abs() < 1e-15);
        }
        assert_eq!(bg.background_schouten(0.0), (0.0, 0.0));
        assert!(BackgroundGeometry::curvature_model(9, 1.0, 0.5).is_err());
        assert!(BackgroundGeometry::round_sphere(4).is_err());
    }
}
