//! Bubble test metric on a curvature-model patch and its comparison with the round sphere.
//!
//! Everything is rotationally symmetric about the gluing point. A conformal exponent `u`
//! (with `g̃ = e^{−2u} g₁`) is described by its log-slope `α = r u'` plus, in the
//! transition annulus, a cutoff `ξ` blending in the background exponent `u₀`:
//!
//! ```text
//! α = 2r²/(λ+r²)   bubble           r ≤ δ
//!     Bernoulli    gluing           δ ≤ r ≤ δ₁
//!     γ            tube             δ₁ ≤ r ≤ r₆
//!     transition   transition       r₆ ≤ r ≤ r₅
//!     bridge → 0                    r₅ ≤ r ≤ r₄
//!     0            background       r ≥ r₄
//! ```
//!
//! The tube carries the normalization `u = γ log r`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{compensated_sum, gauss_legendre, sphere_area, CompositeRule};
use crate::error::{Error, Result};
use crate::geometry::{BackgroundGeometry, RadialSchouten};
use crate::symfun::ConeReport;

/// Gauss–Legendre order used for panels and nested integrals.
const GL_ORDER: usize = 16;

/// Bubble scale and patch data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleParams {
    pub n: usize,
    pub lambda: f64,
    pub r0: f64,
    pub beta: f64,
    /// `ΔR(0) ≤ 0` of the curvature model.
    pub laplacian_r: f64,
}

impl BubbleParams {
    pub fn new(n: usize, lambda: f64, r0: f64, beta: f64, laplacian_r: f64) -> Result<Self> {
        if n < 9 {
            return Err(Error::domain(format!("bubble construction needs n >= 9, got {n}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda = {lambda} must be positive")));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::domain(format!("r0 = {r0} must be positive")));
        }
        if !(beta > 0.25 && beta < 0.5) {
            return Err(Error::domain(format!("beta = {beta} outside (1/4, 1/2)")));
        }
        if !(laplacian_r <= 0.0 && laplacian_r.is_finite()) {
            return Err(Error::domain(format!("Delta R(0) = {laplacian_r} must be <= 0")));
        }
        if lambda.powf(beta) >= r0 {
            return Err(Error::domain(format!("lambda^beta = {} not below r0 = {r0}", lambda.powf(beta))));
        }
        Ok(Self { n, lambda, r0, beta, laplacian_r })
    }

    /// Cutoff radius `δ = λ^β` of the bubble region.
    pub fn delta(&self) -> f64 {
        self.lambda.powf(self.beta)
    }

    pub fn background(&self) -> BackgroundGeometry {
        BackgroundGeometry::curvature_model(self.n, self.r0, self.laplacian_r)
            .expect("parameters validated at construction")
    }

    /// Whether β lies in `(1/4, (n−4)/(2n))`, where the remainders of the comparison are
    /// `o(λ²)`.
    pub fn beta_in_proof_range(&self) -> bool {
        let n = self.n as f64;
        self.beta > 0.25 && self.beta < (n - 4.0) / (2.0 * n)
    }
}

fn check_radius_in_patch(bp: &BubbleParams, r: f64) -> Result<()> {
    if !(r > 0.0 && r < bp.r0) {
        return Err(Error::domain(format!("radius {r} outside (0, {})", bp.r0)));
    }
    Ok(())
}

/// Exact Schouten data of `g_v = v^{−2} g₁`, `v = λ + r²`, on the curvature model.
pub fn bubble_schouten(bp: &BubbleParams, r: f64) -> RadialSchouten {
    let v = bp.lambda + r * r;
    let du = 2.0 * r / v;
    let d2u = 2.0 * (bp.lambda - r * r) / (v * v);
    bp.background().pointwise_schouten(r, du, d2u, 2.0 / v)
}

/// `tr A` and `tr A²` for the bubble, split into the closed-form leading terms and the
/// model remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleTraces {
    pub tr_a: f64,
    pub tr_a2: f64,
    /// `tr A` minus `2nλ/v² + R/(2(n−1))`.
    pub remainder_a: f64,
    /// `tr A²` minus `4nλ²/v⁴ + 2Rλ/((n−1)v²) − Ric(∇v,∇v)/v²`.
    pub remainder_a2: f64,
}

pub fn bubble_traces(bp: &BubbleParams, r: f64) -> Result<BubbleTraces> {
    check_radius_in_patch(bp, r)?;
    let bg = bp.background();
    let n = bp.n as f64;
    let lam = bp.lambda;
    let v = lam + r * r;
    let scal = bg.scalar_curvature(r);
    // Ric(∇v, ∇v) = 4 Ric(x, x) = 4 r² Ric(∂_r, ∂_r).
    let ric_vv = 4.0 * r * r * bg.ricci_radial(r);
    let lead_a = 2.0 * n * lam / (v * v) + scal / (2.0 * (n - 1.0));
    let lead_a2 = 4.0 * n * lam * lam / v.powi(4) + 2.0 * scal * lam / ((n - 1.0) * v * v) - ric_vv / (v * v);
    // The model's only extra term is |S_{g₁}|², of order r⁴.
    let (s_r, s_t) = bg.background_schouten(r);
    let rem_a2 = s_r * s_r + (n - 1.0) * s_t * s_t;
    Ok(BubbleTraces { tr_a: lead_a, tr_a2: lead_a2 + rem_a2, remainder_a: 0.0, remainder_a2: rem_a2 })
}

/// `B`, `C` and `Y₂(Sⁿ) = 2n(n−1)B^{4/n}`. `c` is `None` below n = 9, where its
/// integral diverges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereConstants {
    pub n: usize,
    pub b: f64,
    pub c: Option<f64>,
    pub y2_sphere: f64,
}

/// `∫_0^{π/2} f(φ) dφ` at two resolutions; errors if they disagree beyond `1e−12`.
fn angular_quadrature(f: impl Fn(f64) -> f64, what: &str) -> Result<f64> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let run = |panels: usize| {
        let breaks: Vec<f64> = (0..=panels).map(|k| half_pi * k as f64 / panels as f64).collect();
        CompositeRule::new(&breaks, 24).integrate(&f)
    };
    let coarse = run(8);
    let fine = run(16);
    if !((coarse - fine).abs() <= 1e-12 * fine.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Numeric(format!("{what}: quadrature not converged ({coarse} vs {fine})")));
    }
    Ok(fine)
}

/// `B = ∫_{ℝⁿ} (1+|x|²)^{−n} dx` via `|x| = tan φ`.
fn constant_b(n: usize) -> Result<f64> {
    let k = n as i32 - 1;
    let integral = angular_quadrature(|p| (p.sin() * p.cos()).powi(k), "B")?;
    Ok(sphere_area(n - 1) * integral)
}

/// The λ²-coefficient constant `C`; diverges for n < 9.
pub fn weyl_constant_c(n: usize) -> Result<f64> {
    if n < 5 {
        return Err(Error::domain(format!("dimension n = {n} must be >= 5")));
    }
    if n < 9 {
        return Err(Error::Divergence(format!(
            "C needs n >= 9: its integrand decays like |x|^{} at infinity",
            7 - n as i64
        )));
    }
    let nf = n as f64;
    let ni = n as i32;
    // |x|² and |x|⁴ terms after |x| = tan φ.
    let integral = angular_quadrature(
        |p| {
            let (s, c) = (p.sin(), p.cos());
            s.powi(ni + 1) * c.powi(ni - 7) / (2.0 * nf) + 2.0 * s.powi(ni + 3) * c.powi(ni - 9) / (nf * (nf + 2.0))
        },
        "C",
    )?;
    Ok(sphere_area(n - 1) * integral)
}

pub fn sphere_constants(n: usize) -> Result<SphereConstants> {
    if n < 5 {
        return Err(Error::domain(format!("dimension n = {n} must be >= 5")));
    }
    let b = constant_b(n)?;
    let c = if n >= 9 { Some(weyl_constant_c(n)?) } else { None };
    let nf = n as f64;
    Ok(SphereConstants { n, b, c, y2_sphere: 2.0 * nf * (nf - 1.0) * b.powf(4.0 / nf) })
}

/// Geometric panel breakpoints on `[lo, hi]` with ratio at most `ratio` (`lo > 0`).
fn geometric_breaks(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    let panels = ((hi / lo).ln() / ratio.ln()).ceil().max(1.0) as usize;
    (0..=panels).map(|k| lo * (hi / lo).powf(k as f64 / panels as f64)).collect()
}

/// Bubble integrals over `B(0, λ^β)` and their expansions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleIntegrals {
    pub sigma2_integral: f64,
    pub volume_integral: f64,
    /// `λ^{−n/2+2}[2n(n−1)B + CΔR(0)λ²]`.
    pub sigma2_expansion: f64,
    /// `λ^{−n/2}B`.
    pub volume_expansion: f64,
    pub sigma2_rel_dev: f64,
    pub volume_rel_dev: f64,
}

pub fn bubble_integrals(bp: &BubbleParams) -> Result<BubbleIntegrals> {
    let consts = sphere_constants(bp.n)?;
    let c = consts.c.expect("n >= 9 enforced by BubbleParams");
    let n = bp.n as f64;
    let lam = bp.lambda;
    let sl = lam.sqrt();
    let omega = sphere_area(bp.n - 1);
    // Rescaled radius s = r/√λ on [0, λ^{β−1/2}].
    let s_max = bp.delta() / sl;
    let mut breaks = vec![0.0];
    breaks.extend(geometric_breaks(0.05_f64.min(s_max / 2.0), s_max, 1.25));
    let rule = CompositeRule::new(&breaks, GL_ORDER);
    let mut f2 = Vec::with_capacity(rule.nodes.len());
    let mut vol = Vec::with_capacity(rule.nodes.len());
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let r = sl * s;
        let v = lam + r * r;
        let jac = w * sl * omega * r.powi(bp.n as i32 - 1);
        let ws = bubble_schouten(bp, r);
        f2.push(jac * v.powi(4 - bp.n as i32) * ws.sigma2());
        vol.push(jac * v.powi(-(bp.n as i32)));
    }
    let sigma2_integral = compensated_sum(f2);
    let volume_integral = compensated_sum(vol);
    let sigma2_expansion = lam.powf(2.0 - n / 2.0) * (2.0 * n * (n - 1.0) * consts.b + c * bp.laplacian_r * lam * lam);
    let volume_expansion = lam.powf(-n / 2.0) * consts.b;
    Ok(BubbleIntegrals {
        sigma2_integral,
        volume_integral,
        sigma2_expansion,
        volume_expansion,
        sigma2_rel_dev: (sigma2_integral - sigma2_expansion).abs() / sigma2_expansion.abs(),
        volume_rel_dev: (volume_integral - volume_expansion).abs() / volume_expansion,
    })
}

/// Solves `y = c₀ + c₁ x^{p₁} + c₂ x^{p₂}` through three points.
#[allow(clippy::needless_range_loop)]
pub fn richardson3(xs: [f64; 3], ys: [f64; 3], p1: f64, p2: f64) -> Result<[f64; 3]> {
    let rows: Vec<[f64; 4]> = (0..3).map(|i| [1.0, xs[i].powf(p1), xs[i].powf(p2), ys[i]]).collect();
    let mut m = rows;
    for c in 0..3 {
        let p = (c..3).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, p);
        if m[c][c].abs() < 1e-300 {
            return Err(Error::Numeric("singular Richardson system".into()));
        }
        for r in 0..3 {
            if r != c {
                let f = m[r][c] / m[c][c];
                for j in c..4 {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    Ok([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// λ²-coefficient of the bubble σ₂ integral extracted from three λ values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeylFit {
    pub coefficient: f64,
    /// `C·ΔR(0)`.
    pub predicted: f64,
    pub rel_error: f64,
}

/// Fits the λ² coefficient of `λ^{n/2−2}∫σ₂ dvol` on `B(0, λ^β)`.
///
/// The curvature-free integral is subtracted first so the fit sees only the ΔR-dependent
/// part; the truncation of the ball leaves remainders in `λ^q` and `λ^{q+1−2β}` with
/// `q = (n−8)(1/2−β)`, which the three-point fit removes.
pub fn weyl_coefficient_fit(n: usize, r0: f64, beta: f64, laplacian_r: f64, lambdas: [f64; 3]) -> Result<WeylFit> {
    if laplacian_r == 0.0 {
        return Err(Error::domain("the fit needs Delta R(0) < 0"));
    }
    let nf = n as f64;
    let mut ys = [0.0; 3];
    for (y, &lam) in ys.iter_mut().zip(&lambdas) {
        let curved = bubble_integrals(&BubbleParams::new(n, lam, r0, beta, laplacian_r)?)?;
        let flat = bubble_integrals(&BubbleParams::new(n, lam, r0, beta, 0.0)?)?;
        *y = (curved.sigma2_integral - flat.sigma2_integral) * lam.powf(nf / 2.0 - 2.0) / (lam * lam);
    }
    let q = (nf - 8.0) * (0.5 - beta);
    let fit = richardson3(lambdas, ys, q, q + 1.0 - 2.0 * beta)?;
    let c = weyl_constant_c(n)?;
    let predicted = c * laplacian_r;
    Ok(WeylFit { coefficient: fit[0], predicted, rel_error: (fit[0] - predicted).abs() / predicted.abs() })
}

/// Solution of the Bernoulli equation
/// `(n−4)/4 + (rα' − Ar²α)/(2α − α² − Ar²α) = 0`:
///
/// ```text
/// α = 2 / (1 + 2(a₁ + H(r)) r^{(n−4)/2} e^{−nAr²/8}),
/// H(r) = −(nA/8) ∫_1^r t^{−(n−6)/2} e^{nAt²/8} dt.
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernoulliProfile {
    pub n: usize,
    /// Padding constant A.
    pub a_pad: f64,
    pub a1: f64,
}

impl BernoulliProfile {
    pub fn new(n: usize, a_pad: f64, a1: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::domain(format!("dimension n = {n} must be >= 5")));
        }
        if !(a_pad >= 0.0 && a_pad.is_finite()) {
            return Err(Error::domain(format!("padding constant A = {a_pad} must be >= 0")));
        }
        if !a1.is_finite() {
            return Err(Error::domain("a1 must be finite"));
        }
        Ok(Self { n, a_pad, a1 })
    }

    /// The profile with `α(δ) = 2δ²/(λ+δ²)`.
    pub fn matched(n: usize, a_pad: f64, lambda: f64, delta: f64) -> Result<Self> {
        let probe = Self::new(n, a_pad, 0.0)?;
        let nf = n as f64;
        let a1 = lambda * (nf * a_pad * delta * delta / 8.0).exp() / (2.0 * delta.powf(nf / 2.0)) - probe.h(delta);
        Self::new(n, a_pad, a1)
    }

    /// `H(r)`, by Gauss–Legendre in `log t`.
    pub fn h(&self, r: f64) -> f64 {
        if self.a_pad == 0.0 || r == 1.0 {
            return 0.0;
        }
        let nf = self.n as f64;
        let k = nf * self.a_pad / 8.0;
        let (gx, gw) = gl_cached();
        let span = r.ln();
        let panels = (span.abs() / 0.25).ceil().max(1.0) as usize;
        let step = span / panels as f64;
        let mut terms = Vec::with_capacity(panels * gx.len());
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * step;
            for (x, w) in gx.iter().zip(gw) {
                let s = mid + 0.5 * step * x;
                let t = s.exp();
                // t^{−(n−6)/2} e^{kt²} dt with dt = t ds.
                terms.push(0.5 * step * w * (s * (8.0 - nf) / 2.0 + k * t * t).exp());
            }
        }
        -k * compensated_sum(terms)
    }

    fn denominator(&self, r: f64) -> f64 {
        let nf = self.n as f64;
        let e = (-nf * self.a_pad * r * r / 8.0).exp();
        1.0 + 2.0 * (self.a1 + self.h(r)) * r.powf((nf - 4.0) / 2.0) * e
    }

    /// α without the range check.
    pub fn alpha_unchecked(&self, r: f64) -> f64 {
        2.0 / self.denominator(r)
    }

    pub fn alpha(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::domain(format!("radius {r} must be positive")));
        }
        let a = self.alpha_unchecked(r);
        if !(a > 0.0 && a < 2.0) {
            return Err(Error::stage("bernoulli", format!("alpha({r}) = {a} left (0, 2)")));
        }
        Ok(a)
    }

    /// `α'` from the equation itself.
    pub fn alpha_prime(&self, r: f64) -> f64 {
        let nf = self.n as f64;
        let a = self.alpha_unchecked(r);
        let ar2 = self.a_pad * r * r;
        (-(nf - 4.0) / 4.0 * (2.0 * a - a * a - ar2 * a) + ar2 * a) / r
    }

    /// Residual of the equation with `α'` from a five-point central difference.
    pub fn residual(&self, r: f64) -> f64 {
        let nf = self.n as f64;
        let h = 1e-3 * r;
        let f = |x: f64| self.alpha_unchecked(x);
        let da = (-f(r + 2.0 * h) + 8.0 * f(r + h) - 8.0 * f(r - h) + f(r - 2.0 * h)) / (12.0 * h);
        let a = f(r);
        let ar2 = self.a_pad * r * r;
        (nf - 4.0) / 4.0 + (r * da - ar2 * a) / (2.0 * a - a * a - ar2 * a)
    }
}

fn gl_cached() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    GL.get_or_init(|| gauss_legendre(GL_ORDER))
}

pub fn bernoulli_alpha(r: f64, a1: f64, a_pad: f64, n: usize) -> Result<f64> {
    BernoulliProfile::new(n, a_pad, a1)?.alpha(r)
}

/// Padding constant A with `S(g̃) ≥ (2α − α² − Ar²α)/(2r²)·I + (radial part)` on the
/// gluing annulus, where `α > γ`: the model perturbs the flat Schouten tensor by
/// `S_{g₁}` and by tangential offsets of size `α·√(|ΔR(0)|/(n(n+2)m))`, m the number
/// of offset slots. Includes a 25% safety factor and a floor of 0.05, which keeps the
/// flat annulus strictly admissible.
pub fn padding_constant(bg: &BackgroundGeometry, r_max: f64, gamma: f64) -> f64 {
    let (s_r, s_t) = bg.background_schouten(r_max);
    let s_max = s_r.abs().max(s_t.abs());
    let m = if (bg.dim() - 1) % 2 == 0 { bg.dim() - 1 } else { bg.dim() - 2 } as f64;
    // hessian_anisotropy_sq(r, u') with r u' = 1 gives |ΔR(0)|/(n(n+2)).
    let aniso = bg.hessian_anisotropy_sq(1.0, 1.0);
    let raw = 2.0 * ((aniso / m).sqrt() + s_max / gamma);
    (1.25 * raw).max(0.05)
}

/// Per-node admissibility summary from radial Schouten data.
fn cone_report(ws: &RadialSchouten) -> ConeReport {
    let s1 = ws.sigma1();
    let s2 = ws.sigma2();
    ConeReport { k: 2, sigmas: vec![s1, s2], in_cone: s1 > 0.0 && s2 > 0.0 }
}

/// Schouten data for a radial exponent with `u' = du`, `u'' = d2u`.
fn radial_schouten(bg: &BackgroundGeometry, r: f64, du: f64, d2u: f64) -> RadialSchouten {
    bg.pointwise_schouten(r, du, d2u, du / r)
}

/// Bernoulli gluing annulus `[δ, δ₁]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GluingProfile {
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub delta1: f64,
    pub a1: f64,
    pub a_pad: f64,
    /// `u(δ) − log(λ + δ²)` with `u = γ log r` at δ₁.
    pub b0: f64,
    /// Constant of `u = 4/(4−n)·log(r^{(4−n)/2} + 2a₁) + a₂`, matched at δ₁.
    pub a2: f64,
    pub bernoulli: BernoulliProfile,
    pub samples_r: Vec<f64>,
    pub samples_alpha: Vec<f64>,
    pub max_residual: f64,
    /// `δ₁^{(n−4)/2} λ / δ^{n/2}`, tending to `2/γ − 1`.
    pub matching_ratio: f64,
    /// `∫σ₂ dvol(g̃)` over the annulus.
    pub energy: f64,
    /// `vol(annulus, g̃)`.
    pub volume: f64,
    /// `energy / (δ^{4+n(1−γ)} λ^{−3+2γ})`.
    pub energy_constant: f64,
    /// `volume / (δ^{(n+4−nγ)/(2(2−γ))}/λ)^{2n(2−γ)/(n−4)}`.
    pub volume_constant: f64,
    /// Smallest `σ₂/σ₁²` of the model Schouten tensor on the annulus.
    pub min_cone_ratio: f64,
}

impl GluingProfile {
    pub fn alpha(&self, r: f64) -> f64 {
        self.bernoulli.alpha_unchecked(r)
    }
}

/// Integral of `f` over `[a, b]` with one Gauss–Legendre panel.
fn gl_panel(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (gx, gw) = gl_cached();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gx.iter().zip(gw).map(|(x, w)| half * w * f(mid + half * x)).sum()
}

pub fn glue_annulus(bp: &BubbleParams, gamma: f64) -> Result<GluingProfile> {
    const STAGE: &str = "gluing";
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(Error::domain(format!("gamma = {gamma} outside (1, 2)")));
    }
    let bg = bp.background();
    let n = bp.n;
    let nf = n as f64;
    let lam = bp.lambda;
    let delta = bp.delta();
    let a_pad = padding_constant(&bg, bp.r0, gamma);
    let bern = BernoulliProfile::matched(n, a_pad, lam, delta)?;

    // δ₁: α(δ₁) = γ, α decreasing from ≈ 2 at δ.
    let upper = 1.0_f64.min(bp.r0);
    let mut hi = delta;
    while bern.alpha_unchecked(hi) > gamma {
        hi *= 1.05;
        if hi >= upper {
            return Err(Error::stage(STAGE, format!("alpha stays above gamma up to r = {upper}: delta1 >= {upper}")));
        }
    }
    let mut lo = hi / 1.05;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bern.alpha_unchecked(mid) > gamma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let delta1 = 0.5 * (lo + hi);

    // Panels in log r across the annulus.
    let breaks = geometric_breaks(delta, delta1, 1.1);
    let rule = CompositeRule::new(&breaks, GL_ORDER);
    // u = γ log δ₁ − ∫_r^{δ₁} α/t dt at each node, by nested panels.
    let mut w_break = vec![0.0; breaks.len()];
    *w_break.last_mut().unwrap() = gamma * delta1.ln();
    for k in (0..breaks.len() - 1).rev() {
        w_break[k] = w_break[k + 1] - gl_panel(breaks[k], breaks[k + 1], |t| bern.alpha_unchecked(t) / t);
    }
    let omega = sphere_area(n - 1);
    let per_node: Vec<(f64, f64, f64, f64)> = rule
        .nodes
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let panel = i / GL_ORDER;
            let a0 = breaks[panel];
            let u = w_break[panel] + gl_panel(a0, r, |t| bern.alpha_unchecked(t) / t);
            let alpha = bern.alpha_unchecked(r);
            let da = bern.alpha_prime(r);
            let ws = radial_schouten(&bg, r, alpha / r, da / r - alpha / (r * r));
            let jac = omega * r.powi(n as i32 - 1);
            let energy = jac * ((4.0 - nf) * u).exp() * ws.sigma2();
            let vol = jac * (-nf * u).exp();
            let s1 = ws.sigma1();
            let ratio = if s1 > 0.0 { ws.sigma2() / (s1 * s1) } else { f64::NEG_INFINITY };
            (energy, vol, ratio, u)
        })
        .collect();

    // Padding: every eigenvalue of S(g̃) − M_lo must be ≥ 0, with M_lo the padded matrix.
    for &r in &rule.nodes {
        let alpha = bern.alpha_unchecked(r);
        let ws = radial_schouten(&bg, r, alpha / r, bern.alpha_prime(r) / r - alpha / (r * r));
        let (s_r, s_t) = bg.background_schouten(r);
        let kmax = ws.tangential_offsets().iter().fold(0.0f64, |m, k| m.max(k.abs()));
        let pad = a_pad * alpha / 2.0;
        if s_r + pad < 0.0 || s_t - kmax + pad < 0.0 {
            return Err(Error::stage(
                STAGE,
                format!("padding constant A = {a_pad} does not bound the model at r = {r}"),
            ));
        }
    }

    let mut samples_r = Vec::with_capacity(201);
    let mut samples_alpha = Vec::with_capacity(201);
    let mut max_residual = 0.0f64;
    for k in 0..=200 {
        let r = delta * (delta1 / delta).powf(k as f64 / 200.0);
        let a = bern.alpha_unchecked(r);
        samples_r.push(r);
        samples_alpha.push(a);
        max_residual = max_residual.max(bern.residual(r).abs());
        let interior = k > 0 && k < 200;
        if interior && !(a > gamma && a < 2.0) {
            return Err(Error::stage(STAGE, format!("alpha({r}) = {a} outside (gamma, 2)")));
        }
    }
    if !(max_residual < 1e-8) {
        return Err(Error::stage(STAGE, format!("Bernoulli residual {max_residual:e} >= 1e-8")));
    }
    let min_cone_ratio = per_node.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    if !(min_cone_ratio > 0.0) {
        let i = per_node.iter().position(|p| !(p.2 > 0.0)).unwrap_or(0);
        return Err(Error::stage(STAGE, format!("annulus node r = {} outside Gamma_2^+", rule.nodes[i])));
    }

    let energy = compensated_sum(per_node.iter().zip(&rule.weights).map(|(p, w)| w * p.0));
    let volume = compensated_sum(per_node.iter().zip(&rule.weights).map(|(p, w)| w * p.1));
    let u_delta = w_break[0];
    let b0 = u_delta - (lam + delta * delta).ln();
    let a2 = gamma * delta1.ln() - 4.0 / (4.0 - nf) * (delta1.powf((4.0 - nf) / 2.0) + 2.0 * bern.a1).ln();
    let energy_scale = delta.powf(4.0 + nf * (1.0 - gamma)) * lam.powf(-3.0 + 2.0 * gamma);
    let volume_scale =
        (delta.powf((nf + 4.0 - nf * gamma) / (2.0 * (2.0 - gamma))) / lam).powf(2.0 * nf * (2.0 - gamma) / (nf - 4.0));
    Ok(GluingProfile {
        n,
        lambda: lam,
        gamma,
        delta,
        delta1,
        a1: bern.a1,
        a_pad,
        b0,
        a2,
        bernoulli: bern,
        samples_r,
        samples_alpha,
        max_residual,
        matching_ratio: delta1.powf((nf - 4.0) / 2.0) * lam / delta.powf(nf / 2.0),
        energy,
        volume,
        energy_constant: energy / energy_scale,
        volume_constant: volume / volume_scale,
        min_cone_ratio,
    })
}

/// Radii of the transition annulus, `r₂ < r₈ < r₇ < r₆ < r₅ < r₄ < r₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionRadii {
    pub r0: f64,
    pub r4: f64,
    pub r5: f64,
    pub r6: f64,
    pub r7: f64,
    pub r8: f64,
    pub r2: f64,
}

impl TransitionRadii {
    /// Default layout on a patch of radius `r0`. The bridge needs `r₄/r₅` near 4 to bring
    /// α from γ down to 0 without leaving Γ₂⁺, so the tube must end below `r₀/5`.
    pub fn for_patch(r0: f64) -> Self {
        Self { r0, r4: 0.9 * r0, r5: 0.23 * r0, r6: 0.21 * r0, r7: 0.2 * r0, r8: 0.15 * r0, r2: 0.14 * r0 }
    }

    pub fn validate(&self) -> Result<()> {
        let chain = [self.r2, self.r8, self.r7, self.r6, self.r5, self.r4, self.r0];
        if !(chain[0] > 0.0 && chain.windows(2).all(|p| p[0] < p[1]) && self.r0.is_finite()) {
            return Err(Error::domain(format!(
                "radii must satisfy 0 < r2 < r8 < r7 < r6 < r5 < r4 < r0, got {chain:?}"
            )));
        }
        Ok(())
    }
}

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³` clamped to [0, 1], with two derivatives.
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let d2s = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        (s, ds, d2s)
    }
}

/// Background exponent `u₀ = log(1 + μr²)` (g₀ is a round sphere of curvature 4μ) with
/// two derivatives.
fn background_exponent(mu: f64, r: f64) -> (f64, f64, f64) {
    let q = 1.0 + mu * r * r;
    ((mu * r * r).ln_1p(), 2.0 * mu * r / q, 2.0 * mu * (1.0 - mu * r * r) / (q * q))
}

/// `(α, α')` of `(2−5ε)δ'/(δ' + r^{1/2−5ε/4})`.
fn transition_slope(eps: f64, delta: f64, r: f64) -> (f64, f64) {
    let k = 2.0 - 5.0 * eps;
    let q = 0.5 - 1.25 * eps;
    let rq = r.powf(q);
    let a = k * delta / (delta + rq);
    (a, -k * delta * q * rq / (r * (delta + rq) * (delta + rq)))
}

/// Log-width over which the bridge rate switches on past r₅.
const BRIDGE_ONSET: f64 = 0.1;
/// α scale below which the bridge rate tapers like `α^{2/3}`.
const BRIDGE_TAPER: f64 = 0.05;
const BRIDGE_MAX_THETA: f64 = 0.8;
const BRIDGE_STEP: f64 = 1e-3;

/// Slope α on `[r₆, ∞)`: the transition profile up to r₅, then the solution of
/// `rα' = (1−χ)·T(α) − χ·θ·[(n−4)/2·β(1−β/2) + rβ₀']·(α/(α+a_c))^{2/3}`,
/// where T is the transition rate, `β = α + β₀` the total log-slope with the background
/// `β₀ = r u₀'`, and χ a smoothstep in `log r`. For flat g₁ the bracket is the largest
/// decay rate of β keeping Γ₂⁺, so θ < 1 is the margin. The `α^{2/3}` taper makes α
/// vanish like a cube at a finite radius, tuned by θ to equal r₄. The equation is
/// integrated for `z = α^{1/3}`, which stays smooth through that radius.
#[derive(Debug, Clone, PartialEq)]
struct Bridge {
    dim: f64,
    eps: f64,
    delta: f64,
    mu: f64,
    theta: f64,
    s5: f64,
    /// z on the grid `s₅ + k·BRIDGE_STEP`; only the last entry is ≤ 0.
    z: Vec<f64>,
    /// `log` of the radius where α reaches 0.
    s_end: f64,
}

#[derive(Clone, Copy)]
struct BridgeRate {
    dim: f64,
    eps: f64,
    mu: f64,
    s5: f64,
    theta: f64,
}

impl BridgeRate {
    /// `dz/d(log r)`.
    fn dz(&self, s: f64, z: f64) -> f64 {
        let (chi, _, _) = smoothstep((s - self.s5) / BRIDGE_ONSET);
        let a = z * z * z;
        let own = if chi < 1.0 {
            // T(α)/(3z²) with the factor α divided out.
            let t_over_a = -0.25 * (2.0 - a - self.eps) + self.eps;
            (1.0 - chi) * t_over_a * z / 3.0
        } else {
            0.0
        };
        if chi == 0.0 {
            return own;
        }
        let x = self.mu * (2.0 * s).exp();
        let b0 = 2.0 * x / (1.0 + x);
        let rb0 = 4.0 * x / ((1.0 + x) * (1.0 + x));
        let b = a + b0;
        let bracket = (self.dim - 4.0) / 2.0 * b * (1.0 - b / 2.0) + rb0;
        own - chi * self.theta * bracket / (3.0 * (a.max(0.0) + BRIDGE_TAPER).powf(2.0 / 3.0))
    }
}

impl Bridge {
    fn rate(&self) -> BridgeRate {
        BridgeRate { dim: self.dim, eps: self.eps, mu: self.mu, s5: self.s5, theta: self.theta }
    }

    /// RK4 in `s = log r` from r₅ until z ≤ 0 or `s_max`; returns the grid and the
    /// extinction point (infinite if not reached).
    fn integrate(rate: BridgeRate, z0: f64, s_max: f64) -> (Vec<f64>, f64) {
        let h = BRIDGE_STEP;
        let mut z = z0;
        let mut s = rate.s5;
        let mut grid = vec![z];
        while s < s_max {
            let k1 = rate.dz(s, z);
            let k2 = rate.dz(s + 0.5 * h, z + 0.5 * h * k1);
            let k3 = rate.dz(s + 0.5 * h, z + 0.5 * h * k2);
            let k4 = rate.dz(s + h, z + h * k3);
            let next = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            grid.push(next);
            if next <= 0.0 {
                let end = hermite_root(s, h, z, next, k1, rate.dz(s + h, next));
                return (grid, end);
            }
            z = next;
            s += h;
        }
        (grid, f64::INFINITY)
    }

    fn build(dim: f64, eps: f64, delta: f64, mu: f64, r5: f64, r4: f64) -> Result<Self> {
        let target = r4.ln();
        let s_max = target + 0.5;
        let s5 = r5.ln();
        let z0 = transition_slope(eps, delta, r5).0.cbrt();
        let rate = |theta: f64| BridgeRate { dim, eps, mu, s5, theta };
        let (_, reach) = Self::integrate(rate(BRIDGE_MAX_THETA), z0, s_max);
        if reach > target {
            return Err(Error::stage(
                "transition",
                format!(
                    "bridge cannot bring alpha to 0 by r4 = {r4} (reaches 0 at r = {:.6}); widen [r5, r4]",
                    reach.exp()
                ),
            ));
        }
        let (mut lo, mut hi) = (1e-3, BRIDGE_MAX_THETA);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if Self::integrate(rate(mid), z0, s_max).1 > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        let (z, s_end) = Self::integrate(rate(hi), z0, s_max);
        Ok(Self { dim, eps, delta, mu, theta: hi, s5, z, s_end })
    }

    /// `(α, α')` at r; the closed-form transition profile below r₅.
    fn eval(&self, r: f64) -> (f64, f64) {
        let s = r.ln();
        if s <= self.s5 {
            return transition_slope(self.eps, self.delta, r);
        }
        if s >= self.s_end {
            return (0.0, 0.0);
        }
        let rate = self.rate();
        let h = BRIDGE_STEP;
        let k = (((s - self.s5) / h).floor() as usize).min(self.z.len() - 2);
        let sk = self.s5 + k as f64 * h;
        let (z0, z1) = (self.z[k], self.z[k + 1]);
        let (m0, m1) = (rate.dz(sk, z0), rate.dz(sk + h, z1));
        let z = hermite(s, sk, h, z0, z1, m0, m1).max(0.0);
        (z * z * z, 3.0 * z * z * rate.dz(s, z) / r)
    }
}

/// Cubic Hermite interpolant on `[s0, s0 + h]`.
fn hermite(s: f64, s0: f64, h: f64, y0: f64, y1: f64, m0: f64, m1: f64) -> f64 {
    let t = (s - s0) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * m1
}

/// Root of the Hermite interpolant on a step where it changes sign from `y0 > 0` to `y1 ≤ 0`.
fn hermite_root(s0: f64, h: f64, y0: f64, y1: f64, m0: f64, m1: f64) -> f64 {
    let (mut lo, mut hi) = (s0, s0 + h);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if hermite(mid, s0, h, y0, y1, m0, m1) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Log-slope pieces, each extendable past its nominal interval.
#[derive(Debug, Clone, PartialEq)]
enum Slope {
    Bubble { lambda: f64 },
    Bernoulli(BernoulliProfile),
    Constant(f64),
    Transition(Arc<Bridge>),
}

impl Slope {
    /// `(α, α')` at r.
    fn eval(&self, r: f64) -> (f64, f64) {
        match self {
            Slope::Bubble { lambda } => {
                let v = lambda + r * r;
                (2.0 * r * r / v, 4.0 * r * lambda / (v * v))
            }
            Slope::Bernoulli(b) => (b.alpha_unchecked(r), b.alpha_prime(r)),
            Slope::Constant(g) => (*g, 0.0),
            Slope::Transition(b) => b.eval(r),
        }
    }
}

/// Piecewise log-slope, mollified across junctions, plus the ξ-cutoff of `u₀`.
#[derive(Debug, Clone, PartialEq)]
struct SlopeProfile {
    /// Pieces with their upper junction radius.
    segments: Vec<(Slope, f64)>,
    /// Mollifier half-width in `log r` at the junction after segment i.
    blends: Vec<f64>,
    mu: f64,
    /// `u₀` offset so that `ξ(u₀ − c)` stays small across the cutoff window.
    u0_offset: f64,
    r8: f64,
    r7: f64,
}

/// Log half-width of a mollifier spanning `[x − w, x + w]` at least on the left.
fn log_half_width(x: f64, w: f64) -> f64 {
    -(1.0 - w / x).ln()
}

impl SlopeProfile {
    fn raw(&self, r: f64) -> (f64, f64) {
        let seg = self.segments.iter().find(|s| r <= s.1).unwrap_or_else(|| self.segments.last().unwrap());
        seg.0.eval(r)
    }

    /// `(α, α')`. Within `hw` of a junction (in `log r`) α is convolved in `log r` with
    /// the kernel `(35/32)(1 − t²)³`; the condition `rα' > f(α)` for Γ₂⁺ is linear in
    /// `rα'` and f is convex, so the average of admissible slopes stays admissible.
    fn slope(&self, r: f64) -> (f64, f64) {
        let s = r.ln();
        for (i, &hw) in self.blends.iter().enumerate() {
            let sj = self.segments[i].1.ln();
            if (s - sj).abs() < hw {
                let (gx, gw) = gl_cached();
                let (left, right) = (&self.segments[i].0, &self.segments[i + 1].0);
                // Kernel variable t ∈ [−1, 1], split where s − hw·t crosses the junction.
                let split = ((s - sj) / hw).clamp(-1.0, 1.0);
                let (mut a, mut da) = (0.0, 0.0);
                for (lo, hi) in [(-1.0, split), (split, 1.0)] {
                    let half = 0.5 * (hi - lo);
                    if half <= 0.0 {
                        continue;
                    }
                    for (x, w) in gx.iter().zip(gw) {
                        let t: f64 = 0.5 * (lo + hi) + half * x;
                        let k = 35.0 / 32.0 * (1.0 - t * t).powi(3);
                        let rt = (s - hw * t).exp();
                        // t > split is left of the junction.
                        let (av, dav) = if t > split { left.eval(rt) } else { right.eval(rt) };
                        a += half * w * k * av;
                        da += half * w * k * rt * dav;
                    }
                }
                return (a, da / r);
            }
        }
        self.raw(r)
    }

    /// `ξ(u₀ − c)` and its first two derivatives.
    fn cutoff_term(&self, r: f64) -> (f64, f64, f64) {
        let width = self.r7 - self.r8;
        let (xi, dxi, d2xi) = smoothstep((r - self.r8) / width);
        if xi == 0.0 && dxi == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let (u0, du0, d2u0) = background_exponent(self.mu, r);
        let v = u0 - self.u0_offset;
        let dxi = dxi / width;
        let d2xi = d2xi / (width * width);
        (xi * v, dxi * v + xi * du0, d2xi * v + 2.0 * dxi * du0 + xi * d2u0)
    }

    /// `(u', u'')` of `w + ξ(u₀ − c)` with `w' = α/r`.
    fn derivatives(&self, r: f64) -> (f64, f64) {
        let (a, da) = self.slope(r);
        let (_, dc, d2c) = self.cutoff_term(r);
        (a / r + dc, da / r - a / (r * r) + d2c)
    }

    /// Radii where the profile or one of its derivatives changes form.
    fn features(&self) -> Vec<f64> {
        let mut f = Vec::new();
        for (i, &hw) in self.blends.iter().enumerate() {
            let x = self.segments[i].1;
            f.push(x * (-hw).exp());
            f.push(x);
            f.push(x * hw.exp());
        }
        for (slope, _) in &self.segments {
            if let Slope::Transition(b) = slope {
                f.push(b.s5.exp());
                f.push((b.s5 + BRIDGE_ONSET).exp());
                f.push(b.s_end.exp());
            }
        }
        f.push(self.r8);
        f.push(self.r7);
        f
    }
}

/// Transition from the γ-tube to the background exponent `u₀`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionProfile {
    pub gamma: f64,
    pub eps_margin: f64,
    pub mu: f64,
    /// Radii after any shrinking of the cutoff window.
    pub radii: TransitionRadii,
    /// δ' of the transition profile, fixed by `α(r₆) = γ`.
    pub delta_t: f64,
    pub alpha_r5: f64,
    /// Fraction θ of the largest admissible decay rate used by the bridge.
    pub bridge_theta: f64,
    pub u0_offset: f64,
    /// Largest residual of `¼(2α − α² − εα) = −rα' + εα` on `[r₆, r₅]`.
    pub max_transition_residual: f64,
    /// Smallest `σ₂/σ₁²` on `[r₂, r₀]`.
    pub min_cone_ratio: f64,
    /// Smallest `σ₂/σ₁²` on the cutoff window `[r₈, r₇]`.
    pub window_cone_ratio: f64,
    /// `σ₂/σ₁²` of the pure tube at r₂.
    pub tube_cone_ratio: f64,
    pub window_shrinks: usize,
    #[serde(skip)]
    bridge: Arc<Bridge>,
}

impl TransitionProfile {
    /// α on `[r₆, ∞)`.
    pub fn alpha_transition(&self, r: f64) -> f64 {
        self.bridge.eval(r).0
    }

    /// Residual of the transition equation for the closed-form profile at r, α' by
    /// central differences.
    pub fn transition_residual(&self, r: f64) -> f64 {
        let h = 1e-3 * r;
        let f = |x: f64| transition_slope(self.eps_margin, self.delta_t, x).0;
        let da = (-f(r + 2.0 * h) + 8.0 * f(r + h) - 8.0 * f(r - h) + f(r - 2.0 * h)) / (12.0 * h);
        let a = f(r);
        let e = self.eps_margin;
        0.25 * (2.0 * a - a * a - e * a) - (-r * da + e * a)
    }

    fn segments(&self) -> (Vec<(Slope, f64)>, f64) {
        let r = &self.radii;
        let w6 = 0.1 * (r.r6 - r.r7).min(r.r5 - r.r6);
        let segs = vec![(Slope::Constant(self.gamma), r.r6), (Slope::Transition(self.bridge.clone()), f64::INFINITY)];
        (segs, w6)
    }
}

/// Geometric sampling of `[lo, hi]` including every interior feature.
fn sample_with_features(lo: f64, hi: f64, features: &[f64], ratio: f64) -> (Vec<f64>, Vec<f64>) {
    let mut breaks = vec![lo, hi];
    breaks.extend(features.iter().copied().filter(|&x| x > lo && x < hi));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut fine = Vec::new();
    for p in breaks.windows(2) {
        let b = geometric_breaks(p[0], p[1], ratio);
        fine.extend_from_slice(&b[..b.len() - 1]);
    }
    fine.push(hi);
    (breaks, fine)
}

fn cone_ratio(ws: &RadialSchouten) -> f64 {
    let s1 = ws.sigma1();
    if s1 > 0.0 {
        ws.sigma2() / (s1 * s1)
    } else {
        f64::NEG_INFINITY
    }
}

pub fn build_transition(
    bg: &BackgroundGeometry,
    gamma: f64,
    eps_margin: f64,
    radii: &TransitionRadii,
    mu: f64,
) -> Result<TransitionProfile> {
    const STAGE: &str = "transition";
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::domain(format!("gamma = {gamma} outside (0, 2)")));
    }
    if !(eps_margin > 0.0 && eps_margin < (2.0 - gamma) / 5.0) {
        return Err(Error::domain(format!("epsilon margin {eps_margin} outside (0, (2 - gamma)/5)")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("background curvature parameter mu = {mu} must be positive")));
    }
    radii.validate()?;
    let q = 0.5 - 1.25 * eps_margin;
    let delta_t = gamma * radii.r6.powf(q) / (2.0 - 5.0 * eps_margin - gamma);
    let bridge = Arc::new(Bridge::build(bg.dim() as f64, eps_margin, delta_t, mu, radii.r5, radii.r4)?);
    let mut radii = *radii;

    let tube_cone_ratio = cone_ratio(&radial_schouten(bg, radii.r2, gamma / radii.r2, -gamma / (radii.r2 * radii.r2)));
    let mut shrinks = 0;
    loop {
        let center = 0.5 * (radii.r8 + radii.r7);
        let mut tp = TransitionProfile {
            gamma,
            eps_margin,
            mu,
            radii,
            delta_t,
            alpha_r5: transition_slope(eps_margin, delta_t, radii.r5).0,
            bridge_theta: bridge.theta,
            u0_offset: background_exponent(mu, center).0,
            max_transition_residual: 0.0,
            min_cone_ratio: 0.0,
            window_cone_ratio: 0.0,
            tube_cone_ratio,
            window_shrinks: shrinks,
            bridge: bridge.clone(),
        };
        let (segments, w6) = tp.segments();
        let profile = SlopeProfile {
            segments,
            blends: vec![log_half_width(radii.r6, w6)],
            mu,
            u0_offset: tp.u0_offset,
            r8: radii.r8,
            r7: radii.r7,
        };
        let (_, nodes) = sample_with_features(radii.r2, radii.r0, &profile.features(), 1.005);
        let ratios: Vec<f64> = nodes
            .par_iter()
            .map(|&r| {
                let (du, d2u) = profile.derivatives(r);
                cone_ratio(&radial_schouten(bg, r, du, d2u))
            })
            .collect();
        let (worst_i, worst) =
            ratios.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let window_min = nodes
            .iter()
            .zip(&ratios)
            .filter(|(r, _)| **r >= radii.r8 && **r <= radii.r7)
            .map(|p| *p.1)
            .fold(f64::INFINITY, f64::min);
        if worst > 0.0 && window_min >= 0.1 * tube_cone_ratio {
            tp.min_cone_ratio = worst;
            tp.window_cone_ratio = window_min;
            tp.max_transition_residual = (0..=100)
                .map(|k| tp.transition_residual(radii.r6 + (radii.r5 - radii.r6) * k as f64 / 100.0).abs())
                .fold(0.0, f64::max);
            return Ok(tp);
        }
        // Pull the cutoff window toward r₂, where r²S(e^{−2ξu₀}g₁) is smaller.
        shrinks += 1;
        if shrinks > 10 {
            return Err(Error::stage(
                STAGE,
                format!("no admissible cutoff window; sigma2/sigma1^2 = {worst:e} at r = {}", nodes[worst_i]),
            ));
        }
        radii.r8 = radii.r2 + 0.9 * (radii.r8 - radii.r2);
        radii.r7 = radii.r2 + 0.9 * (radii.r7 - radii.r2);
    }
}

/// Construction knobs besides the bubble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstructionConfig {
    pub gamma: f64,
    pub eps_margin: f64,
    /// Curvature parameter of `u₀ = log(1 + μr²)`; defaults to `0.1/r₆²`.
    pub mu: Option<f64>,
    /// Defaults to [`TransitionRadii::for_patch`].
    pub radii: Option<TransitionRadii>,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self { gamma: 1.5, eps_margin: 0.05, mu: None, radii: None }
    }
}

impl ConstructionConfig {
    /// Radii and μ with defaults filled in for a patch of radius `r0`.
    pub fn resolve(&self, r0: f64) -> (TransitionRadii, f64) {
        let radii = self.radii.unwrap_or_else(|| TransitionRadii::for_patch(r0));
        let mu = self.mu.unwrap_or(0.1 / (radii.r6 * radii.r6));
        (radii, mu)
    }
}

/// Assembled test metric and its comparison with `Y₂(Sⁿ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembledMetric {
    pub params: BubbleParams,
    /// Configuration with defaults resolved and the final cutoff window.
    pub config: ConstructionConfig,
    pub gluing: GluingProfile,
    pub transition: TransitionProfile,
    /// Quadrature nodes on `(0, r₀)`.
    pub nodes: Vec<f64>,
    pub u: Vec<f64>,
    pub cone: Vec<ConeReport>,
    pub gamma2_ok: bool,
    pub first_violation: Option<f64>,
    /// Blend half-width at δ and δ₁.
    pub smoothing_width: f64,
    pub b1: f64,
    pub f2_bubble: f64,
    pub f2_gluing: f64,
    pub f2_transition: f64,
    pub f2_outer: f64,
    pub volume_patch: f64,
    pub volume_outer: f64,
    pub f2_tilde: f64,
    pub y2_sphere: f64,
    /// `Y₂(Sⁿ) − F̃₂(g̃)`.
    pub margin: f64,
    /// `(F̃₂ − Y₂(Sⁿ))/λ²`.
    pub lambda2_slope: f64,
    /// `B^{(4−n)/n}·C·ΔR(0)`.
    pub predicted_lambda2_slope: f64,
    pub beta_in_proof_range: bool,
}

/// `∫_{|x|>r₀} (1+μ|x|²)^{−n} dx`.
fn outer_volume_unit(n: usize, mu: f64, r0: f64) -> f64 {
    let phi0 = (mu.sqrt() * r0).atan();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let breaks: Vec<f64> = (0..=16).map(|k| phi0 + (half_pi - phi0) * k as f64 / 16.0).collect();
    let k = n as i32 - 1;
    let integral = CompositeRule::new(&breaks, 24).integrate(|p| (p.sin() * p.cos()).powi(k));
    sphere_area(n - 1) * mu.powf(-(n as f64) / 2.0) * integral
}

pub fn assemble_and_compare(bp: &BubbleParams, cfg: &ConstructionConfig) -> Result<AssembledMetric> {
    const STAGE: &str = "assemble";
    let (radii, mu) = cfg.resolve(bp.r0);
    if (radii.r0 - bp.r0).abs() > 1e-14 * bp.r0 {
        return Err(Error::domain(format!("transition r0 = {} differs from patch r0 = {}", radii.r0, bp.r0)));
    }
    let bg = bp.background();
    let gluing = glue_annulus(bp, cfg.gamma).map_err(|e| e.in_stage(STAGE))?;
    let transition = build_transition(&bg, cfg.gamma, cfg.eps_margin, &radii, mu).map_err(|e| e.in_stage(STAGE))?;
    let radii = transition.radii;
    let (delta, delta1) = (gluing.delta, gluing.delta1);
    let w1 = (delta / 10.0).min((delta1 - delta) / 10.0);
    if !(delta1 / (1.0 - w1 / delta1) < radii.r2) {
        return Err(Error::stage(STAGE, format!("delta1 = {delta1} not below r2 = {} (lambda too large)", radii.r2)));
    }
    let n = bp.n;
    let nf = n as f64;
    let lam = bp.lambda;

    let (tail, w6) = transition.segments();
    let mut segments = vec![(Slope::Bubble { lambda: lam }, delta), (Slope::Bernoulli(gluing.bernoulli), delta1)];
    segments.extend(tail);
    let profile = SlopeProfile {
        segments,
        blends: vec![log_half_width(delta, w1), log_half_width(delta1, w1), log_half_width(radii.r6, w6)],
        mu,
        u0_offset: transition.u0_offset,
        r8: radii.r8,
        r7: radii.r7,
    };

    // Analytic bubble core, then geometric panels between features.
    let core = lam.sqrt() / 64.0;
    let mut feats = vec![radii.r2];
    feats.extend(profile.features());
    let (_, mut breaks) = sample_with_features(core, radii.r0, &feats, 1.15);
    breaks.insert(0, 0.0);
    let rule = CompositeRule::new(&breaks, GL_ORDER);

    // w at breakpoints, normalized by w = γ log r at r₂ (inside the tube).
    let slope_over_r = |t: f64| profile.slope(t).0 / t;
    let ref_idx = breaks.iter().position(|&b| b == radii.r2).expect("r2 is a breakpoint");
    let mut w_break = vec![0.0; breaks.len()];
    w_break[ref_idx] = cfg.gamma * radii.r2.ln();
    for k in (0..ref_idx).rev() {
        let (a, b) = (breaks[k], breaks[k + 1]);
        w_break[k] = if a == 0.0 {
            // Pure bubble: w = log(λ + r²) + const.
            w_break[k + 1] - (lam + b * b).ln() + lam.ln()
        } else {
            w_break[k + 1] - gl_panel(a, b, slope_over_r)
        };
    }
    for k in ref_idx..breaks.len() - 1 {
        w_break[k + 1] = w_break[k] + gl_panel(breaks[k], breaks[k + 1], slope_over_r);
    }
    let b1 = *w_break.last().unwrap();

    let omega = sphere_area(n - 1);
    // (u, σ₂ density, volume density, cone report) per quadrature node.
    type NodeSample = (f64, f64, f64, ConeReport);
    let per_node: Vec<NodeSample> = rule
        .nodes
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let panel = i / GL_ORDER;
            let a0 = breaks[panel];
            let w = if a0 == 0.0 {
                w_break[panel] + (lam + r * r).ln() - lam.ln()
            } else {
                w_break[panel] + gl_panel(a0, r, slope_over_r)
            };
            let u = w + profile.cutoff_term(r).0;
            let (du, d2u) = profile.derivatives(r);
            let ws = radial_schouten(&bg, r, du, d2u);
            let jac = omega * r.powi(n as i32 - 1);
            (u, jac * ((4.0 - nf) * u).exp() * ws.sigma2(), jac * (-nf * u).exp(), cone_report(&ws))
        })
        .collect();

    let weighted = |keep: &dyn Fn(f64) -> bool, pick: &dyn Fn(&NodeSample) -> f64| {
        compensated_sum(
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .zip(&per_node)
                .filter(|((r, _), _)| keep(**r))
                .map(|((_, w), p)| w * pick(p)),
        )
    };
    let f2_bubble = weighted(&|r| r < delta, &|p| p.1);
    let f2_gluing = weighted(&|r| r >= delta && r < delta1, &|p| p.1);
    let f2_transition = weighted(&|r| r >= delta1, &|p| p.1);
    let volume_patch = weighted(&|_| true, &|p| p.2);

    // Outside the patch g̃ = e^{−2(b₁−c)} g₀ with g₀ = (1+μr²)^{−2}δ.
    let shift = b1 - transition.u0_offset;
    let vol_unit = outer_volume_unit(n, mu, radii.r0);
    let f2_outer = ((4.0 - nf) * shift).exp() * 2.0 * nf * (nf - 1.0) * mu * mu * vol_unit;
    let volume_outer = (-nf * shift).exp() * vol_unit;

    let f2_total = f2_bubble + f2_gluing + f2_transition + f2_outer;
    let volume = volume_patch + volume_outer;
    let f2_tilde = f2_total / volume.powf((nf - 4.0) / nf);
    if !f2_tilde.is_finite() {
        return Err(Error::Numeric(format!("assembled functional not finite: {f2_tilde}")));
    }
    let consts = sphere_constants(n)?;
    let c = consts.c.expect("n >= 9");
    let first_violation = per_node.iter().zip(&rule.nodes).find(|(p, _)| !p.3.in_cone).map(|(_, &r)| r);
    let (u, cone): (Vec<f64>, Vec<ConeReport>) = per_node.into_iter().map(|p| (p.0, p.3)).unzip();
    Ok(AssembledMetric {
        params: *bp,
        config: ConstructionConfig { mu: Some(mu), radii: Some(radii), ..*cfg },
        gluing,
        transition,
        nodes: rule.nodes,
        u,
        cone,
        gamma2_ok: first_violation.is_none(),
        first_violation,
        smoothing_width: w1,
        b1,
        f2_bubble,
        f2_gluing,
        f2_transition,
        f2_outer,
        volume_patch,
        volume_outer,
        f2_tilde,
        y2_sphere: consts.y2_sphere,
        margin: consts.y2_sphere - f2_tilde,
        lambda2_slope: (f2_tilde - consts.y2_sphere) / (lam * lam),
        predicted_lambda2_slope: consts.b.powf((4.0 - nf) / nf) * c * bp.laplacian_r,
        beta_in_proof_range: bp.beta_in_proof_range(),
    })
}

/// λ² coefficient of `F̃₂(λ) − Y₂(Sⁿ)` fitted across constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lambda2Fit {
    pub slope: f64,
    pub predicted: f64,
    pub rel_error: f64,
}

/// Least-squares fit of `(F̃₂ − Y₂)/λ² = c₂ + c₃ λ^q`, `q = n(1/2 − β) − 2` the slowest
/// remainder exponent, over constructions sharing n, β and ΔR(0).
pub fn fit_lambda2_slope(runs: &[AssembledMetric]) -> Result<Lambda2Fit> {
    if runs.len() < 2 {
        return Err(Error::domain("need at least two constructions"));
    }
    let p0 = runs[0].params;
    if runs.iter().any(|r| r.params.n != p0.n || r.params.beta != p0.beta || r.params.laplacian_r != p0.laplacian_r) {
        return Err(Error::domain("constructions must share n, beta and Delta R(0)"));
    }
    let q = p0.n as f64 * (0.5 - p0.beta) - 2.0;
    // Normal equations for [1, λ^q].
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in runs {
        let x = r.params.lambda.powf(q);
        let y = r.lambda2_slope;
        s11 += 1.0;
        s12 += x;
        s22 += x * x;
        t1 += y;
        t2 += x * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-300 {
        return Err(Error::Numeric("degenerate lambda sweep".into()));
    }
    let slope = (t1 * s22 - t2 * s12) / det;
    let predicted = runs[0].predicted_lambda2_slope;
    Ok(Lambda2Fit { slope, predicted, rel_error: (slope - predicted).abs() / predicted.abs() })
}
