//! Uniform 1D grids on `[0, π]` (latitude on Sⁿ) and `[0, r₀]` (radius on a ball),
//! finite-difference operators with parity ghosts at poles, and quadrature.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum node count for any grid.
pub const MIN_NODES: usize = 16;

/// Default accuracy order of the derivative stencils.
pub const DEFAULT_ACCURACY: usize = 4;

/// Gregory end-correction coefficients G_1..G_4.
const GREGORY: [f64; 4] = [1.0 / 12.0, 1.0 / 24.0, 19.0 / 720.0, 3.0 / 160.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GridKind {
    /// Polar angle θ ∈ [0, π] on the round sphere; both ends are poles.
    SphereLatitude,
    /// Radius r ∈ [0, r₀]; r = 0 is a pole, r₀ is an open boundary.
    BallRadius { radius: f64 },
}

/// Area of the unit k-sphere, `ω_k = 2π^{(k+1)/2} / Γ((k+1)/2)`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// Finite-difference stencil for one node: sample indices and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Derivative operator of order 1 or 2 with one stencil per node.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeOperator {
    pub order: usize,
    pub accuracy: usize,
    pub stencils: Vec<Stencil>,
    // Flattened copy of `stencils` for the hot path.
    offsets: Vec<usize>,
    flat_indices: Vec<usize>,
    flat_weights: Vec<f64>,
    // Nodes `interior.0..interior.1` share the centred weights `centre_weights`.
    interior: (usize, usize),
    centre_weights: Vec<f64>,
}

impl DerivativeOperator {
    pub fn new(kind: GridKind, nodes: &[f64], order: usize, accuracy: usize) -> Result<Self> {
        if !(order == 1 || order == 2) {
            return Err(Error::domain(format!("derivative order {order} not supported")));
        }
        if accuracy < 2 || accuracy % 2 != 0 {
            return Err(Error::domain(format!("accuracy {accuracy} must be an even integer >= 2")));
        }
        let n = nodes.len();
        let half = accuracy / 2;
        let width = accuracy + 2;
        if n < width.max(MIN_NODES) {
            return Err(Error::GridTooCoarse { nodes: n, needed: width.max(MIN_NODES) });
        }
        let h = nodes[1] - nodes[0];
        let last = n - 1;
        let mut stencils = Vec::with_capacity(n);
        for j in 0..n {
            let one_sided = matches!(kind, GridKind::BallRadius { .. }) && j + half > last;
            if one_sided {
                let start = n - width;
                let offsets: Vec<f64> = (start..n).map(|i| i as f64 - j as f64).collect();
                let w = fornberg(&offsets, order);
                stencils.push(Stencil {
                    indices: (start..n).collect(),
                    weights: w.into_iter().map(|c| c / h.powi(order as i32)).collect(),
                });
                continue;
            }
            let offsets: Vec<f64> = (-(half as i64)..=(half as i64)).map(|o| o as f64).collect();
            let w = fornberg(&offsets, order);
            let mut indices = Vec::with_capacity(offsets.len());
            let mut weights = Vec::with_capacity(offsets.len());
            for (o, c) in (-(half as i64)..=(half as i64)).zip(w) {
                let raw = j as i64 + o;
                // Even reflection across poles.
                let idx = if raw < 0 {
                    (-raw) as usize
                } else if raw as usize > last {
                    2 * last - raw as usize
                } else {
                    raw as usize
                };
                let c = c / h.powi(order as i32);
                if let Some(p) = indices.iter().position(|&i| i == idx) {
                    weights[p] += c;
                } else {
                    indices.push(idx);
                    weights.push(c);
                }
            }
            stencils.push(Stencil { indices, weights });
        }
        let mut offsets = vec![0];
        let mut flat_indices = Vec::new();
        let mut flat_weights = Vec::new();
        for st in &stencils {
            flat_indices.extend_from_slice(&st.indices);
            flat_weights.extend_from_slice(&st.weights);
            offsets.push(flat_indices.len());
        }
        let interior = (half, n - half);
        let centre_weights = stencils[half].weights.clone();
        Ok(Self { order, accuracy, stencils, offsets, flat_indices, flat_weights, interior, centre_weights })
    }

    pub fn apply(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.stencils.len() {
            return Err(Error::Shape(format!("{} samples for {} nodes", samples.len(), self.stencils.len())));
        }
        Ok(self.apply_unchecked(samples))
    }

    /// Stencil weights sum to zero, so differences against the node value are taken;
    /// constants then differentiate to exactly zero.
    pub(crate) fn apply_unchecked(&self, samples: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; samples.len()];
        self.apply_into(samples, &mut out);
        out
    }

    pub(crate) fn apply_into(&self, samples: &[f64], out: &mut [f64]) {
        let (lo, hi) = self.interior;
        let general = |node: usize| {
            let centre = samples[node];
            let (a, b) = (self.offsets[node], self.offsets[node + 1]);
            let mut acc = 0.0;
            for k in a..b {
                acc += self.flat_weights[k] * (samples[self.flat_indices[k]] - centre);
            }
            acc
        };
        for node in (0..lo).chain(hi..out.len()) {
            out[node] = general(node);
        }
        // Same weights and summation order as the general path, without the gather.
        let width = self.centre_weights.len();
        for (node, (o, window)) in out[lo..hi].iter_mut().zip(samples.windows(width)).enumerate() {
            let centre = samples[node + lo];
            let mut acc = 0.0;
            for (w, x) in self.centre_weights.iter().zip(window) {
                acc += w * (x - centre);
            }
            *o = acc;
        }
    }
}

/// Fornberg weights for the `order`-th derivative at 0 from samples at `offsets`.
fn fornberg(offsets: &[f64], order: usize) -> Vec<f64> {
    let n = offsets.len();
    let m = order;
    let mut c = vec![vec![0.0; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = offsets[0];
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = offsets[i];
        for j in 0..i {
            let c3 = offsets[i] - offsets[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Uniform radial or latitudinal grid with volume weights for an n-manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    kind: GridKind,
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    spacing: f64,
    d1: DerivativeOperator,
    d2: DerivativeOperator,
    // cot θ or 1/r per node; unused at poles.
    quotient_factor: Vec<f64>,
}

impl RadialGrid {
    /// Latitude grid θ_i = iπ/(N−1) on Sⁿ with density `ω_{n−1} sin^{n−1}θ`.
    pub fn sphere(dim: usize, n_nodes: usize) -> Result<Self> {
        Self::sphere_with_accuracy(dim, n_nodes, DEFAULT_ACCURACY)
    }

    pub fn sphere_with_accuracy(dim: usize, n_nodes: usize, accuracy: usize) -> Result<Self> {
        check_dim(dim)?;
        check_nodes(n_nodes)?;
        let h = PI / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|i| i as f64 * h).collect();
        let omega = sphere_area(dim - 1);
        let weights = nodes
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let end = if i == 0 || i == n_nodes - 1 { 0.5 } else { 1.0 };
                end * h * omega * t.sin().powi(dim as i32 - 1)
            })
            .collect();
        Self::assemble(GridKind::SphereLatitude, dim, nodes, weights, h, accuracy)
    }

    /// Radius grid r_i = i·r₀/(N−1) with density `ω_{n−1} r^{n−1}` (unit `√det g₁`).
    ///
    /// The density does not vanish at r₀, so the trapezoid rule carries Gregory end
    /// corrections through fourth backward differences at that end.
    pub fn ball(dim: usize, n_nodes: usize, radius: f64) -> Result<Self> {
        Self::ball_with_accuracy(dim, n_nodes, radius, DEFAULT_ACCURACY)
    }

    pub fn ball_with_accuracy(dim: usize, n_nodes: usize, radius: f64, accuracy: usize) -> Result<Self> {
        check_dim(dim)?;
        check_nodes(n_nodes)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::domain(format!("ball radius {radius} must be positive")));
        }
        let h = radius / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|i| i as f64 * h).collect();
        let omega = sphere_area(dim - 1);
        let mut coef = vec![1.0; n_nodes];
        coef[0] = 0.5;
        let last = n_nodes - 1;
        coef[last] = 0.5;
        for (m, g) in GREGORY.iter().enumerate() {
            // −G_{m+1} ∇^{m+1} f_N, with ∇^k f_N = Σ_j (−1)^j C(k, j) f_{N−j}.
            let k = m + 1;
            let mut binom = 1.0;
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                coef[last - j] -= g * sign * binom;
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        let weights = nodes.iter().zip(&coef).map(|(&r, c)| c * h * omega * r.powi(dim as i32 - 1)).collect();
        Self::assemble(GridKind::BallRadius { radius }, dim, nodes, weights, h, accuracy)
    }

    fn assemble(
        kind: GridKind,
        dim: usize,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        spacing: f64,
        accuracy: usize,
    ) -> Result<Self> {
        let d1 = DerivativeOperator::new(kind, &nodes, 1, accuracy)?;
        let d2 = DerivativeOperator::new(kind, &nodes, 2, accuracy)?;
        let quotient_factor = nodes
            .iter()
            .map(|&x| match kind {
                GridKind::SphereLatitude => x.cos() / x.sin(),
                GridKind::BallRadius { .. } => 1.0 / x,
            })
            .collect();
        Ok(Self { kind, dim, nodes, weights, spacing, d1, d2, quotient_factor })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Dimension n of the manifold the grid samples.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weights including the volume density.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn accuracy(&self) -> usize {
        self.d1.accuracy
    }

    pub fn first_derivative_operator(&self) -> &DerivativeOperator {
        &self.d1
    }

    pub fn second_derivative_operator(&self) -> &DerivativeOperator {
        &self.d2
    }

    /// Whether node `i` is a pole (θ = 0, θ = π, or r = 0).
    pub fn is_pole(&self, i: usize) -> bool {
        match self.kind {
            GridKind::SphereLatitude => i == 0 || i + 1 == self.len(),
            GridKind::BallRadius { .. } => i == 0,
        }
    }

    /// `u'·cot θ` (sphere) or `u'/r` (ball), replaced by `u''` at poles.
    pub fn tangential_quotient(&self, du: &[f64], d2u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.tangential_quotient_into(du, d2u, &mut out);
        out
    }

    pub(crate) fn tangential_quotient_into(&self, du: &[f64], d2u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = du[i] * self.quotient_factor[i];
        }
        out[0] = d2u[0];
        if self.kind == GridKind::SphereLatitude {
            let last = self.len() - 1;
            out[last] = d2u[last];
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::domain(format!("manifold dimension {dim} must be >= 2")));
    }
    Ok(())
}

fn check_nodes(n: usize) -> Result<()> {
    if n < MIN_NODES {
        return Err(Error::GridTooCoarse { nodes: n, needed: MIN_NODES });
    }
    Ok(())
}

/// First derivative with the grid's default stencils.
pub fn d1(grid: &RadialGrid, samples: &[f64]) -> Result<Vec<f64>> {
    grid.d1.apply(samples)
}

/// Second derivative with the grid's default stencils.
pub fn d2(grid: &RadialGrid, samples: &[f64]) -> Result<Vec<f64>> {
    grid.d2.apply(samples)
}

/// `∫ f dvol` with the grid's density weights, summed in node order with Neumaier compensation.
pub fn integrate(grid: &RadialGrid, samples: &[f64]) -> Result<f64> {
    if samples.len() != grid.len() {
        return Err(Error::Shape(format!("{} samples for {} nodes", samples.len(), grid.len())));
    }
    Ok(compensated_sum(grid.weights.iter().zip(samples).map(|(w, f)| w * f)))
}

/// Neumaier compensated summation in iteration order.
pub fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "need at least one node");
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut pp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=m {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            pp = m as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre rule over the given breakpoints with `m` nodes per panel.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(breaks: &[f64], m: usize) -> Self {
        let (gx, gw) = gauss_legendre(m);
        let mut nodes = Vec::with_capacity(m * breaks.len());
        let mut weights = Vec::with_capacity(m * breaks.len());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        Self { nodes, weights }
    }

    /// Panels uniform in `log r` between `a > 0` and `b`.
    pub fn log_spaced(a: f64, b: f64, panels: usize, m: usize) -> Self {
        let breaks: Vec<f64> = (0..=panels).map(|k| a * (b / a).powf(k as f64 / panels as f64)).collect();
        Self::new(&breaks, m)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        compensated_sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }
}
