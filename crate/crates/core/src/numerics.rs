//! Shared numerical primitives: adaptive Simpson quadrature, Brent root
//! finding, central differences, the two mollifier bumps and 1-D peak
//! detection on sampled data.

use crate::error::{Result, SirError};
use serde::Serialize;

/// Default relative tolerance for quadrature.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_DEPTH: u32 = 50;
const MIN_DEPTH: u32 = 3;
const MAX_EVALS: usize = 4_000_000;

/// A real function sampled on strictly increasing nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(SirError::invalid(format!(
                "grid has {} nodes but {} values",
                nodes.len(),
                values.len()
            )));
        }
        if nodes.is_empty() {
            return Err(SirError::invalid("grid function needs at least one node"));
        }
        if let Some(k) = nodes.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SirError::invalid(format!(
                "grid nodes not strictly increasing at index {}",
                k + 1
            )));
        }
        if nodes.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(SirError::invalid("grid function contains non-finite entries"));
        }
        Ok(Self { nodes, values })
    }

    /// Samples `f` at `nodes`.
    pub fn sample(nodes: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = nodes.iter().map(|&x| f(x)).collect();
        Self::new(nodes, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first_node(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last_node(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Index `k` of the cell `[x_k, x_{k+1}]` containing `x` (clamped).
    pub fn cell(&self, x: f64) -> usize {
        let n = self.nodes.len();
        if n < 2 {
            return 0;
        }
        match self.nodes.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    /// Piecewise-linear interpolant; constant extrapolation outside the nodes.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if n == 1 || x <= self.nodes[0] {
            return self.values[0];
        }
        if x >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let k = self.cell(x);
        let (x0, x1) = (self.nodes[k], self.nodes[k + 1]);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Slope of the interpolant on the cell containing `x`.
    pub fn slope(&self, x: f64) -> f64 {
        if self.nodes.len() < 2 {
            return 0.0;
        }
        let k = self.cell(x);
        (self.values[k + 1] - self.values[k]) / (self.nodes[k + 1] - self.nodes[k])
    }
}

/// `n` uniformly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|k| a + h * k as f64).collect();
            v[n - 1] = b;
            v
        }
    }
}

/// `n` geometrically spaced points from `a` to `b` inclusive (`0 < a < b`).
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let (la, lb) = (a.ln(), b.ln());
            let h = (lb - la) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|k| (la + h * k as f64).exp()).collect();
            v[0] = a;
            v[n - 1] = b;
            v
        }
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The result `Q` satisfies `|Q - ∫f| <= tol * (1 + |Q|)` under the usual
/// Richardson error model. Subdivision stops at depth 50; if some panel
/// has not converged by then the call fails with the estimate reached.
pub fn integrate_adaptive<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    try_integrate_adaptive(|x| Ok(f(x)), a, b, tol)
}

/// Same as [`integrate_adaptive`] for integrands that can fail.
pub fn try_integrate_adaptive<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(tol > 0.0) {
        return Err(SirError::invalid(format!("quadrature tolerance must be positive, got {tol}")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(SirError::domain(format!("quadrature limits must be finite: [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return try_integrate_adaptive(f, b, a, tol).map(|q| -q);
    }
    let mut run = Simpson {
        f: &f,
        evals: 0,
        failed: false,
    };
    let fa = run.eval(a)?;
    let fb = run.eval(b)?;
    let m = 0.5 * (a + b);
    let fm = run.eval(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Coarse magnitude estimate for the relative part of the target.
    let coarse = {
        let xs = linspace(a, b, 17);
        let mut s = 0.0;
        for w in xs.windows(2) {
            s += run.eval(0.5 * (w[0] + w[1]))?.abs() * (w[1] - w[0]);
        }
        s.max(whole.abs())
    };
    let eps = tol * (1.0 + coarse);
    let q = run.recurse(a, m, b, fa, fm, fb, whole, eps, 0)?;
    if run.failed {
        return Err(SirError::Quadrature { a, b, estimate: q });
    }
    Ok(q)
}

struct Simpson<'a, F> {
    f: &'a F,
    evals: usize,
    failed: bool,
}

impl<F> Simpson<'_, F>
where
    F: Fn(f64) -> Result<f64>,
{
    fn eval(&mut self, x: f64) -> Result<f64> {
        self.evals += 1;
        let y = (self.f)(x)?;
        if !y.is_finite() {
            return Err(SirError::domain(format!("integrand is not finite at x = {x}")));
        }
        Ok(y)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        a: f64,
        m: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> Result<f64> {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.eval(lm)?;
        let frm = self.eval(rm)?;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        let roundoff = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        let unsplittable = lm <= a || rm >= b || lm >= m || rm <= m;
        if (depth >= MIN_DEPTH || unsplittable) && (delta.abs() <= 15.0 * eps || delta.abs() <= roundoff) {
            return Ok(left + right + delta / 15.0);
        }
        if depth >= MAX_DEPTH || unsplittable || self.evals > MAX_EVALS {
            self.failed = true;
            return Ok(left + right + delta / 15.0);
        }
        let l = self.recurse(a, lm, m, fa, flm, fm, left, 0.5 * eps, depth + 1)?;
        let r = self.recurse(m, rm, b, fm, frm, fb, right, 0.5 * eps, depth + 1)?;
        Ok(l + r)
    }
}

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss-Legendre rule on `panels` equal panels.
///
/// Unlike [`integrate_adaptive`] the node set depends smoothly on the
/// limits, so the result is a smooth function of `a` and `b`. That makes it
/// the right inner rule when the integral is itself integrated again.
pub fn gauss_legendre<F>(f: F, a: f64, b: f64, panels: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            acc += w * (f(mid - half * x)? + f(mid + half * x)?);
        }
        total += acc * half;
    }
    Ok(total)
}

/// Brent's method on a sign-changing bracket `[a, b]`.
///
/// Returns `x` in the bracket with `f(x) == 0` or a final bracket no wider
/// than `tol`.
pub fn find_root_bracketed<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(SirError::domain(format!("root function not finite at bracket ends [{a}, {b}]")));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(SirError::Bracket { a, b, fa, fb });
    }
    let tol = tol.max(0.0);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b.clamp(lo, hi));
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(SirError::domain(format!("root function not finite at x = {b}")));
        }
    }
    Ok(b.clamp(lo, hi))
}

fn exp_neg_recip(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// C∞ step rising from 0 at `u <= 0` to 1 at `u >= 1`.
fn smooth_step(u: f64) -> f64 {
    let p = exp_neg_recip(u);
    let q = exp_neg_recip(1.0 - u);
    if p + q == 0.0 {
        0.0
    } else {
        p / (p + q)
    }
}

/// Flat-topped radial bump: 1 on `|x| < 1/3`, `exp(-1/(1-x²))` on
/// `2/3 < |x| < 1`, 0 outside. The bridge on `[1/3, 2/3]` blends the two
/// regimes with an `e^{-1/x}` smooth step, which keeps it C∞ and
/// non-increasing in `|x|`.
pub fn bump_phi0(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 1.0 {
        return 0.0;
    }
    if ax <= 1.0 / 3.0 {
        return 1.0;
    }
    let tail = (-1.0 / (1.0 - ax * ax)).exp();
    if ax >= 2.0 / 3.0 {
        return tail;
    }
    let blend = smooth_step(3.0 * ax - 1.0);
    1.0 - blend * (1.0 - tail)
}

/// Strict-peak bump `exp(-1/(1-x²))` on `|x| < 1`, 0 outside.
pub fn bump_phi1(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - ax * ax)).exp()
    }
}

/// Derivative of [`bump_phi1`].
pub fn bump_phi1_prime(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let d = 1.0 - x * x;
    -2.0 * x / (d * d) * (-1.0 / d).exp()
}

/// Derivative of [`bump_phi0`].
pub fn bump_phi0_prime(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 1.0 || ax <= 1.0 / 3.0 {
        return 0.0;
    }
    let d = 1.0 - ax * ax;
    let tail = (-1.0 / d).exp();
    let tail_prime = -2.0 * ax / (d * d) * tail;
    let dphi = if ax >= 2.0 / 3.0 {
        tail_prime
    } else {
        let u = 3.0 * ax - 1.0;
        let p = exp_neg_recip(u);
        let q = exp_neg_recip(1.0 - u);
        // d/du p = p/u², d/du q = -q/(1-u)²
        let dp = if u > 0.0 { p / (u * u) } else { 0.0 };
        let dq = if u < 1.0 { -q / ((1.0 - u) * (1.0 - u)) } else { 0.0 };
        let sum = p + q;
        let dblend = if sum == 0.0 { 0.0 } else { (dp * sum - p * (dp + dq)) / (sum * sum) * 3.0 };
        let blend = smooth_step(u);
        -dblend * (1.0 - tail) + blend * tail_prime
    };
    dphi * x.signum()
}

/// Difference stencil selector for [`finite_difference`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    First,
    Second,
}

/// Central difference approximation of `f'(x)` or `f''(x)`.
pub fn finite_difference<F>(f: F, x: f64, h: f64, order: DiffOrder) -> f64
where
    F: Fn(f64) -> f64,
{
    match order {
        DiffOrder::First => (f(x + h) - f(x - h)) / (2.0 * h),
        DiffOrder::Second => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
    }
}

/// A strict local maximum of sampled data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    /// First node of the maximal run.
    pub index: usize,
    /// Node location, or the midpoint of a flat run.
    pub location: f64,
    pub height: f64,
    /// The maximum is a run of equal values rather than a single node.
    pub flat: bool,
}

/// Interior strict local maxima of `g`.
///
/// A run of equal values bounded by strictly smaller neighbours on both
/// sides is a single peak with `flat = true`.
pub fn detect_peaks(g: &GridFunction) -> Vec<Peak> {
    detect_peaks_in(g.nodes(), g.values())
}

/// [`detect_peaks`] on raw slices of equal length.
pub fn detect_peaks_in(nodes: &[f64], values: &[f64]) -> Vec<Peak> {
    let n = values.len().min(nodes.len());
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        if i > 0 && j + 1 < n && values[i - 1] < values[i] && values[j + 1] < values[i] {
            peaks.push(Peak {
                index: i,
                location: 0.5 * (nodes[i] + nodes[j]),
                height: values[i],
                flat: j > i,
            });
        }
        i = j + 1;
    }
    peaks
}

/// Maximal runs of equal consecutive values longer than one node, as
/// `(first_index, last_index)`.
pub fn flat_runs(values: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == values[i] {
            j += 1;
        }
        if j > i {
            runs.push((i, j));
        }
        i = j + 1;
    }
    runs
}
