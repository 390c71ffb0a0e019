//! The nonlocal model in physical time, where recovery follows a
//! distribution `G` instead of a constant rate:
//!
//! ```text
//! I(t) = ∫₀^t [1 - G(t-σ)] (-S'(σ)) dσ + I0 [1 - G(t)],   S' = -λ I S.
//! ```
//!
//! Also the same model parameterized by `S` through a convolution kernel
//! `𝔾`, and the residual of the condition under which that form collapses
//! to the classic one.

use crate::classic_sir::{SirParams, Trajectory};
use crate::error::{Result, SirError};
use crate::numerics::{geomspace, try_integrate_adaptive, GridFunction};
use crate::table;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const INNER_TOL: f64 = 1e-13;

/// A recovery-time distribution `G(t)` on `t ≥ 0`.
#[derive(Clone)]
pub struct CdfKernel {
    name: String,
    scale: f64,
    cdf: Scalar,
}

impl fmt::Debug for CdfKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CdfKernel")
            .field("name", &self.name)
            .field("scale", &self.scale)
            .finish()
    }
}

impl CdfKernel {
    /// `scale` is the characteristic time used by [`CdfKernel::validate`].
    pub fn new(name: impl Into<String>, scale: f64, cdf: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            scale,
            cdf: Arc::new(cdf),
        }
    }

    /// `G(t) = 1 - e^{-γt}`, the distribution behind the classic model.
    pub fn exponential(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SirError::invalid(format!("exponential kernel needs gamma > 0, got {gamma}")));
        }
        Ok(Self::new(format!("exponential:gamma={gamma}"), 1.0 / gamma, move |t| {
            -(-gamma * t).exp_m1()
        }))
    }

    /// Piecewise-linear `G` through sampled values, constant after the last node.
    pub fn from_grid(name: impl Into<String>, grid: GridFunction) -> Result<Self> {
        if grid.len() < 2 || grid.first_node() != 0.0 {
            return Err(SirError::invalid("sampled CDF must start at t = 0 with at least 2 nodes"));
        }
        let scale = grid.last_node() * 1e-3;
        let kernel = Self::new(name, scale, move |t| grid.eval(t));
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.cdf)(t)
    }

    /// Sampled check of `G(0) = 0`, monotonicity on a log-spaced grid, range
    /// `[0, 1]` and `G(10³·scale) > 1 - 10⁻⁶`.
    pub fn validate(&self) -> Result<()> {
        let g0 = self.eval(0.0);
        if g0.abs() > 1e-12 {
            return Err(SirError::invalid(format!("{}: G(0) = {g0}", self.name)));
        }
        let mut prev = g0;
        for t in geomspace(1e-6 * self.scale, 1e3 * self.scale, 400) {
            let g = self.eval(t);
            if !(0.0..=1.0).contains(&g) || !g.is_finite() {
                return Err(SirError::invalid(format!("{}: G({t}) = {g} outside [0,1]", self.name)));
            }
            if g < prev {
                return Err(SirError::invalid(format!("{}: G decreases near t = {t}", self.name)));
            }
            prev = g;
        }
        let tail = self.eval(1e3 * self.scale);
        if tail <= 1.0 - 1e-6 {
            return Err(SirError::invalid(format!(
                "{}: G(1e3 * scale) = {tail} does not approach 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// Looks up a distribution by registry string: `exponential:gamma=<x>` or
/// `file:<path>` (CSV with columns `t,G`).
pub fn parse_cdf_kernel(spec: &str) -> Result<CdfKernel> {
    if let Some(rest) = spec.strip_prefix("exponential:") {
        let gamma = parse_assignment(rest, "gamma")?;
        return CdfKernel::exponential(gamma);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let cols = table::read(Path::new(path), &["t", "G"])?;
        let mut cols = cols.into_iter();
        let (t, g) = (cols.next().unwrap_or_default(), cols.next().unwrap_or_default());
        return CdfKernel::from_grid(spec, GridFunction::new(t, g)?);
    }
    Err(SirError::invalid(format!("unknown kernel `{spec}`")))
}

pub(crate) fn parse_assignment(text: &str, key: &str) -> Result<f64> {
    let value = text
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| SirError::invalid(format!("expected `{key}=<value>`, got `{text}`")))?;
    value
        .trim()
        .parse()
        .map_err(|_| SirError::invalid(format!("bad number `{value}` for {key}")))
}

/// Product-trapezoid solver for the memory equation coupled to `S' = -λIS`.
///
/// Weights `K_m = 1 - G(mh)` are tabulated once. Each step splits the
/// trapezoid sums into a known part and the unknown newest flux `u_n`,
/// predicts `u_n = u_{n-1}` and corrects with one fixed-point sweep.
pub fn solve_volterra(p: &SirParams, kernel: &CdfKernel, h: f64, t_max: f64) -> Result<Trajectory> {
    if !(h > 0.0) || !(t_max > 0.0) {
        return Err(SirError::invalid(format!("h and t_max must be positive (h = {h}, t_max = {t_max})")));
    }
    let steps = ((t_max / h) - 1e-9).ceil().max(1.0) as usize;
    let weights: Vec<f64> = (0..=steps).map(|m| 1.0 - kernel.eval(m as f64 * h)).collect();
    let lambda = p.lambda();
    let i0 = p.i0();

    let mut traj = Trajectory::with_capacity(steps + 1);
    let mut flux = Vec::with_capacity(steps + 1);
    let (mut s, mut i) = (p.s0(), i0);
    traj.push(0.0, s, i);
    flux.push(lambda * i * s);

    for n in 1..=steps {
        let mut memory = 0.5 * weights[n] * flux[0];
        for k in 1..n {
            memory += weights[n - k] * flux[k];
        }
        let known_i = h * memory + i0 * weights[n];
        let known_s = s - 0.5 * h * flux[n - 1];

        let guess = flux[n - 1];
        let (i_pred, s_pred) = (known_i + 0.5 * h * guess, known_s - 0.5 * h * guess);
        let corrected = lambda * i_pred * s_pred;
        i = known_i + 0.5 * h * corrected;
        s = known_s - 0.5 * h * corrected;

        if !(0.0..=1.0).contains(&s) || !(i >= 0.0) || !i.is_finite() {
            return Err(SirError::StepSize(format!(
                "Volterra state left the simplex at step {n}: S = {s}, I = {i} (h = {h})"
            )));
        }
        traj.push(n as f64 * h, s, i);
        flux.push(lambda * i * s);
    }
    Ok(traj)
}

/// The `S`-domain kernel `𝔾`, with an optional derivative.
#[derive(Clone)]
pub struct SKernel {
    name: String,
    domain: (f64, f64),
    value: Scalar,
    derivative: Option<Scalar>,
}

impl fmt::Debug for SKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SKernel")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("has_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl SKernel {
    pub fn new(
        name: impl Into<String>,
        domain: (f64, f64),
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            domain,
            value: Arc::new(value),
            derivative: None,
        }
    }

    pub fn with_derivative(mut self, derivative: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    /// `𝔾 ≡ 0` on the whole line.
    pub fn zero() -> Self {
        Self::new("zero", (f64::NEG_INFINITY, f64::INFINITY), |_| 0.0).with_derivative(|_| 0.0)
    }

    /// `𝔾(x) = γ/(λ(x + S0))` for `x ≤ 0` and `0` for `x > 0`.
    ///
    /// Since every argument `S - S0` of the integral term is `≤ 0` and every
    /// argument `S` of the point term is `> 0`, this kernel turns the
    /// `S`-parameterized form into the classic `I(S)` and has zero residual.
    pub fn classic_matching(p: &SirParams) -> Self {
        let (ratio, s0) = (p.gamma() / p.lambda(), p.s0());
        Self::new("classic-matching", (-s0, f64::INFINITY), move |x| {
            if x <= 0.0 {
                ratio / (x + s0)
            } else {
                0.0
            }
        })
        .with_derivative(move |x| if x <= 0.0 { -ratio / ((x + s0) * (x + s0)) } else { 0.0 })
    }

    /// Linear interpolation of sampled values; the derivative is the cell slope.
    pub fn from_grid(name: impl Into<String>, grid: GridFunction) -> Self {
        let domain = (grid.first_node(), grid.last_node());
        let slope_grid = grid.clone();
        Self::new(name, domain, move |x| grid.eval(x)).with_derivative(move |x| slope_grid.slope(x))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if x < self.domain.0 || x > self.domain.1 {
            return Err(SirError::domain(format!(
                "kernel `{}` is undefined at {x} (domain [{}, {}])",
                self.name, self.domain.0, self.domain.1
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        let v = (self.value)(x);
        if !v.is_finite() {
            return Err(SirError::domain(format!("kernel `{}` is not finite at {x}", self.name)));
        }
        Ok(v)
    }

    pub fn eval_derivative(&self, x: f64) -> Result<f64> {
        let d = self
            .derivative
            .as_ref()
            .ok_or_else(|| SirError::MissingDerivative(self.name.clone()))?;
        self.check_domain(x)?;
        Ok(d(x))
    }
}

/// `I(S) = S0 + I0 - S + ∫₀^{S-S0} 𝔾 - I0 𝔾(S)`, the integral signed
/// (negative orientation for `S < S0`).
pub fn i_of_s_nonlocal(k: &SKernel, p: &SirParams, s: f64) -> Result<f64> {
    i_of_s_nonlocal_tol(k, p, s, INNER_TOL)
}

fn i_of_s_nonlocal_tol(k: &SKernel, p: &SirParams, s: f64, tol: f64) -> Result<f64> {
    if !(s > 0.0 && s <= p.s0()) {
        return Err(SirError::domain(format!("s must lie in (0, {}], got {s}", p.s0())));
    }
    let at_start = k.eval(p.s0())?;
    if at_start.abs() > 1e-12 {
        return Err(SirError::domain(format!(
            "kernel `{}` violates initial consistency: value {at_start} at S0",
            k.name
        )));
    }
    k.check_domain(s - p.s0())?;
    let memory = try_integrate_adaptive(|x| k.eval(x), 0.0, s - p.s0(), tol)?;
    Ok(p.s0() + p.i0() - s + memory - p.i0() * k.eval(s)?)
}

/// Per-node residual `𝔾(s - S0) - I0 𝔾'(s) - γ/(λs)`.
pub fn kernel_residual(k: &SKernel, p: &SirParams, s_grid: &[f64]) -> Result<Vec<f64>> {
    s_grid
        .iter()
        .map(|&s| Ok(k.eval(s - p.s0())? - p.i0() * k.eval_derivative(s)? - p.gamma() / (p.lambda() * s)))
        .collect()
}

/// `t = ∫_s^{S0} dσ / (λσ I(σ))` with `I` from [`i_of_s_nonlocal`].
pub fn time_of_s_nonlocal(k: &SKernel, p: &SirParams, s: f64, tol: f64) -> Result<f64> {
    if !(s > 0.0 && s <= p.s0()) {
        return Err(SirError::domain(format!("s must lie in (0, {}], got {s}", p.s0())));
    }
    if s == p.s0() {
        return Ok(0.0);
    }
    let inner = (tol * 1e-3).max(INNER_TOL);
    let infected = |sigma: f64| -> Result<f64> {
        let i = i_of_s_nonlocal_tol(k, p, sigma, inner)?;
        if i <= 0.0 {
            return Err(SirError::Extinction { s: sigma, value: i });
        }
        Ok(i)
    };
    infected(s)?;
    try_integrate_adaptive(|sigma| Ok(1.0 / (p.lambda() * sigma * infected(sigma)?)), s, p.s0(), tol)
}
