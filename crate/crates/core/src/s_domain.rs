//! Profiles on `[1, ∞)` in the variable `s = e^{λτ}` and the pair of maps
//! between a kernel profile `g` and an infected profile `f`:
//!
//! ```text
//! f(s) = (β/s) ∫₁^s g + g(s)
//! g(s) = -β s^{-β-1} ∫₁^s f(x) x^β dx + f(s)
//! ```
//!
//! A profile is a list of contiguous segments. Closed-form segments are
//! finite sums of `c·s^q·(ln s)^k` and are integrated exactly, so kinks
//! survive both maps untouched. Smooth segments add a numerical excess on
//! top of such a sum, and sampled segments interpolate data linearly.

use crate::error::{Result, SirError};
use crate::numerics::{find_root_bracketed, gauss_legendre, geomspace, try_integrate_adaptive, GridFunction};
use crate::table;
use serde::Serialize;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

/// Default quadrature tolerance for numerically integrated segments.
pub const PROFILE_TOL: f64 = 1e-12;

const POWER_MATCH: f64 = 1e-12;

pub type Excess = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

/// `coef · s^power · (ln s)^log_pow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term {
    pub coef: f64,
    pub power: f64,
    pub log_pow: u32,
}

impl Term {
    pub fn new(coef: f64, power: f64, log_pow: u32) -> Self {
        Self { coef, power, log_pow }
    }

    pub fn monomial(coef: f64, power: f64) -> Self {
        Self::new(coef, power, 0)
    }

    pub fn constant(coef: f64) -> Self {
        Self::new(coef, 0.0, 0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        let mut v = self.coef * pow(s, self.power);
        if self.log_pow > 0 {
            v *= s.ln().powi(self.log_pow as i32);
        }
        v
    }

    fn derivative(&self) -> Vec<Term> {
        let mut out = Vec::with_capacity(2);
        if self.power != 0.0 {
            out.push(Term::new(self.coef * self.power, self.power - 1.0, self.log_pow));
        }
        if self.log_pow > 0 {
            out.push(Term::new(self.coef * self.log_pow as f64, self.power - 1.0, self.log_pow - 1));
        }
        out
    }

    fn antiderivative(&self) -> Vec<Term> {
        let k = self.log_pow;
        let up = self.power + 1.0;
        if up.abs() <= POWER_MATCH {
            return vec![Term::new(self.coef / (k + 1) as f64, 0.0, k + 1)];
        }
        let mut out = Vec::with_capacity(k as usize + 1);
        let mut factor = self.coef / up;
        for j in 0..=k {
            out.push(Term::new(factor, up, k - j));
            // next: (-1)^{j+1} k!/(k-j-1)! / up^{j+2}
            factor *= -((k - j) as f64) / up;
        }
        out
    }

    fn shifted(&self, by: f64) -> Term {
        Term::new(self.coef, self.power + by, self.log_pow)
    }

    fn scaled(&self, factor: f64) -> Term {
        Term::new(self.coef * factor, self.power, self.log_pow)
    }
}

fn pow(s: f64, q: f64) -> f64 {
    if q == 0.0 {
        1.0
    } else if q == -1.0 {
        1.0 / s
    } else {
        s.powf(q)
    }
}

pub fn eval_terms(terms: &[Term], s: f64) -> f64 {
    terms.iter().map(|t| t.eval(s)).sum()
}

fn derivative_terms(terms: &[Term]) -> Vec<Term> {
    combine(terms.iter().flat_map(Term::derivative).collect())
}

fn antiderivative_terms(terms: &[Term]) -> Vec<Term> {
    combine(terms.iter().flat_map(Term::antiderivative).collect())
}

/// Merges terms with equal powers and drops exact zeros.
fn combine(terms: Vec<Term>) -> Vec<Term> {
    let mut out: Vec<Term> = Vec::with_capacity(terms.len());
    for t in terms {
        match out.iter_mut().find(|o| {
            o.log_pow == t.log_pow && (o.power - t.power).abs() <= POWER_MATCH * (1.0 + t.power.abs())
        }) {
            Some(o) => o.coef += t.coef,
            None => out.push(t),
        }
    }
    out.retain(|t| t.coef != 0.0);
    out
}

/// `∫_a^b x^r dx`.
fn power_integral(r: f64, a: f64, b: f64) -> f64 {
    if (r + 1.0).abs() <= POWER_MATCH {
        (b / a).ln()
    } else {
        (pow(b, r + 1.0) - pow(a, r + 1.0)) / (r + 1.0)
    }
}

/// The representation of one segment.
#[derive(Clone)]
pub enum Shape {
    /// Finite sum of closed-form terms.
    Terms(Vec<Term>),
    /// Closed-form base plus a numerically evaluated excess with an
    /// optional derivative.
    Smooth {
        base: Vec<Term>,
        excess: Excess,
        slope: Option<Excess>,
        /// Interior points where the excess is not smooth.
        breaks: Arc<Vec<f64>>,
    },
    /// Linear interpolation of data spanning the whole segment.
    Sampled(Arc<GridFunction>),
}

impl Shape {
    /// A smooth segment whose excess has no interior breaks.
    pub fn smooth(base: Vec<Term>, excess: Excess, slope: Option<Excess>) -> Self {
        Shape::Smooth {
            base,
            excess,
            slope,
            breaks: Arc::new(Vec::new()),
        }
    }
}

/// `[a, b]` cut at the breaks strictly inside it.
fn pieces(a: f64, b: f64, breaks: &[f64]) -> Vec<(f64, f64)> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|&x| x > lo && x < hi));
    cuts.push(hi);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

const SMOOTH_PANELS: f64 = 48.0;

/// Smooth-in-limits integral of `f` over `[a, b]`, cut at `breaks`.
fn fixed_integral(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let total = (b - a).abs();
    let mut acc = 0.0;
    for (lo, hi) in pieces(a, b, breaks) {
        let panels = (SMOOTH_PANELS * (hi - lo) / total).ceil() as usize;
        acc += gauss_legendre(f, lo, hi, panels)?;
    }
    Ok(if b < a { -acc } else { acc })
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Terms(t) => f.debug_tuple("Terms").field(t).finish(),
            Shape::Smooth { base, slope, .. } => f
                .debug_struct("Smooth")
                .field("base", base)
                .field("has_slope", &slope.is_some())
                .finish(),
            Shape::Sampled(g) => write!(f, "Sampled({} nodes)", g.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

impl Segment {
    fn value(&self, s: f64) -> Result<f64> {
        match &self.shape {
            Shape::Terms(t) => Ok(eval_terms(t, s)),
            Shape::Smooth { base, excess, .. } => Ok(eval_terms(base, s) + excess(s)?),
            Shape::Sampled(g) => Ok(g.eval(s)),
        }
    }

    fn excess_over(&self, s: f64, reference: f64) -> Result<f64> {
        match &self.shape {
            Shape::Terms(t) => Ok(eval_terms(t, s) - reference),
            Shape::Smooth { base, excess, .. } => Ok((eval_terms(base, s) - reference) + excess(s)?),
            Shape::Sampled(g) => Ok(g.eval(s) - reference),
        }
    }

    fn derivative(&self, s: f64, side: Side) -> Result<f64> {
        match &self.shape {
            Shape::Terms(t) => Ok(eval_terms(&derivative_terms(t), s)),
            Shape::Smooth { base, excess, slope, .. } => {
                let base_slope = eval_terms(&derivative_terms(base), s);
                let excess_slope = match slope {
                    Some(d) => d(s)?,
                    None => self.excess_difference(excess, s)?,
                };
                Ok(base_slope + excess_slope)
            }
            Shape::Sampled(g) => Ok(sampled_slope(g, s, side)),
        }
    }

    /// Central difference of the excess, one-sided near segment ends.
    fn excess_difference(&self, excess: &Excess, s: f64) -> Result<f64> {
        let width = if self.end.is_finite() { self.end - self.start } else { s };
        let h = (1e-5 * width).max(1e-7 * s);
        let lo = (s - h).max(self.start);
        let hi = if self.end.is_finite() { (s + h).min(self.end) } else { s + h };
        Ok((excess(hi)? - excess(lo)?) / (hi - lo))
    }

    /// `∫_a^b value(x) x^q dx` inside this segment.
    fn integral(&self, q: f64, a: f64, b: f64, tol: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        match &self.shape {
            Shape::Terms(t) => Ok(terms_integral(t, q, a, b)),
            Shape::Smooth { base, excess, breaks, .. } => {
                let mut ex = 0.0;
                for (lo, hi) in pieces(a, b, breaks) {
                    ex += try_integrate_adaptive(|x| Ok(excess(x)? * pow(x, q)), lo, hi, tol)?;
                }
                if b < a {
                    ex = -ex;
                }
                Ok(terms_integral(base, q, a, b) + ex)
            }
            Shape::Sampled(g) => Ok(sampled_integral(g, q, a, b)),
        }
    }
}

fn terms_integral(terms: &[Term], q: f64, a: f64, b: f64) -> f64 {
    let shifted: Vec<Term> = terms.iter().map(|t| t.shifted(q)).collect();
    let anti = antiderivative_terms(&shifted);
    eval_terms(&anti, b) - eval_terms(&anti, a)
}

fn sampled_slope(g: &GridFunction, s: f64, side: Side) -> f64 {
    let nodes = g.nodes();
    if nodes.len() < 2 {
        return 0.0;
    }
    let vals = g.values();
    let mut k = nodes.partition_point(|&x| x <= s).clamp(1, nodes.len() - 1) - 1;
    if side == Side::Left && k > 0 && nodes[k] == s {
        k -= 1;
    }
    (vals[k + 1] - vals[k]) / (nodes[k + 1] - nodes[k])
}

/// Exact `∫_a^b lin(x) x^q dx` for the piecewise-linear interpolant.
fn sampled_integral(g: &GridFunction, q: f64, a: f64, b: f64) -> f64 {
    if b < a {
        return -sampled_integral(g, q, b, a);
    }
    let (nodes, vals) = (g.nodes(), g.values());
    let mut total = 0.0;
    for k in 0..nodes.len().saturating_sub(1) {
        let (x0, x1) = (nodes[k], nodes[k + 1]);
        let (lo, hi) = (x0.max(a), x1.min(b));
        if hi <= lo {
            continue;
        }
        let m = (vals[k + 1] - vals[k]) / (x1 - x0);
        let intercept = vals[k] - m * x0;
        total += intercept * power_integral(q, lo, hi) + m * power_integral(q + 1.0, lo, hi);
    }
    total
}

struct PrefixEntry {
    weight: f64,
    tol: f64,
    totals: Arc<Vec<f64>>,
}

/// A function on `[1, ∞)` built from contiguous segments.
#[derive(Clone)]
pub struct SProfile {
    name: String,
    segments: Vec<Segment>,
    tail_exponent: Option<f64>,
    beta: Option<f64>,
    markers: Vec<f64>,
    cache: Arc<Mutex<Vec<PrefixEntry>>>,
}

impl fmt::Debug for SProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SProfile")
            .field("name", &self.name)
            .field("segments", &self.segments)
            .field("tail_exponent", &self.tail_exponent)
            .field("beta", &self.beta)
            .finish()
    }
}

impl SProfile {
    pub fn new(name: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let name = name.into();
        let first = segments
            .first()
            .ok_or_else(|| SirError::invalid(format!("profile `{name}` has no segments")))?;
        if first.start != 1.0 {
            return Err(SirError::invalid(format!("profile `{name}` must start at s = 1")));
        }
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.end > seg.start) {
                return Err(SirError::invalid(format!("segment {k} of `{name}` is empty")));
            }
            let expected_end = segments.get(k + 1).map_or(f64::INFINITY, |next| next.start);
            if seg.end != expected_end {
                return Err(SirError::invalid(format!("segments of `{name}` are not contiguous at {k}")));
            }
            if let Shape::Sampled(g) = &seg.shape {
                if g.first_node() != seg.start || g.last_node() != seg.end {
                    return Err(SirError::invalid(format!("sampled segment {k} of `{name}` does not span it")));
                }
            }
        }
        Ok(Self {
            name,
            segments,
            tail_exponent: None,
            beta: None,
            markers: Vec::new(),
            cache: Arc::new(Mutex::new(Vec::new())),
        })
    }

    /// Segments from consecutive start points; the last one runs to infinity.
    pub fn piecewise(name: impl Into<String>, pieces: Vec<(f64, Shape)>) -> Result<Self> {
        let starts: Vec<f64> = pieces.iter().map(|p| p.0).collect();
        let segments = pieces
            .into_iter()
            .enumerate()
            .map(|(k, (start, shape))| Segment {
                start,
                end: starts.get(k + 1).copied().unwrap_or(f64::INFINITY),
                shape,
            })
            .collect();
        Self::new(name, segments)
    }

    /// Closed-form pieces `(start, terms)`.
    pub fn from_terms(name: impl Into<String>, pieces: Vec<(f64, Vec<Term>)>) -> Result<Self> {
        Self::piecewise(name, pieces.into_iter().map(|(s, t)| (s, Shape::Terms(t))).collect())
    }

    /// Linear interpolation of samples starting at `s = 1`, continued by
    /// the power tail `c·s^{-θ}` that matches the last sample.
    pub fn from_samples(name: impl Into<String>, grid: GridFunction, tail_exponent: f64) -> Result<Self> {
        if !(tail_exponent > 0.0 && tail_exponent <= 1.0) {
            return Err(SirError::invalid(format!("tail exponent must lie in (0, 1], got {tail_exponent}")));
        }
        if grid.len() < 2 {
            return Err(SirError::invalid("sampled profile needs at least 2 nodes"));
        }
        let (last_s, last_v) = (grid.last_node(), *grid.values().last().unwrap_or(&0.0));
        let tail = Term::monomial(last_v * last_s.powf(tail_exponent), -tail_exponent);
        let profile = Self::piecewise(
            name,
            vec![(grid.first_node(), Shape::Sampled(Arc::new(grid))), (last_s, Shape::Terms(vec![tail]))],
        )?;
        Ok(profile.with_tail_exponent(tail_exponent))
    }

    pub fn with_tail_exponent(mut self, theta: f64) -> Self {
        self.tail_exponent = Some(theta);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    /// Points of interest (peak locations) that verification grids include.
    pub fn with_markers(mut self, markers: Vec<f64>) -> Self {
        self.markers = markers;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn tail_exponent(&self) -> Option<f64> {
        self.tail_exponent
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn markers(&self) -> &[f64] {
        &self.markers
    }

    /// Interior segment boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// `(start, end)` of every non-closed-form segment with finite end.
    pub fn numeric_supports(&self) -> Vec<(f64, f64)> {
        self.segments
            .iter()
            .filter(|s| !matches!(s.shape, Shape::Terms(_)) && s.end.is_finite())
            .map(|s| (s.start, s.end))
            .collect()
    }

    fn locate(&self, s: f64) -> Result<usize> {
        if !(s >= 1.0) || s.is_nan() || s == f64::INFINITY {
            return Err(SirError::domain(format!("profile `{}` is defined for s >= 1, got {s}", self.name)));
        }
        Ok(self.segments.partition_point(|seg| seg.start <= s) - 1)
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        let k = self.locate(s)?;
        self.segments[k].value(s)
    }

    /// `value(s) - reference`, computed without first rounding the value.
    ///
    /// When the closed-form part equals `reference` exactly, this returns
    /// the numerical excess at full relative precision, which keeps bumps
    /// far below the unit roundoff of the value observable.
    pub fn excess_over(&self, s: f64, reference: f64) -> Result<f64> {
        let k = self.locate(s)?;
        self.segments[k].excess_over(s, reference)
    }

    /// One-sided derivatives `(left, right)`; they differ only at kinks.
    pub fn derivative_sides(&self, s: f64) -> Result<(f64, f64)> {
        let k = self.locate(s)?;
        let seg = &self.segments[k];
        let right = seg.derivative(s, Side::Right)?;
        let left = if k > 0 && seg.start == s {
            self.segments[k - 1].derivative(s, Side::Left)?
        } else if s == 1.0 {
            right
        } else {
            seg.derivative(s, Side::Left)?
        };
        Ok((left, right))
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        Ok(self.derivative_sides(s)?.1)
    }

    fn prefix_totals(&self, weight: f64, tol: f64) -> Result<Arc<Vec<f64>>> {
        {
            let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(e) = cache.iter().find(|e| e.weight == weight && e.tol == tol) {
                return Ok(e.totals.clone());
            }
        }
        let mut totals = Vec::with_capacity(self.segments.len());
        let mut acc = 0.0;
        totals.push(acc);
        for seg in &self.segments[..self.segments.len() - 1] {
            acc += seg.integral(weight, seg.start, seg.end, tol)?;
            totals.push(acc);
        }
        let totals = Arc::new(totals);
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.push(PrefixEntry {
            weight,
            tol,
            totals: totals.clone(),
        });
        Ok(totals)
    }

    /// `∫₁^s value(x) x^weight dx`.
    pub fn weighted_integral(&self, weight: f64, s: f64, tol: f64) -> Result<f64> {
        let k = self.locate(s)?;
        let totals = self.prefix_totals(weight, tol)?;
        let seg = &self.segments[k];
        Ok(totals[k] + seg.integral(weight, seg.start, s, tol)?)
    }

    pub fn sample(&self, nodes: &[f64]) -> Result<GridFunction> {
        let values = nodes.iter().map(|&s| self.value(s)).collect::<Result<Vec<_>>>()?;
        GridFunction::new(nodes.to_vec(), values)
    }

    pub fn sample_excess(&self, nodes: &[f64], reference: f64) -> Result<Vec<f64>> {
        nodes.iter().map(|&s| self.excess_over(s, reference)).collect()
    }

    /// `factor · self`.
    pub fn scaled(&self, factor: f64) -> SProfile {
        let segments = self
            .segments
            .iter()
            .map(|seg| {
                let shape = match &seg.shape {
                    Shape::Terms(t) => Shape::Terms(t.iter().map(|x| x.scaled(factor)).collect()),
                    Shape::Smooth { base, excess, slope, breaks } => {
                        let ex = excess.clone();
                        let sl = slope.clone();
                        Shape::Smooth {
                            base: base.iter().map(|x| x.scaled(factor)).collect(),
                            excess: Arc::new(move |s| Ok(factor * ex(s)?)),
                            slope: sl.map(|d| Arc::new(move |s| Ok(factor * d(s)?)) as Excess),
                            breaks: breaks.clone(),
                        }
                    }
                    Shape::Sampled(g) => {
                        let vals = g.values().iter().map(|v| v * factor).collect();
                        Shape::Sampled(Arc::new(
                            GridFunction::new(g.nodes().to_vec(), vals).expect("scaling keeps grid valid"),
                        ))
                    }
                };
                Segment {
                    start: seg.start,
                    end: seg.end,
                    shape,
                }
            })
            .collect();
        SProfile {
            name: format!("{}*{factor}", self.name),
            segments,
            tail_exponent: self.tail_exponent,
            beta: self.beta,
            markers: self.markers.clone(),
            cache: Arc::new(Mutex::new(Vec::new())),
        }
    }

    /// True when the last segment is a closed form in which every term decays.
    pub fn decays_at_infinity(&self) -> bool {
        match &self.segments[self.segments.len() - 1].shape {
            Shape::Terms(t) => !t.is_empty() && t.iter().all(|x| x.power < 0.0),
            _ => false,
        }
    }

    /// Sampled check of the kernel-profile conditions: `g(1) = 1`,
    /// positive, non-increasing and decaying to 0.
    pub fn validate_kernel(&self, nodes: &[f64]) -> Result<()> {
        let at_one = self.value(1.0)?;
        if (at_one - 1.0).abs() > 1e-12 {
            return Err(SirError::invalid(format!("kernel profile has g(1) = {at_one}, expected 1")));
        }
        if !self.decays_at_infinity() {
            return Err(SirError::invalid("kernel profile must decay to 0 at infinity"));
        }
        let g = self.sample(nodes)?;
        let vals = g.values();
        if let Some(k) = vals.iter().position(|&v| !(v > 0.0)) {
            return Err(SirError::invalid(format!("kernel profile not positive at s = {}", nodes[k])));
        }
        if let Some(k) = vals.windows(2).position(|w| w[1] > w[0] + 64.0 * f64::EPSILON * w[0].abs()) {
            return Err(SirError::invalid(format!("kernel profile increases near s = {}", nodes[k])));
        }
        Ok(())
    }
}

pub fn s_of_tau(lambda: f64, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(SirError::domain(format!("tau must be non-negative, got {tau}")));
    }
    Ok((lambda * tau).exp())
}

pub fn tau_of_s(lambda: f64, s: f64) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(SirError::domain(format!("s must be at least 1, got {s}")));
    }
    Ok(s.ln() / lambda)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SirError::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// `f(s) = (β/s) ∫₁^s g + g(s)` at one point.
pub fn forward_map(g: &SProfile, beta: f64, s: f64, tol: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta / s * g.weighted_integral(0.0, s, tol)? + g.value(s)?)
}

/// `g(s) = -β s^{-β-1} ∫₁^s f x^β + f(s)` at one point.
pub fn inverse_map(f: &SProfile, beta: f64, s: f64, tol: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(-beta * s.powf(-beta - 1.0) * f.weighted_integral(beta, s, tol)? + f.value(s)?)
}

/// Whole-profile version of [`forward_map`].
pub fn forward_profile(g: &SProfile, beta: f64, tol: f64) -> Result<SProfile> {
    check_beta(beta)?;
    transform(g, beta, -1.0, 0.0, tol, format!("forward({})", g.name))
}

/// Whole-profile version of [`inverse_map`].
pub fn inverse_profile(f: &SProfile, beta: f64, tol: f64) -> Result<SProfile> {
    check_beta(beta)?;
    transform(f, -beta, -beta - 1.0, beta, tol, format!("inverse({})", f.name))
}

/// `out(s) = coef · s^outer · ∫₁^s in(x) x^weight dx + in(s)`, segment by segment.
fn transform(input: &SProfile, coef: f64, outer: f64, weight: f64, tol: f64, name: String) -> Result<SProfile> {
    let totals = input.prefix_totals(weight, tol)?;
    let closed = |terms: &[Term], start: f64, prefix: f64| -> Vec<Term> {
        let shifted: Vec<Term> = terms.iter().map(|t| t.shifted(weight)).collect();
        let anti = antiderivative_terms(&shifted);
        let constant = prefix - eval_terms(&anti, start);
        let mut out = vec![Term::monomial(coef * constant, outer)];
        out.extend(anti.iter().map(|t| Term::new(coef * t.coef, t.power + outer, t.log_pow)));
        out.extend_from_slice(terms);
        combine(out)
    };
    let mut segments = Vec::with_capacity(input.segments.len());
    for (k, seg) in input.segments.iter().enumerate() {
        let start = seg.start;
        let prefix = totals[k];
        let shape = match &seg.shape {
            Shape::Terms(terms) => Shape::Terms(closed(terms, start, prefix)),
            Shape::Smooth { base, excess, slope, breaks } => {
                let (ex, cuts) = (excess.clone(), breaks.clone());
                let integral = Arc::new(move |s: f64| {
                    fixed_integral(&|x| Ok(ex(x)? * pow(x, weight)), start, s, &cuts)
                });
                let (ex, int) = (excess.clone(), integral.clone());
                let new_excess: Excess = Arc::new(move |s| Ok(coef * pow(s, outer) * int(s)? + ex(s)?));
                let new_slope = slope.as_ref().map(|d| {
                    let (ex, d, int) = (excess.clone(), d.clone(), integral.clone());
                    Arc::new(move |s: f64| {
                        Ok(coef * outer * pow(s, outer - 1.0) * int(s)?
                            + coef * pow(s, outer + weight) * ex(s)?
                            + d(s)?)
                    }) as Excess
                });
                Shape::Smooth {
                    base: closed(base, start, prefix),
                    excess: new_excess,
                    slope: new_slope,
                    breaks: breaks.clone(),
                }
            }
            Shape::Sampled(grid) => {
                let (g1, g2) = (grid.clone(), grid.clone());
                let new_excess: Excess = Arc::new(move |s| {
                    Ok(coef * pow(s, outer) * sampled_integral(&g1, weight, start, s) + g1.eval(s))
                });
                let new_slope: Excess = Arc::new(move |s| {
                    let lin = g2.eval(s);
                    Ok(coef * outer * pow(s, outer - 1.0) * sampled_integral(&g2, weight, start, s)
                        + coef * pow(s, outer + weight) * lin
                        + sampled_slope(&g2, s, Side::Right))
                });
                Shape::Smooth {
                    base: vec![Term::monomial(coef * prefix, outer)],
                    excess: new_excess,
                    slope: Some(new_slope),
                    breaks: Arc::new(grid.nodes().to_vec()),
                }
            }
        };
        segments.push(Segment {
            start,
            end: seg.end,
            shape,
        });
    }
    let mut out = SProfile::new(name, segments)?;
    out.tail_exponent = input.tail_exponent;
    out.beta = Some(if weight == 0.0 { coef } else { weight });
    out.markers = input.markers.clone();
    Ok(out)
}

/// A derivative that may be one-sided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Derivative {
    Smooth(f64),
    Kink { left: f64, right: f64 },
}

impl Derivative {
    pub fn left(&self) -> f64 {
        match *self {
            Derivative::Smooth(v) => v,
            Derivative::Kink { left, .. } => left,
        }
    }

    pub fn right(&self) -> f64 {
        match *self {
            Derivative::Smooth(v) => v,
            Derivative::Kink { right, .. } => right,
        }
    }

    pub fn max(&self) -> f64 {
        self.left().max(self.right())
    }

    pub fn is_kink(&self) -> bool {
        matches!(self, Derivative::Kink { .. })
    }
}

/// `g'(s) = β(β+1) s^{-β-2} ∫₁^s f x^β - β f(s)/s + f'(s)` for the kernel
/// induced by `f`.
///
/// Sums that cancel to within a few ulps of their terms are reported as
/// exactly 0. At kinks of `f` both one-sided values are returned; `tol` is
/// the relative gap below which they count as equal.
pub fn g_prime_of_f(f: &SProfile, beta: f64, s: f64, tol: f64) -> Result<Derivative> {
    check_beta(beta)?;
    let w = f.weighted_integral(beta, s, PROFILE_TOL.min(tol))?;
    let value = f.value(s)?;
    let (dl, dr) = f.derivative_sides(s)?;
    let a = beta * (beta + 1.0) * s.powf(-beta - 2.0) * w;
    let b = beta * value / s;
    let combine = |c: f64| {
        let sum = a - b + c;
        if sum.abs() <= 8.0 * f64::EPSILON * (a.abs() + b.abs() + c.abs()) {
            0.0
        } else {
            sum
        }
    };
    let (left, right) = (combine(dl), combine(dr));
    if (left - right).abs() <= tol * (1.0 + left.abs().max(right.abs())) {
        Ok(Derivative::Smooth(right))
    } else {
        Ok(Derivative::Kink { left, right })
    }
}

/// The explicit two-peak example with `β = 2`: the kernel
/// `g = 1/s` on `[1,2]`, `1/2` on `[2,2.1]`, `2.1/(2s)` after, and the
/// infected profile it induces.
pub fn case3_profiles() -> (SProfile, SProfile) {
    let ln2 = std::f64::consts::LN_2;
    let g = SProfile::from_terms(
        "case3-g",
        vec![
            (1.0, vec![Term::monomial(1.0, -1.0)]),
            (2.0, vec![Term::constant(0.5)]),
            (2.1, vec![Term::monomial(1.05, -1.0)]),
        ],
    )
    .expect("static profile")
    .with_tail_exponent(1.0)
    .with_beta(2.0);
    let f = SProfile::from_terms(
        "case3-f",
        vec![
            // (2 ln s + 1)/s
            (1.0, vec![Term::new(2.0, -1.0, 1), Term::monomial(1.0, -1.0)]),
            // 3/2 + (2 ln 2 - 2)/s
            (2.0, vec![Term::constant(1.5), Term::monomial(2.0 * ln2 - 2.0, -1.0)]),
            // (2/s)(ln 2 + 1/20 + 1.05 ln(s/2.1)) + 2.1/(2s)
            (
                2.1,
                vec![
                    Term::new(2.1, -1.0, 1),
                    Term::monomial(2.0 * ln2 + 0.1 - 2.1 * 2.1f64.ln() + 1.05, -1.0),
                ],
            ),
        ],
    )
    .expect("static profile")
    .with_tail_exponent(1.0)
    .with_beta(2.0);
    (g, f)
}

/// Named built-in profiles: `case3-g` and `case3-f`.
pub fn builtin_profile(name: &str) -> Result<SProfile> {
    let (g, f) = case3_profiles();
    match name {
        "case3-g" => Ok(g),
        "case3-f" => Ok(f),
        _ => Err(SirError::invalid(format!("unknown profile `{name}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerDecayReport {
    /// `β ∫₁² g`.
    pub bound: f64,
    /// `s·f(s) - bound` per node.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub holds: bool,
}

/// Checks `s·f(s) ≥ β ∫₁² g > 0` on nodes in `[2, ∞)`.
pub fn lower_decay_check(
    f: &SProfile,
    g: &SProfile,
    beta: f64,
    s_grid: &[f64],
    tol: f64,
) -> Result<LowerDecayReport> {
    check_beta(beta)?;
    if s_grid.iter().any(|&s| !(s >= 2.0)) {
        return Err(SirError::invalid("lower decay check needs nodes s >= 2"));
    }
    let bound = beta * g.weighted_integral(0.0, 2.0, tol)?;
    let margins = s_grid
        .iter()
        .map(|&s| Ok(s * f.value(s)? - bound))
        .collect::<Result<Vec<f64>>>()?;
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(LowerDecayReport {
        bound,
        holds: bound > 0.0 && min_margin >= 0.0,
        margins,
        min_margin,
    })
}

/// Smallest `α0` such that `(1/s) ∫₁^s g > g(s)` at every scanned `s > α0`,
/// refined by root finding on the last crossing.
pub fn alpha0_threshold(g: &SProfile, s_max: f64, tol: f64) -> Result<f64> {
    if !(s_max > 1.0) {
        return Err(SirError::invalid(format!("s_max must exceed 1, got {s_max}")));
    }
    if !g.decays_at_infinity() {
        return Err(SirError::invalid("alpha0 needs a kernel profile that decays to 0"));
    }
    let gap = |s: f64| -> Result<f64> { Ok(g.weighted_integral(0.0, s, tol)? - s * g.value(s)?) };
    let mut nodes = geomspace(1.0, s_max, 20_001);
    nodes.extend(g.breakpoints().into_iter().filter(|&b| b < s_max));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let gaps = nodes.iter().map(|&s| gap(s)).collect::<Result<Vec<f64>>>()?;
    let last_fail = gaps.iter().rposition(|&v| v <= 0.0).unwrap_or(0);
    if last_fail + 1 >= nodes.len() {
        return Err(SirError::domain(format!("alpha0 undetermined below s_max = {s_max}")));
    }
    if gaps[last_fail] == 0.0 {
        return Ok(nodes[last_fail]);
    }
    let (a, b) = (nodes[last_fail], nodes[last_fail + 1]);
    find_root_bracketed(|s| gap(s).unwrap_or(f64::NAN), a, b, 1e-14)
}

/// Writes `s,value` samples of a profile.
pub fn save_profile_csv(profile: &SProfile, nodes: &[f64], path: &Path) -> Result<()> {
    let sampled = profile.sample(nodes)?;
    table::write(path, &["s", "value"], &[sampled.nodes(), sampled.values()])
}

/// Reads `s,value` samples; the first node must be `s = 1`.
pub fn load_profile_csv(path: &Path, tail_exponent: f64) -> Result<SProfile> {
    let mut cols = table::read(path, &["s", "value"])?.into_iter();
    let (s, v) = (cols.next().unwrap_or_default(), cols.next().unwrap_or_default());
    if s.first() != Some(&1.0) {
        return Err(SirError::invalid("sampled profile must start at s = 1"));
    }
    SProfile::from_samples(path.display().to_string(), GridFunction::new(s, v)?, tail_exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{bump_phi1, bump_phi1_prime, detect_peaks_in, integrate_adaptive, linspace};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn constant_one() -> SProfile {
        SProfile::from_terms("one", vec![(1.0, vec![Term::constant(1.0)])]).unwrap()
    }

    fn unit_grid() -> Vec<f64> {
        geomspace(1.0, 50.0, 1000)
    }

    #[test]
    fn term_calculus() {
        let t = Term::new(3.0, -2.5, 2);
        let anti = t.antiderivative();
        for s in [1.0, 1.7, 4.0, 30.0] {
            let d = eval_terms(&derivative_terms(&anti), s);
            assert!((d - t.eval(s)).abs() < 1e-12 * (1.0 + t.eval(s).abs()));
        }
        let log = Term::new(2.0, -1.0, 1).antiderivative();
        assert_eq!(log, vec![Term::new(1.0, 0.0, 2)]);
        let exact = integrate_adaptive(|x| t.eval(x), 1.0, 5.0, 1e-13).unwrap();
        assert!((terms_integral(&[t], 0.0, 1.0, 5.0) - exact).abs() < 1e-11);
    }

    #[test]
    fn profile_validation() {
        assert!(SProfile::from_terms("late", vec![(1.5, vec![Term::constant(1.0)])]).is_err());
        assert!(SProfile::from_terms("empty", vec![]).is_err());
        assert!(SProfile::from_terms(
            "backwards",
            vec![(1.0, vec![Term::constant(1.0)]), (1.0, vec![Term::constant(1.0)])]
        )
        .is_err());
        let g = GridFunction::new(vec![1.0, 2.0], vec![1.0, 0.5]).unwrap();
        assert!(SProfile::piecewise("gap", vec![(1.0, Shape::Sampled(Arc::new(g)))]).is_err());
        assert!(constant_one().value(0.5).is_err());
    }

    #[test]
    fn change_of_variables() {
        assert_eq!(s_of_tau(2.0, 0.0).unwrap(), 1.0);
        assert_eq!(tau_of_s(2.0, 1.0).unwrap(), 0.0);
        assert!((s_of_tau(0.1, 10.0).unwrap() - std::f64::consts::E).abs() < 1e-15);
        for tau in [0.0, 0.3, 5.0, 40.0] {
            let back = tau_of_s(0.7, s_of_tau(0.7, tau).unwrap()).unwrap();
            assert!((back - tau).abs() <= 1e-14 * (1.0 + tau));
        }
        assert!(tau_of_s(1.0, 0.5).is_err());
        assert!(s_of_tau(1.0, -0.5).is_err());
    }

    #[test]
    fn forward_map_examples() {
        let one = constant_one();
        for s in [1.0, 1.5, 3.0, 100.0] {
            let f = forward_map(&one, 2.0, s, 1e-12).unwrap();
            assert!((f - (1.0 + 2.0 * (1.0 - 1.0 / s))).abs() < 1e-14);
        }
        let (g, _) = case3_profiles();
        assert!((forward_map(&g, 2.0, 1.0, 1e-12).unwrap() - 1.0).abs() < 1e-15);
        assert!((forward_map(&g, 2.0, 2.0, 1e-12).unwrap() - (2.0 * LN2 + 1.0) / 2.0).abs() < 1e-14);
        let at3 = (2.0 / 3.0) * (LN2 + 0.05 + 1.05 * (3.0f64 / 2.1).ln()) + 2.1 / 6.0;
        assert!((forward_map(&g, 2.0, 3.0, 1e-12).unwrap() - at3).abs() < 1e-14);
        assert!(forward_map(&g, 0.0, 3.0, 1e-12).is_err());
    }

    #[test]
    fn inverse_map_examples() {
        let one = constant_one();
        let f = forward_profile(&one, 2.0, 1e-12).unwrap();
        for s in [1.0, 2.0, 9.0] {
            assert!((inverse_map(&f, 2.0, s, 1e-12).unwrap() - 1.0).abs() < 1e-13);
            let g = inverse_map(&one, 2.0, s, 1e-12).unwrap();
            assert!((g - (1.0 - (2.0 / 3.0) * (1.0 - s.powf(-3.0)))).abs() < 1e-14);
        }
    }

    #[test]
    fn case3_closed_forms_and_continuity() {
        let (g, f) = case3_profiles();
        assert_eq!(g.value(2.0).unwrap(), 0.5);
        assert_eq!(g.value(2.1).unwrap(), 0.5);
        assert!((g.value(2.0 - 1e-12).unwrap() - 0.5).abs() < 1e-11);
        assert!((g.value(2.1 - 1e-12).unwrap() - 0.5).abs() < 1e-11);
        for b in [2.0, 2.1] {
            let jump = f.value(b).unwrap() - f.value(b - 1e-13).unwrap();
            assert!(jump.abs() < 1e-11);
        }
        let mapped = forward_profile(&g, 2.0, 1e-12).unwrap();
        for s in linspace(1.0, 10.0, 1000) {
            assert!((mapped.value(s).unwrap() - f.value(s).unwrap()).abs() < 1e-12);
        }
        let peak1 = 0.5f64.exp();
        assert!((f.value(peak1).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!(f.derivative(peak1).unwrap().abs() < 1e-15);
        assert!((f.value(2.1).unwrap() - (1.5 + (2.0 * LN2 - 2.0) / 2.1)).abs() < 1e-14);
        assert!((f.value(2.1).unwrap() - 1.2078).abs() < 1e-4);
        let (left, right) = f.derivative_sides(2.1).unwrap();
        assert!(left > 0.0 && right < 0.0);
    }

    #[test]
    fn case3_has_two_peaks() {
        let (_, f) = case3_profiles();
        let nodes: Vec<f64> = (0..=9000).map(|k| 1.0 + k as f64 * 1e-3).collect();
        let values = f.sample(&nodes).unwrap();
        let peaks = detect_peaks_in(values.nodes(), values.values());
        assert_eq!(peaks.len(), 2);
        assert!((peaks[0].location - 0.5f64.exp()).abs() <= 1e-3);
        assert!((peaks[1].location - 2.1).abs() <= 1e-3);
    }

    #[test]
    fn round_trips_on_builtin_profiles() {
        let (g, f) = case3_profiles();
        let nodes = linspace(1.0, 20.0, 1000);
        let g_back = inverse_profile(&forward_profile(&g, 2.0, 1e-12).unwrap(), 2.0, 1e-12).unwrap();
        let f_back = forward_profile(&inverse_profile(&f, 2.0, 1e-12).unwrap(), 2.0, 1e-12).unwrap();
        let g_from_f = inverse_profile(&f, 2.0, 1e-12).unwrap();
        for &s in &nodes {
            assert!((g_back.value(s).unwrap() - g.value(s).unwrap()).abs() < 1e-8);
            assert!((f_back.value(s).unwrap() - f.value(s).unwrap()).abs() < 1e-8);
            assert!((g_from_f.value(s).unwrap() - g.value(s).unwrap()).abs() < 1e-8);
            assert!((inverse_map(&f, 2.0, s, 1e-12).unwrap() - g.value(s).unwrap()).abs() < 1e-8);
        }
    }

    fn bumpy_profile() -> SProfile {
        let excess: Excess = Arc::new(|s| Ok(0.3 * bump_phi1((s - 2.0) / 0.5)));
        let slope: Excess = Arc::new(|s| Ok(0.3 * bump_phi1_prime((s - 2.0) / 0.5) / 0.5));
        SProfile::piecewise(
            "bumpy",
            vec![
                (1.0, Shape::Terms(vec![Term::monomial(1.0, -1.0)])),
                (1.5, Shape::smooth(vec![Term::monomial(1.0, -1.0)], excess, Some(slope))),
                (2.5, Shape::Terms(vec![Term::monomial(1.0, -1.0)])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn smooth_segments_round_trip() {
        let g = bumpy_profile();
        let f = forward_profile(&g, 1.5, 1e-12).unwrap();
        let back = inverse_profile(&f, 1.5, 1e-12).unwrap();
        for s in linspace(1.0, 6.0, 300) {
            assert!((back.value(s).unwrap() - g.value(s).unwrap()).abs() < 1e-8, "s = {s}");
            let direct = forward_map(&g, 1.5, s, 1e-12).unwrap();
            assert!((f.value(s).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn sampled_profiles_round_trip_and_csv() {
        let nodes = geomspace(1.0, 30.0, 400);
        let sampled = GridFunction::sample(nodes.clone(), |s| 1.0 / s).unwrap();
        let g = SProfile::from_samples("sampled", sampled, 1.0).unwrap();
        assert!((g.value(60.0).unwrap() - 1.0 / 60.0).abs() < 1e-12);
        let f = forward_profile(&g, 2.0, 1e-12).unwrap();
        let back = inverse_profile(&f, 2.0, 1e-10).unwrap();
        for s in linspace(1.0, 40.0, 100) {
            assert!((back.value(s).unwrap() - g.value(s).unwrap()).abs() < 1e-8);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        save_profile_csv(&g, &nodes, &path).unwrap();
        let loaded = load_profile_csv(&path, 1.0).unwrap();
        for s in [1.0, 2.5, 29.0, 100.0] {
            assert!((loaded.value(s).unwrap() - g.value(s).unwrap()).abs() < 1e-15);
        }
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "s,value\n2,1\n3,0.5\n").unwrap();
        assert!(load_profile_csv(&bad, 1.0).is_err());
    }

    #[test]
    fn g_prime_examples() {
        let one = constant_one();
        for s in [1.0, 1.3, 4.0] {
            let d = g_prime_of_f(&one, 2.0, s, 1e-9).unwrap();
            assert!((d.right() + 2.0 * s.powf(-4.0)).abs() < 1e-14);
        }
        let (_, f) = case3_profiles();
        match g_prime_of_f(&f, 2.0, 2.1, 1e-9).unwrap() {
            Derivative::Kink { left, right } => {
                assert_eq!(left, 0.0);
                assert!((right + 1.05 / (2.1 * 2.1)).abs() < 1e-12);
            }
            other => panic!("expected a kink, got {other:?}"),
        }
        assert_eq!(g_prime_of_f(&f, 2.0, 2.05, 1e-9).unwrap(), Derivative::Smooth(0.0));
    }

    #[test]
    fn g_prime_matches_difference_of_inverse() {
        let (g, f) = case3_profiles();
        let bumpy = bumpy_profile();
        let bumpy_f = forward_profile(&bumpy, 2.0, 1e-12).unwrap();
        for (profile, kernel) in [(&f, &g), (&bumpy_f, &bumpy)] {
            for s in [1.3, 1.8, 1.95, 2.05, 2.3, 3.7, 8.0] {
                let h = 1e-5;
                let fd = (inverse_map(profile, 2.0, s + h, 1e-13).unwrap()
                    - inverse_map(profile, 2.0, s - h, 1e-13).unwrap())
                    / (2.0 * h);
                let exact = g_prime_of_f(profile, 2.0, s, 1e-9).unwrap().right();
                assert!((fd - exact).abs() < 1e-6, "s = {s}: {fd} vs {exact}");
                let direct = kernel.derivative(s).unwrap();
                assert!((direct - exact).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lower_decay_examples() {
        let (g, f) = case3_profiles();
        let grid = geomspace(2.0, 1e4, 500);
        let report = lower_decay_check(&f, &g, 2.0, &grid, 1e-12).unwrap();
        assert!((report.bound - 2.0 * LN2).abs() < 1e-14);
        assert!(report.holds);
        let halved = lower_decay_check(&f.scaled(0.5), &g, 2.0, &grid, 1e-12).unwrap();
        assert!(!halved.holds);
        let one = constant_one();
        let fo = forward_profile(&one, 3.0, 1e-12).unwrap();
        assert!(lower_decay_check(&fo, &one, 3.0, &grid, 1e-12).unwrap().bound > 0.0);
        assert!(lower_decay_check(&f, &g, 2.0, &[1.5], 1e-12).is_err());
    }

    #[test]
    fn alpha0_examples() {
        let reciprocal = SProfile::from_terms("1/s", vec![(1.0, vec![Term::monomial(1.0, -1.0)])]).unwrap();
        let a = alpha0_threshold(&reciprocal, 100.0, 1e-12).unwrap();
        assert!((a - std::f64::consts::E).abs() < 1e-10);
        let (g, _) = case3_profiles();
        let a3 = alpha0_threshold(&g, 100.0, 1e-12).unwrap();
        let expected = 2.1 * ((1.0 - LN2) / 1.05).exp();
        assert!(a3 <= 10.0 && (a3 - expected).abs() < 1e-10);
        assert!(alpha0_threshold(&constant_one(), 100.0, 1e-12).is_err());
        assert!(alpha0_threshold(&reciprocal, 2.0, 1e-12).is_err());
    }

    #[test]
    fn kernel_validation_on_samples() {
        let (g, f) = case3_profiles();
        g.validate_kernel(&unit_grid()).unwrap();
        assert!(f.validate_kernel(&unit_grid()).is_err());
        assert!(constant_one().validate_kernel(&unit_grid()).is_err());
        assert!(builtin_profile("case3-g").is_ok());
        assert!(builtin_profile("case4").is_err());
    }

    #[test]
    fn excess_keeps_tiny_bumps() {
        let tiny: Excess = Arc::new(|s| Ok(1e-120 * bump_phi1(s - 3.0)));
        let p = SProfile::piecewise(
            "tiny",
            vec![
                (1.0, Shape::Terms(vec![Term::constant(1.0)])),
                (2.0, Shape::smooth(vec![Term::constant(1.0)], tiny, None)),
                (4.0, Shape::Terms(vec![Term::constant(1.0)])),
            ],
        )
        .unwrap();
        assert_eq!(p.value(3.0).unwrap(), 1.0);
        assert_eq!(p.excess_over(3.0, 1.0).unwrap(), 1e-120 * (-1.0f64).exp());
    }

    proptest! {
        #[test]
        fn forward_of_power_profiles_is_positive_and_bounded_below(
            beta in 0.1f64..5.0,
            power in -1.0f64..-0.05,
            s in 1.0f64..1e3,
        ) {
            let g = SProfile::from_terms("pow", vec![(1.0, vec![Term::monomial(1.0, power)])]).unwrap();
            let f = forward_map(&g, beta, s, 1e-12).unwrap();
            let lower = beta / s * g.weighted_integral(0.0, s, 1e-12).unwrap();
            prop_assert!(f > lower && lower >= 0.0);
            let back = inverse_map(&forward_profile(&g, beta, 1e-12).unwrap(), beta, s, 1e-12).unwrap();
            prop_assert!((back - g.value(s).unwrap()).abs() < 1e-8);
        }
    }
}
