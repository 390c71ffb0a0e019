//! Constructions of infected profiles `I(s)` with several peaks whose
//! induced kernel `g` is still positive and strictly decreasing, plus the
//! verification suite that measures every required inequality on a grid.
//!
//! The kernel induced by `I` has derivative
//! `g'(s) = (s^{-β} ∫₁^s I(x) x^β dx)''`, so feasibility of a profile is the
//! condition `g' < 0` everywhere.

use crate::error::{Result, SirError};
use crate::numerics::{
    bump_phi0, bump_phi1, bump_phi1_prime, detect_peaks_in, flat_runs, gauss_legendre, geomspace, integrate_adaptive,
    linspace,
};
use crate::s_domain::{g_prime_of_f, inverse_profile, Excess, SProfile, Segment, Shape, Term, PROFILE_TOL};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// Default `η0` for rough profiles; puts `S̄0` just past the last peak.
pub const DEFAULT_ROUGH_ETA: f64 = 0.01;
/// Default tail exponent for rough profiles.
pub const DEFAULT_ROUGH_THETA: f64 = 0.5;

const MAX_HALVINGS: usize = 60;
const MAX_ETA_HALVINGS: usize = 20;
const KINK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PeakMode {
    Rough,
    Precise,
    InfiniteTruncated,
}

/// The requested peak geometry. Unset options are derived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakSpec {
    pub beta: f64,
    pub mode: PeakMode,
    pub m0: usize,
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    pub eta0: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub locations: Vec<f64>,
    pub delta0: Option<f64>,
    pub accumulation: Option<f64>,
    pub truncation: usize,
}

impl PeakSpec {
    pub fn rough(beta: f64, m0: usize) -> Self {
        Self {
            beta,
            mode: PeakMode::Rough,
            m0,
            theta: None,
            epsilon: None,
            eta0: None,
            window: None,
            locations: Vec::new(),
            delta0: None,
            accumulation: None,
            truncation: 0,
        }
    }

    pub fn precise(beta: f64, window: (f64, f64), locations: Vec<f64>) -> Self {
        Self {
            mode: PeakMode::Precise,
            m0: locations.len(),
            window: Some(window),
            locations,
            ..Self::rough(beta, 0)
        }
    }

    pub fn infinite(beta: f64, window: (f64, f64), accumulation: f64, truncation: usize) -> Self {
        Self {
            mode: PeakMode::InfiniteTruncated,
            m0: truncation,
            window: Some(window),
            accumulation: Some(accumulation),
            truncation,
            ..Self::rough(beta, 0)
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn with_eta0(mut self, eta0: f64) -> Self {
        self.eta0 = Some(eta0);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn with_delta0(mut self, delta0: f64) -> Self {
        self.delta0 = Some(delta0);
        self
    }

    /// `S̄0 = (2 m0 + 1/4 + η0) π`, so that the maxima `(2k + 1/4)π`,
    /// `k = 1..m0`, of `e^{-s} sin s` all lie in `(1, S̄0)`.
    pub fn rough_sbar(&self) -> f64 {
        (2.0 * self.m0 as f64 + 0.25 + self.eta0.unwrap_or(DEFAULT_ROUGH_ETA)) * PI
    }

    fn window_bounds(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self
            .window
            .ok_or_else(|| SirError::invalid("this mode needs a window (M1, M2)"))?;
        if !(lo > 1.0 && hi > lo && hi.is_finite()) {
            return Err(SirError::invalid(format!("window must satisfy 1 < M1 < M2, got ({lo}, {hi})")));
        }
        Ok((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(SirError::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.m0 == 0 {
            return Err(SirError::invalid("at least one peak is required"));
        }
        if let Some(theta) = self.theta {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(SirError::invalid(format!("theta must lie in (0, 1], got {theta}")));
            }
        }
        for (name, v) in [("epsilon", self.epsilon), ("eta0", self.eta0), ("delta0", self.delta0)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(SirError::invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        match self.mode {
            PeakMode::Rough => Ok(()),
            PeakMode::Precise => {
                let (lo, hi) = self.window_bounds()?;
                if self.locations.len() != self.m0 {
                    return Err(SirError::invalid("m0 must equal the number of peak locations"));
                }
                if self.locations.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(SirError::invalid("peak locations must be strictly increasing"));
                }
                if self.locations.iter().any(|&s| !(s > lo && s < hi)) {
                    return Err(SirError::invalid(format!("peak locations must lie in ({lo}, {hi})")));
                }
                let sentinels = self.precise_points()?;
                let gap = min_gap(&sentinels);
                if !(gap > 0.0) {
                    return Err(SirError::invalid("last peak must lie below M2 - eta0"));
                }
                if let Some(d) = self.delta0 {
                    if !(d < gap) {
                        return Err(SirError::invalid(format!("delta0 = {d} must be below the minimum gap {gap}")));
                    }
                }
                Ok(())
            }
            PeakMode::InfiniteTruncated => {
                let (lo, hi) = self.window_bounds()?;
                let acc = self
                    .accumulation
                    .ok_or_else(|| SirError::invalid("infinite mode needs an accumulation point"))?;
                if !(acc > lo && acc < hi) {
                    return Err(SirError::invalid(format!("accumulation point must lie in ({lo}, {hi})")));
                }
                if self.truncation == 0 {
                    return Err(SirError::invalid("truncation count N must be at least 1"));
                }
                if acc >= hi - self.precise_eta()? {
                    return Err(SirError::invalid("accumulation point must lie below M2 - eta0"));
                }
                Ok(())
            }
        }
    }

    fn precise_eta(&self) -> Result<f64> {
        if let Some(eta) = self.eta0 {
            return Ok(eta);
        }
        let (_, hi) = self.window_bounds()?;
        let last = match self.mode {
            PeakMode::InfiniteTruncated => self.accumulation.unwrap_or(hi),
            _ => self.locations.last().copied().unwrap_or(hi),
        };
        Ok((0.25 * (hi - last)).min(1.0))
    }

    /// Sentinels and peaks `M1 < s_1 < … < s_m0 < M2 - η0`.
    fn precise_points(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.window_bounds()?;
        let mut pts = vec![lo];
        pts.extend(&self.locations);
        pts.push(hi - self.precise_eta()?);
        Ok(pts)
    }
}

fn min_gap(points: &[f64]) -> f64 {
    points.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Largest `θ` allowed by `(θ/(1-θ)) (1/β) S̄0^{β+1} ≤ 1/(β+1)`.
pub fn theta0_bound(beta: f64, sbar: f64) -> f64 {
    let r = beta / ((beta + 1.0) * sbar.powf(beta + 1.0));
    r / (1.0 + r)
}

/// Verification grid layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub s_max: f64,
    pub nodes: usize,
    /// Extra nodes placed uniformly inside each numerically evaluated segment.
    pub cluster_nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            s_max: 1e4,
            nodes: 10_000,
            cluster_nodes: 100,
        }
    }
}

impl GridSpec {
    /// Geometric nodes on `[1, s_max]`, clusters inside numeric segments,
    /// breakpoints and markers.
    pub fn build(&self, profile: &SProfile) -> Vec<f64> {
        let mut nodes = geomspace(1.0, self.s_max, self.nodes.max(2));
        for (a, b) in profile.numeric_supports() {
            if a < self.s_max {
                nodes.extend(linspace(a, b.min(self.s_max), self.cluster_nodes + 1));
            }
        }
        nodes.extend(profile.breakpoints().into_iter().filter(|&b| b <= self.s_max));
        nodes.extend(profile.markers().iter().copied().filter(|&m| m <= self.s_max));
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        nodes
    }
}

/// Where a profile's interesting structure ends.
fn last_feature(profile: &SProfile) -> f64 {
    profile
        .breakpoints()
        .into_iter()
        .chain(profile.markers().iter().copied())
        .fold(1.0, f64::max)
}

/// A detected peak, with the height measured on the profile itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakInfo {
    pub location: f64,
    pub height: f64,
    /// `height - 1`, kept at full precision for tiny bumps.
    pub excess: f64,
    pub flat: bool,
}

/// Measured outcome of every check on a profile. Pass criteria are applied
/// by callers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Largest sampled `g'` (the larger one-sided value at kinks); the
    /// inequality holds when this is negative.
    pub inequality_margin: f64,
    pub g_positive: bool,
    /// Largest sampled difference quotient of `g`.
    pub g_monotone_margin: f64,
    pub peaks_found: Vec<PeakInfo>,
    /// First node after which every sampled difference of `I` is negative.
    pub tail_monotone_from: f64,
    pub flat_runs_beyond_tail: usize,
    /// Least-squares slope of `ln I` against `ln s` over the last decade.
    pub decay_exponent_fit: f64,
    /// `max |I'(s)| s^{1+θ}` beyond the last feature, when `θ` is known.
    pub scaled_slope_bound: Option<f64>,
    pub grid_nodes: usize,
    pub kinks: usize,
}

impl VerificationReport {
    /// Every feasibility check of a constructed profile.
    pub fn feasible(&self) -> bool {
        self.inequality_margin < 0.0
            && self.g_positive
            && self.g_monotone_margin < 0.0
            && self.tail_monotone_from.is_finite()
            && self.flat_runs_beyond_tail == 0
    }
}

/// Sampled `g'` induced by `profile` (larger side at kinks) and the number
/// of kinks met.
pub fn inequality_values(profile: &SProfile, beta: f64, nodes: &[f64]) -> Result<(Vec<f64>, usize)> {
    let mut kinks = 0;
    let values = nodes
        .iter()
        .map(|&s| {
            let d = g_prime_of_f(profile, beta, s, KINK_TOL)?;
            kinks += d.is_kink() as usize;
            Ok(d.max())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((values, kinks))
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Fills a [`VerificationReport`] for `profile` on the grid described by `grid`.
pub fn verify_profile(profile: &SProfile, beta: f64, grid: &GridSpec) -> Result<VerificationReport> {
    let feature = last_feature(profile);
    if grid.s_max < 10.0 * feature {
        return Err(SirError::invalid(format!(
            "grid s_max = {} must be at least 10x the last feature at {feature}",
            grid.s_max
        )));
    }
    let nodes = grid.build(profile);
    let (gp, kinks) = inequality_values(profile, beta, &nodes)?;

    let g = inverse_profile(profile, beta, PROFILE_TOL)?;
    let g_vals = g.sample(&nodes)?;
    let gv = g_vals.values();
    let g_positive = gv.iter().all(|&v| v > 0.0);
    let g_monotone_margin = nodes
        .windows(2)
        .zip(gv.windows(2))
        .map(|(x, y)| {
            let dy = y[1] - y[0];
            if dy.abs() <= 64.0 * f64::EPSILON * y[0].abs().max(y[1].abs()) {
                0.0
            } else {
                dy / (x[1] - x[0])
            }
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let excess = profile.sample_excess(&nodes, 1.0)?;
    let peaks_found = detect_peaks_in(&nodes, &excess)
        .into_iter()
        .map(|p| {
            Ok(PeakInfo {
                location: p.location,
                height: profile.value(p.location)?,
                excess: p.height,
                flat: p.flat,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let values = profile.sample(&nodes)?;
    let iv = values.values();
    let tail_start = match iv.windows(2).rposition(|w| w[1] >= w[0]) {
        None => Some(0),
        Some(k) if k + 2 < nodes.len() => Some(k + 1),
        Some(_) => None,
    };
    let tail_monotone_from = tail_start.map_or(f64::INFINITY, |k| nodes[k]);
    let flat_runs_beyond_tail = match tail_start {
        Some(k) => flat_runs(&iv[k..]).len(),
        None => flat_runs(iv).iter().filter(|r| r.1 + 1 == iv.len()).count(),
    };

    let fit_from = grid.s_max / 10.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = nodes
        .iter()
        .zip(iv)
        .filter(|(s, v)| **s >= fit_from && **v > 0.0)
        .map(|(s, v)| (s.ln(), v.ln()))
        .unzip();
    let decay_exponent_fit = least_squares_slope(&xs, &ys);

    let scaled_slope_bound = match profile.tail_exponent() {
        Some(theta) => {
            let mut worst: f64 = 0.0;
            for &s in nodes.iter().filter(|&&s| s > feature) {
                let (l, r) = profile.derivative_sides(s)?;
                worst = worst.max(l.abs().max(r.abs()) * s.powf(1.0 + theta));
            }
            Some(worst)
        }
        None => None,
    };

    Ok(VerificationReport {
        inequality_margin: max_of(&gp),
        g_positive,
        g_monotone_margin,
        peaks_found,
        tail_monotone_from,
        flat_runs_beyond_tail,
        decay_exponent_fit,
        scaled_slope_bound,
        grid_nodes: nodes.len(),
        kinks,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Parameters actually used by a construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionSummary {
    pub mode: PeakMode,
    pub beta: f64,
    pub sbar: f64,
    pub theta: f64,
    pub eta0: f64,
    pub epsilon: Option<f64>,
    pub delta0: Option<f64>,
    /// `∫₁^{S̄0} s^β e^{-s} sin s ds` (rough mode).
    pub c1_integral: Option<f64>,
    /// Measured `min (-g'(s) s^{θ+1})` over the grid (base profile).
    pub c1_measured: Option<f64>,
    pub peak_locations: Vec<f64>,
    pub bump_widths: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// `Σ_{j>N} c_j δ_j^{-2}` and its base-10 logarithm (infinite mode).
    pub truncation_bound: Option<f64>,
    pub truncation_bound_log10: Option<f64>,
    pub attempts: usize,
    pub worst_margin: f64,
}

impl ConstructionSummary {
    fn new(mode: PeakMode, beta: f64, sbar: f64, theta: f64, eta0: f64) -> Self {
        Self {
            mode,
            beta,
            sbar,
            theta,
            eta0,
            epsilon: None,
            delta0: None,
            c1_integral: None,
            c1_measured: None,
            peak_locations: Vec::new(),
            bump_widths: Vec::new(),
            amplitudes: Vec::new(),
            truncation_bound: None,
            truncation_bound_log10: None,
            attempts: 0,
            worst_margin: f64::NAN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Constructed {
    pub profile: SProfile,
    pub summary: ConstructionSummary,
}

fn verification_nodes(profile: &SProfile) -> Vec<f64> {
    let feature = last_feature(profile);
    GridSpec {
        s_max: GridSpec::default().s_max.max(10.0 * feature),
        ..GridSpec::default()
    }
    .build(profile)
}

fn bump_shape(center: f64, width: f64, amplitude: f64) -> Shape {
    let excess: Excess = Arc::new(move |s| Ok(amplitude * bump_phi1((s - center) / width)));
    let slope: Excess = Arc::new(move |s| Ok(amplitude * bump_phi1_prime((s - center) / width) / width));
    Shape::smooth(vec![Term::constant(1.0)], excess, Some(slope))
}

/// Rough control: `I = 1 + ε e^{-s} sin s` on `[1, S̄0]`, then
/// `α1 (S̄0/s)^θ` with `α1 = I(S̄0)`.
///
/// `ε` starts from the smaller of the explicit bound `1/(2(β+1)(|C1|+1))`
/// and a measured bound keeping the perturbation of `g'` below
/// `(β/2) s^{-β-2}` on `[1, S̄0]`, and is halved until the profile verifies.
pub fn construct_rough(spec: &PeakSpec) -> Result<Constructed> {
    if spec.mode != PeakMode::Rough {
        return Err(SirError::invalid("construct_rough needs a rough spec"));
    }
    spec.validate()?;
    let beta = spec.beta;
    let sbar = spec.rough_sbar();
    let theta = spec.theta.unwrap_or(DEFAULT_ROUGH_THETA);
    let wave = |s: f64| (-s).exp() * s.sin();
    let wave_slope = |s: f64| (-s).exp() * (s.cos() - s.sin());
    let c1 = integrate_adaptive(|s| s.powf(beta) * wave(s), 1.0, sbar, 1e-13)?;
    let explicit = 1.0 / (2.0 * (beta + 1.0) * (c1.abs() + 1.0));

    // perturbation of g' per unit ε
    let probe = linspace(1.0, sbar, 2001);
    let mut running = 0.0;
    let mut measured = f64::INFINITY;
    for (k, &s) in probe.iter().enumerate() {
        if k > 0 {
            running += integrate_adaptive(|x| x.powf(beta) * wave(x), probe[k - 1], s, 1e-14)?;
        }
        let shift = beta * (beta + 1.0) * s.powf(-beta - 2.0) * running - beta * wave(s) / s + wave_slope(s);
        if shift.abs() > 0.0 {
            measured = measured.min(0.5 * beta * s.powf(-beta - 2.0) / shift.abs());
        }
    }
    if !(measured > 0.0) {
        return Err(SirError::Construction {
            reason: "epsilon auto-bound is not positive".into(),
            margin: measured,
        });
    }
    let start = spec.epsilon.unwrap_or(measured.min(explicit));
    let peaks: Vec<f64> = (1..=spec.m0).map(|k| (2.0 * k as f64 + 0.25) * PI).collect();

    let mut epsilon = start;
    let mut worst = f64::NAN;
    for attempt in 1..=MAX_HALVINGS {
        let profile = rough_profile(beta, sbar, theta, epsilon, &peaks)?;
        let nodes = verification_nodes(&profile);
        let (gp, _) = inequality_values(&profile, beta, &nodes)?;
        worst = max_of(&gp);
        let excess = profile.sample_excess(&nodes, 1.0)?;
        let count = detect_peaks_in(&nodes, &excess).len();
        if worst < 0.0 && count == spec.m0 {
            let mut summary = ConstructionSummary::new(PeakMode::Rough, beta, sbar, theta, spec.eta0.unwrap_or(DEFAULT_ROUGH_ETA));
            summary.epsilon = Some(epsilon);
            summary.c1_integral = Some(c1);
            summary.peak_locations = peaks;
            summary.attempts = attempt;
            summary.worst_margin = worst;
            return Ok(Constructed { profile, summary });
        }
        epsilon *= 0.5;
    }
    Err(SirError::Construction {
        reason: format!("rough profile did not verify after {MAX_HALVINGS} halvings of epsilon"),
        margin: worst,
    })
}

fn rough_profile(beta: f64, sbar: f64, theta: f64, epsilon: f64, peaks: &[f64]) -> Result<SProfile> {
    let excess: Excess = Arc::new(move |s| Ok(epsilon * (-s).exp() * s.sin()));
    let slope: Excess = Arc::new(move |s| Ok(epsilon * (-s).exp() * (s.cos() - s.sin())));
    let alpha1 = 1.0 + epsilon * (-sbar).exp() * sbar.sin();
    let profile = SProfile::piecewise(
        "rough",
        vec![
            (1.0, Shape::smooth(vec![Term::constant(1.0)], excess, Some(slope))),
            (sbar, Shape::Terms(vec![Term::monomial(alpha1 * sbar.powf(theta), -theta)])),
        ],
    )?;
    Ok(profile
        .with_tail_exponent(theta)
        .with_beta(beta)
        .with_markers(peaks.to_vec()))
}

/// The unmollified base `f0`: 1 on `[1, S̄0]`, then
/// `(1/(1-θ)) ((S̄0/s)^θ - θ S̄0/s)`. It is C¹ at `S̄0`.
pub fn base_f0(sbar: f64, theta: f64) -> Result<SProfile> {
    SProfile::from_terms(
        "base-f0",
        vec![(1.0, vec![Term::constant(1.0)]), (sbar, base_tail_terms(sbar, theta))],
    )
    .map(|p| p.with_tail_exponent(theta))
}

fn base_tail_terms(sbar: f64, theta: f64) -> Vec<Term> {
    let k = 1.0 / (1.0 - theta);
    vec![
        Term::monomial(k * sbar.powf(theta), -theta),
        Term::monomial(-k * theta * sbar, -1.0),
    ]
}

/// Integral of the plateau bump over `[-1, 1]`.
fn phi0_mass() -> f64 {
    gauss_legendre(|x| Ok(bump_phi0(x)), -1.0, 1.0, 96).unwrap_or(f64::NAN)
}

/// Mollified base `f`: ≡1 on `[1, S̄0 - η0]`, strictly decreasing after,
/// equal to `f0` beyond `S̄0 + η0`.
///
/// On the patch `f' = f0'(1 - φ0) - a φ0` with `a > 0` fixed by
/// `a η0 ∫φ0 = -∫ f0' φ0((s - S̄0)/η0) ds`, which makes `f` continuous at
/// `S̄0 + η0`. `η0` is halved until the strengthened inequality verifies.
pub fn construct_base_f(beta: f64, sbar: f64, theta: f64, eta0: f64) -> Result<Constructed> {
    if !(beta > 0.0) || !(sbar > 1.0) {
        return Err(SirError::invalid("base profile needs beta > 0 and S̄0 > 1"));
    }
    let bound = theta0_bound(beta, sbar);
    if !(theta > 0.0 && theta <= bound) {
        return Err(SirError::invalid(format!(
            "theta = {theta} violates the bound theta <= theta0 = {bound:e} for beta = {beta}, S̄0 = {sbar}"
        )));
    }
    if !(eta0 > 0.0) {
        return Err(SirError::invalid(format!("eta0 must be positive, got {eta0}")));
    }
    let mut eta = eta0.min(0.5 * (sbar - 1.0));
    let mut worst = f64::NAN;
    for attempt in 1..=MAX_ETA_HALVINGS {
        let profile = mollified_base(beta, sbar, theta, eta)?;
        let nodes = verification_nodes(&profile);
        let (gp, _) = inequality_values(&profile, beta, &nodes)?;
        worst = max_of(&gp);
        // f - 1 underflows right after S̄0 - η0, so monotonicity is read off f'
        let mut decreasing = true;
        for &s in nodes.iter().filter(|&&s| s > sbar - eta) {
            let (l, r) = profile.derivative_sides(s)?;
            decreasing &= l.max(r) < 0.0;
        }
        if worst < 0.0 && decreasing {
            let c1 = nodes
                .iter()
                .zip(&gp)
                .map(|(s, d)| -d * s.powf(theta + 1.0))
                .fold(f64::INFINITY, f64::min);
            let mut summary = ConstructionSummary::new(PeakMode::Precise, beta, sbar, theta, eta);
            summary.c1_measured = Some(c1);
            summary.attempts = attempt;
            summary.worst_margin = worst;
            return Ok(Constructed { profile, summary });
        }
        eta *= 0.5;
    }
    Err(SirError::Construction {
        reason: format!("base profile did not verify after {MAX_ETA_HALVINGS} halvings of eta0"),
        margin: worst,
    })
}

fn mollified_base(beta: f64, sbar: f64, theta: f64, eta: f64) -> Result<SProfile> {
    let tail = base_tail_terms(sbar, theta);
    let k = 1.0 / (1.0 - theta);
    let f0_slope = move |s: f64| {
        if s <= sbar {
            0.0
        } else {
            k * theta * (sbar / (s * s) - sbar.powf(theta) * s.powf(-theta - 1.0))
        }
    };
    let weighted = gauss_legendre(
        |s| Ok(f0_slope(s) * bump_phi0((s - sbar) / eta)),
        sbar,
        sbar + eta,
        96,
    )?;
    let a = -weighted / (eta * phi0_mass());
    if !(a > 0.0) {
        return Err(SirError::Construction {
            reason: "mollifier constant a is not positive".into(),
            margin: a,
        });
    }
    let h = Arc::new(move |s: f64| {
        let w = bump_phi0((s - sbar) / eta);
        f0_slope(s) * (1.0 - w) - a * w
    });
    let start = sbar - eta;
    let h_int = h.clone();
    let excess: Excess = Arc::new(move |s| {
        let left = gauss_legendre(|x| Ok(h_int(x)), start, s.min(sbar), 32)?;
        let right = if s > sbar {
            gauss_legendre(|x| Ok(h_int(x)), sbar, s, 32)?
        } else {
            0.0
        };
        Ok(left + right)
    });
    let h_slope = h.clone();
    let slope: Excess = Arc::new(move |s| Ok(h_slope(s)));
    let patch = Shape::Smooth {
        base: vec![Term::constant(1.0)],
        excess,
        slope: Some(slope),
        breaks: Arc::new(vec![sbar]),
    };
    let profile = SProfile::piecewise(
        "base-f",
        vec![
            (1.0, Shape::Terms(vec![Term::constant(1.0)])),
            (start, patch),
            (sbar + eta, Shape::Terms(tail)),
        ],
    )?;
    Ok(profile.with_tail_exponent(theta).with_beta(beta))
}

fn tail_theta(spec: &PeakSpec, sbar: f64) -> Result<f64> {
    let bound = theta0_bound(spec.beta, sbar);
    match spec.theta {
        Some(theta) if theta > bound => Err(SirError::invalid(format!(
            "theta = {theta} exceeds theta0 = {bound:e} for beta = {}, M2 = {sbar}",
            spec.beta
        ))),
        Some(theta) => Ok(theta),
        None => Ok(0.5 * bound),
    }
}

/// Replaces the plateau `[1, S̄0 - η0]` of a base profile with flat pieces
/// and the given bumps `(center, width, amplitude)`.
fn with_bumps(base: &SProfile, bumps: &[(f64, f64, f64)], name: &str) -> Result<SProfile> {
    let mut pieces: Vec<(f64, Shape)> = vec![(1.0, Shape::Terms(vec![Term::constant(1.0)]))];
    for &(center, width, amplitude) in bumps {
        pieces.push((center - width, bump_shape(center, width, amplitude)));
        pieces.push((center + width, Shape::Terms(vec![Term::constant(1.0)])));
    }
    for Segment { start, shape, .. } in base.segments().iter().skip(1) {
        pieces.push((*start, shape.clone()));
    }
    let mut profile = SProfile::piecewise(name.to_string(), pieces)?;
    if let Some(theta) = base.tail_exponent() {
        profile = profile.with_tail_exponent(theta);
    }
    Ok(profile.with_markers(bumps.iter().map(|b| b.0).collect()))
}

/// Precise control: `I = f + Σ δ0³ φ1((s - s_j)/δ0)` with the mollified
/// base `f` built at `S̄0 = M2`. `δ0` starts at a quarter of the minimum
/// gap and is halved until the strict inequality verifies.
pub fn construct_precise(spec: &PeakSpec) -> Result<Constructed> {
    if spec.mode != PeakMode::Precise {
        return Err(SirError::invalid("construct_precise needs a precise spec"));
    }
    spec.validate()?;
    let (_, m2) = spec.window_bounds()?;
    let theta = tail_theta(spec, m2)?;
    let eta = spec.precise_eta()?;
    let base = construct_base_f(spec.beta, m2, theta, eta)?;
    let eta_used = base.summary.eta0;
    let mut points = spec.precise_points()?;
    *points.last_mut().expect("sentinel") = m2 - eta_used;
    let gap = min_gap(&points);
    let floor = 1e-6 * gap;

    let mut delta = spec.delta0.unwrap_or(0.25 * gap);
    let mut worst = f64::NAN;
    let mut attempt = 0;
    while delta >= floor {
        attempt += 1;
        let bumps: Vec<(f64, f64, f64)> = spec.locations.iter().map(|&s| (s, delta, delta.powi(3))).collect();
        let profile = with_bumps(&base.profile, &bumps, "precise")?.with_beta(spec.beta);
        let nodes = verification_nodes(&profile);
        let (gp, _) = inequality_values(&profile, spec.beta, &nodes)?;
        worst = max_of(&gp);
        if worst < 0.0 {
            let mut summary = base.summary.clone();
            summary.mode = PeakMode::Precise;
            summary.delta0 = Some(delta);
            summary.peak_locations = spec.locations.clone();
            summary.bump_widths = vec![delta; spec.m0];
            summary.amplitudes = vec![delta.powi(3); spec.m0];
            summary.attempts = attempt;
            summary.worst_margin = worst;
            return Ok(Constructed { profile, summary });
        }
        delta *= 0.5;
    }
    Err(SirError::Construction {
        reason: format!("delta0 fell below {floor:e} without verifying"),
        margin: worst,
    })
}

/// Bump centers `s_j = s∞ - L 2^{-j}` (with `L = s∞ - M1`), widths
/// `δ_j = ¼ min(L 2^{-j-1}, 2^{-j})` and amplitudes `c_j = e^{-2/δ_j}`.
pub fn infinite_bumps(window_lo: f64, accumulation: f64, count: usize) -> Vec<(f64, f64, f64)> {
    let reach = accumulation - window_lo;
    (1..=count)
        .map(|j| {
            let scale = 0.5f64.powi(j as i32);
            let width = 0.25 * (reach * scale * 0.5).min(scale);
            (accumulation - reach * scale, width, (-2.0 / width).exp())
        })
        .collect()
}

/// `Σ_{j>N} c_j δ_j^{-k}` evaluated in log space, as `(value, log10 value)`.
pub fn tail_sum(window_lo: f64, accumulation: f64, after: usize, power: i32) -> (f64, f64) {
    let reach = accumulation - window_lo;
    let logs: Vec<f64> = (after + 1..after + 200)
        .map(|j| {
            let scale = 0.5f64.powi(j as i32);
            let width = 0.25 * (reach * scale * 0.5).min(scale);
            -2.0 / width - power as f64 * width.ln()
        })
        .take_while(|l| l.is_finite())
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    let ln_total = top + sum.ln();
    (ln_total.exp(), ln_total / std::f64::consts::LN_10)
}

/// `N` bumps accumulating toward `s∞` on top of the mollified base.
pub fn construct_infinite_truncated(spec: &PeakSpec) -> Result<Constructed> {
    if spec.mode != PeakMode::InfiniteTruncated {
        return Err(SirError::invalid("construct_infinite_truncated needs an infinite spec"));
    }
    spec.validate()?;
    let (m1, m2) = spec.window_bounds()?;
    let acc = spec.accumulation.expect("validated");
    let bumps = infinite_bumps(m1, acc, spec.truncation);
    if let Some(&(_, width, amp)) = bumps.iter().find(|b| !(b.2 > 0.0)) {
        return Err(SirError::invalid(format!(
            "amplitude exp(-2/{width}) = {amp} underflows; lower the truncation count"
        )));
    }
    for pair in bumps.windows(2) {
        if pair[0].0 + pair[0].1 >= pair[1].0 - pair[1].1 {
            return Err(SirError::invalid("bump supports overlap"));
        }
    }
    let theta = tail_theta(spec, m2)?;
    let base = construct_base_f(spec.beta, m2, theta, spec.precise_eta()?)?;
    let last = bumps.last().expect("N >= 1");
    if bumps[0].0 - bumps[0].1 <= m1 || last.0 + last.1 >= m2 - base.summary.eta0 {
        return Err(SirError::invalid("bumps must lie inside (M1, M2 - eta0)"));
    }
    let profile = with_bumps(&base.profile, &bumps, "infinite-truncated")?.with_beta(spec.beta);
    let nodes = verification_nodes(&profile);
    let (gp, _) = inequality_values(&profile, spec.beta, &nodes)?;
    let worst = max_of(&gp);
    if !(worst < 0.0) {
        return Err(SirError::Construction {
            reason: "truncated profile violates the inequality".into(),
            margin: worst,
        });
    }
    let (bound, bound_log10) = tail_sum(m1, acc, spec.truncation, 2);
    let mut summary = base.summary.clone();
    summary.mode = PeakMode::InfiniteTruncated;
    summary.peak_locations = bumps.iter().map(|b| b.0).collect();
    summary.bump_widths = bumps.iter().map(|b| b.1).collect();
    summary.amplitudes = bumps.iter().map(|b| b.2).collect();
    summary.truncation_bound = Some(bound);
    summary.truncation_bound_log10 = Some(bound_log10);
    summary.attempts = 1;
    summary.worst_margin = worst;
    Ok(Constructed { profile, summary })
}

/// Dispatches on `spec.mode`.
pub fn construct(spec: &PeakSpec) -> Result<Constructed> {
    match spec.mode {
        PeakMode::Rough => construct_rough(spec),
        PeakMode::Precise => construct_precise(spec),
        PeakMode::InfiniteTruncated => construct_infinite_truncated(spec),
    }
}

#[derive(Debug, Clone)]
pub struct Mollified {
    pub profile: SProfile,
    /// Matching constant of the patch.
    pub a: f64,
    /// Measured `-max g'` on the patch.
    pub c0: f64,
}

/// Smooths a kernel profile `g` on `[S̄0 - δ0, S̄0 + δ0]` by replacing its
/// derivative with `h = g'(1 - φ0) - a φ0`, `a` chosen so that `h` and `g'`
/// have the same integral over the patch.
pub fn mollify_g_monotone(g: &SProfile, sbar: f64, delta0: f64) -> Result<Mollified> {
    let (lo, hi) = (sbar - delta0, sbar + delta0);
    if !(delta0 > 0.0) || lo < 1.0 {
        return Err(SirError::invalid(format!("patch [{lo}, {hi}] must lie in [1, inf)")));
    }
    let slope_at = |s: f64| -> Result<f64> {
        let (l, r) = g.derivative_sides(s)?;
        Ok(l.max(r))
    };
    for s in geomspace(1.0, 10.0 * hi, 4000) {
        let d = slope_at(s)?;
        if !(d < 0.0) {
            return Err(SirError::invalid(format!("g' = {d} is not negative at s = {s}")));
        }
    }
    let patch_nodes = linspace(lo, hi, 401);
    let c0 = -patch_nodes
        .iter()
        .chain(std::iter::once(&sbar))
        .map(|&s| slope_at(s))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(c0 > 0.0) {
        return Err(SirError::invalid("g' is not bounded away from 0 near S̄0"));
    }

    let mut breaks = vec![sbar];
    breaks.extend(g.breakpoints().into_iter().filter(|&b| b > lo && b < hi && b != sbar));
    breaks.sort_by(f64::total_cmp);
    let breaks = Arc::new(breaks);
    let panels = |a: f64, b: f64| ((64.0 * (b - a) / (hi - lo)).ceil() as usize).max(1);
    let piecewise_integral = |f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, cuts: &[f64]| -> Result<f64> {
        let mut pts = vec![a];
        pts.extend(cuts.iter().copied().filter(|&x| x > a && x < b));
        pts.push(b);
        let mut acc = 0.0;
        for w in pts.windows(2) {
            acc += gauss_legendre(f, w[0], w[1], panels(w[0], w[1]))?;
        }
        Ok(acc)
    };
    let weighted = piecewise_integral(&|s| Ok(slope_at(s)? * bump_phi0((s - sbar) / delta0)), lo, hi, &breaks)?;
    let a = -weighted / (delta0 * phi0_mass());
    if !(a > 0.0) {
        return Err(SirError::Construction {
            reason: "matching constant a is not positive".into(),
            margin: a,
        });
    }

    let g_slope = g.clone();
    let h = Arc::new(move |s: f64| -> Result<f64> {
        let (l, r) = g_slope.derivative_sides(s)?;
        let w = bump_phi0((s - sbar) / delta0);
        Ok(0.5 * (l + r) * (1.0 - w) - a * w)
    });
    let start_value = g.value(lo)?;
    let (h_int, cuts) = (h.clone(), breaks.clone());
    let excess: Excess = Arc::new(move |s| {
        let mut pts = vec![lo];
        pts.extend(cuts.iter().copied().filter(|&x| x > lo && x < s));
        pts.push(s);
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let n = ((64.0 * (w[1] - w[0]) / (hi - lo)).ceil() as usize).max(1);
            acc += gauss_legendre(|x| h_int(x), w[0], w[1], n)?;
        }
        Ok(acc)
    });
    let h_slope = h.clone();
    let patch = Shape::Smooth {
        base: vec![Term::constant(start_value)],
        excess,
        slope: Some(Arc::new(move |s| h_slope(s))),
        breaks,
    };
    let profile = splice(g, lo, hi, patch, format!("{}-mollified", g.name()))?;
    Ok(Mollified { profile, a, c0 })
}

/// `g` with `[lo, hi]` replaced by `patch`.
fn splice(g: &SProfile, lo: f64, hi: f64, patch: Shape, name: String) -> Result<SProfile> {
    let mut pieces: Vec<(f64, Shape)> = Vec::new();
    for seg in g.segments() {
        if seg.start < lo {
            pieces.push((seg.start, clip_shape(&seg.shape, seg.start, seg.end.min(lo))?));
        }
    }
    pieces.push((lo, patch));
    for seg in g.segments() {
        if seg.end > hi {
            let start = seg.start.max(hi);
            pieces.push((start, clip_shape(&seg.shape, start, seg.end)?));
        }
    }
    let mut out = SProfile::piecewise(name, pieces)?;
    if let Some(theta) = g.tail_exponent() {
        out = out.with_tail_exponent(theta);
    }
    if let Some(beta) = g.beta() {
        out = out.with_beta(beta);
    }
    Ok(out.with_markers(g.markers().to_vec()))
}

fn clip_shape(shape: &Shape, a: f64, b: f64) -> Result<Shape> {
    match shape {
        Shape::Sampled(grid) => {
            let mut nodes = vec![a];
            nodes.extend(grid.nodes().iter().copied().filter(|&x| x > a && x < b));
            nodes.push(b);
            let values = nodes.iter().map(|&x| grid.eval(x)).collect();
            Ok(Shape::Sampled(Arc::new(crate::numerics::GridFunction::new(nodes, values)?)))
        }
        other => Ok(other.clone()),
    }
}
