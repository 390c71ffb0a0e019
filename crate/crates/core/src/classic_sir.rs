//! The classic normalized SIR model `S' = -λIS`, `I' = λIS - γI`,
//! `R' = γI`: a fixed-step RK4 reference integrator, the exact relation
//! `I(S) = -S + (γ/λ) ln S + C`, the implicit time `t(S)` and the SIS
//! closed form in the rescaled clock.

use crate::error::{Result, SirError};
use crate::numerics::{find_root_bracketed, integrate_adaptive};
use serde::Serialize;

const UNDERSHOOT: f64 = 1e-12;

/// Rates and initial fractions of the normalized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SirParams {
    lambda: f64,
    gamma: f64,
    s0: f64,
    i0: f64,
    c: f64,
}

impl SirParams {
    pub fn new(lambda: f64, gamma: f64, s0: f64, i0: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SirError::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SirError::invalid(format!("gamma must be positive, got {gamma}")));
        }
        if !(s0 > 0.0 && s0 <= 1.0) {
            return Err(SirError::invalid(format!("s0 must lie in (0, 1], got {s0}")));
        }
        if !(i0 > 0.0 && i0 <= 1.0) {
            return Err(SirError::invalid(format!("i0 must lie in (0, 1], got {i0}")));
        }
        if s0 + i0 > 1.0 + 1e-12 {
            return Err(SirError::invalid(format!("s0 + i0 = {} exceeds 1", s0 + i0)));
        }
        let c = i0 + s0 - gamma / lambda * s0.ln();
        Ok(Self { lambda, gamma, s0, i0, c })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn i0(&self) -> f64 {
        self.i0
    }

    /// Integration constant `C = I0 + S0 - (γ/λ) ln S0`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Initial recovered fraction `1 - S0 - I0`.
    pub fn r0(&self) -> f64 {
        (1.0 - self.s0 - self.i0).max(0.0)
    }

    /// `λ S0 / γ`.
    pub fn reproduction_number(&self) -> f64 {
        self.lambda * self.s0 / self.gamma
    }

    /// Same initial data with new rates.
    pub fn with_rates(&self, lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, gamma, self.s0, self.i0)
    }
}

/// A sampled `(t, S, I, R)` path.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            s: Vec::with_capacity(n),
            i: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
        }
    }

    /// Appends a node with `R = 1 - S - I`.
    pub fn push(&mut self, t: f64, s: f64, i: f64) {
        self.t.push(t);
        self.s.push(s);
        self.i.push(i);
        self.r.push(1.0 - (s + i));
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_conservation_error(&self) -> f64 {
        self.s
            .iter()
            .zip(&self.i)
            .zip(&self.r)
            .map(|((s, i), r)| (s + i + r - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the trajectory invariants: increasing time, fractions in
    /// `[0, 1]`, conservation within `tol`, and `S` non-increasing.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.t.len();
        if self.s.len() != n || self.i.len() != n || self.r.len() != n {
            return Err(SirError::invalid("trajectory columns differ in length"));
        }
        if let Some(k) = self.t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SirError::invalid(format!("time not increasing at node {}", k + 1)));
        }
        for k in 0..n {
            for (name, v) in [("S", self.s[k]), ("I", self.i[k]), ("R", self.r[k])] {
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(SirError::invalid(format!("{name} = {v} outside [0,1] at node {k}")));
                }
            }
        }
        let err = self.max_conservation_error();
        if err > tol {
            return Err(SirError::invalid(format!("conservation violated by {err:e}")));
        }
        if let Some(k) = self.s.windows(2).position(|w| w[1] > w[0] + tol) {
            return Err(SirError::invalid(format!("S increased at node {}", k + 1)));
        }
        Ok(())
    }

    /// Linear interpolation of `(S, I)` at time `t` (clamped to the range).
    pub fn interpolate(&self, t: f64) -> (f64, f64) {
        let n = self.t.len();
        if t <= self.t[0] {
            return (self.s[0], self.i[0]);
        }
        if t >= self.t[n - 1] {
            return (self.s[n - 1], self.i[n - 1]);
        }
        let k = self.t.partition_point(|&x| x <= t) - 1;
        let w = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        (
            self.s[k] + w * (self.s[k + 1] - self.s[k]),
            self.i[k] + w * (self.i[k + 1] - self.i[k]),
        )
    }
}

fn rhs(p: &SirParams, s: f64, i: f64) -> (f64, f64) {
    let inf = p.lambda * i * s;
    (-inf, inf - p.gamma * i)
}

fn rk4_step(p: &SirParams, s: f64, i: f64, dt: f64) -> (f64, f64) {
    let (k1s, k1i) = rhs(p, s, i);
    let (k2s, k2i) = rhs(p, s + 0.5 * dt * k1s, i + 0.5 * dt * k1i);
    let (k3s, k3i) = rhs(p, s + 0.5 * dt * k2s, i + 0.5 * dt * k2i);
    let (k4s, k4i) = rhs(p, s + dt * k3s, i + dt * k3i);
    (
        s + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s),
        i + dt / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
    )
}

fn checked_step(p: &SirParams, s: f64, i: f64, dt: f64, t: f64) -> Result<(f64, f64)> {
    let (s, i) = rk4_step(p, s, i, dt);
    if s < -UNDERSHOOT || i < -UNDERSHOOT || !s.is_finite() || !i.is_finite() {
        return Err(SirError::StepSize(format!(
            "RK4 state left the simplex at t = {t}: S = {s}, I = {i} (dt = {dt})"
        )));
    }
    Ok((s.max(0.0), i.max(0.0)))
}

/// Classical fixed-step RK4 on `[0, t_max]`; the last step is shortened
/// to land on `t_max`.
pub fn simulate_rk4(p: &SirParams, t_max: f64, dt: f64) -> Result<Trajectory> {
    simulate_rk4_every(p, t_max, dt, 1)
}

/// RK4 keeping every `stride`-th step (plus the final node).
pub fn simulate_rk4_every(p: &SirParams, t_max: f64, dt: f64, stride: usize) -> Result<Trajectory> {
    if !(t_max > 0.0) || !(dt > 0.0) {
        return Err(SirError::invalid(format!("t_max and dt must be positive (t_max = {t_max}, dt = {dt})")));
    }
    let stride = stride.max(1);
    let steps = ((t_max / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory::with_capacity(steps / stride + 2);
    let (mut s, mut i) = (p.s0, p.i0);
    traj.push(0.0, s, i);
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * dt;
        let t = if k == steps { t_max } else { k as f64 * dt };
        (s, i) = checked_step(p, s, i, t - t_prev, t_prev)?;
        if k % stride == 0 || k == steps {
            traj.push(t, s, i);
        }
    }
    Ok(traj)
}

/// RK4 with nominal step `dt`, evaluated exactly at the sorted `times`.
///
/// Between targets the integrator takes full steps and one partial step
/// landing on the target, so every output is an RK4 value and not an
/// interpolant.
pub fn rk4_at_times(p: &SirParams, times: &[f64], dt: f64) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0) {
        return Err(SirError::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut s, mut i) = (0.0, p.s0, p.i0);
    for &target in times {
        if target < t - 1e-12 {
            return Err(SirError::invalid("rk4_at_times requires sorted non-negative times"));
        }
        while target - t > dt {
            (s, i) = checked_step(p, s, i, dt, t)?;
            t += dt;
        }
        if target > t {
            (s, i) = checked_step(p, s, i, target - t, t)?;
            t = target;
        }
        out.push((s, i));
    }
    Ok(out)
}

/// Exact relation `I(S) = -S + (γ/λ) ln S + C`.
pub fn i_of_s(p: &SirParams, s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(SirError::domain(format!("I(S) needs S > 0, got {s}")));
    }
    Ok(-s + p.gamma / p.lambda * s.ln() + p.c)
}

/// The positive root of `I(S) = 0` below `S0`: the final susceptible
/// fraction, and the lower edge of the domain of [`time_of_s`].
pub fn s_min(p: &SirParams) -> Result<f64> {
    let f = |s: f64| -s + p.gamma / p.lambda * s.ln() + p.c;
    // I is increasing on (0, γ/λ), so the root lies below min(S0, γ/λ).
    let hi = p.s0.min(p.gamma / p.lambda);
    let mut lo = 0.5 * hi;
    while f(lo) >= 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(SirError::domain("could not bracket the root of I(S) = 0"));
        }
    }
    let hi = if f(hi) > 0.0 { hi } else { p.s0 };
    find_root_bracketed(f, lo, hi, 1e-15)
}

/// Time at which `S` reaches `s`: `t = ∫_s^{S0} dσ / (λ σ I(σ))`.
///
/// Valid for `s` in `(s_min, S0]` where `I > 0`.
pub fn time_of_s(p: &SirParams, s: f64, tol: f64) -> Result<f64> {
    let lower = s_min(p)?;
    time_of_s_with_floor(p, s, lower, tol)
}

/// [`time_of_s`] with a caller-supplied `s_min`.
pub fn time_of_s_with_floor(p: &SirParams, s: f64, s_floor: f64, tol: f64) -> Result<f64> {
    if !(s > s_floor && s <= p.s0 * (1.0 + 1e-15)) {
        return Err(SirError::domain(format!(
            "time_of_s needs s in ({s_floor}, {}], got {s}",
            p.s0
        )));
    }
    if s >= p.s0 {
        return Ok(0.0);
    }
    integrate_adaptive(
        |sigma| 1.0 / (p.lambda * sigma * (-sigma + p.gamma / p.lambda * sigma.ln() + p.c)),
        s,
        p.s0,
        tol,
    )
}

/// SIS rates and initial susceptible fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SisParams {
    pub lambda: f64,
    pub gamma: f64,
    pub mu: f64,
    pub s0: f64,
}

impl SisParams {
    pub fn new(lambda: f64, gamma: f64, mu: f64, s0: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(SirError::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if !(gamma >= 0.0) || !(mu >= 0.0) {
            return Err(SirError::invalid("gamma and mu must be non-negative"));
        }
        if !(0.0..=1.0).contains(&s0) {
            return Err(SirError::invalid(format!("s0 must lie in [0, 1], got {s0}")));
        }
        Ok(Self { lambda, gamma, mu, s0 })
    }
}

/// SIS solution in the rescaled clock `dτ = Ĩ dt`:
/// `S̃(τ) = ((μ+γ)/λ)(1 - e^{-λτ}) + S̃0 e^{-λτ}`, `Ĩ = 1 - S̃`.
pub fn sis_closed_form(p: &SisParams, tau: f64) -> Result<(f64, f64)> {
    if !(tau >= 0.0) {
        return Err(SirError::domain(format!("tau must be non-negative, got {tau}")));
    }
    let k = (p.mu + p.gamma) / p.lambda;
    let decay = (-p.lambda * tau).exp();
    let s = k * (1.0 - decay) + p.s0 * decay;
    Ok((s, 1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> SirParams {
        SirParams::new(1.0, 0.5, 0.99, 0.01).unwrap()
    }

    #[test]
    fn params_validation_and_constant() {
        assert!(SirParams::new(0.0, 0.5, 0.9, 0.1).is_err());
        assert!(SirParams::new(1.0, -0.5, 0.9, 0.1).is_err());
        assert!(SirParams::new(1.0, 0.5, 0.9, 0.2).is_err());
        assert!(SirParams::new(1.0, 0.5, 0.9, 0.0).is_err());
        let p = reference();
        let c = 0.01 + 0.99 - 0.5 * 0.99f64.ln();
        assert!((p.c() - c).abs() < 1e-15);
    }

    #[test]
    fn rk4_conserves_and_stays_monotone() {
        let p = reference();
        let traj = simulate_rk4(&p, 25.0, 1e-3).unwrap();
        assert!(traj.max_conservation_error() <= 1e-9);
        traj.validate(1e-9).unwrap();
        assert!(traj.s.windows(2).all(|w| w[1] < w[0]));
        assert!(traj.i.iter().all(|&i| i > 0.0));
        let peak = traj.i.iter().cloned().fold(0.0, f64::max);
        assert!(*traj.i.last().unwrap() < peak);
        assert_eq!(*traj.t.last().unwrap(), 25.0);
    }

    #[test]
    fn rk4_tiny_infected_is_near_steady() {
        let p = SirParams::new(1.0, 0.5, 0.9, 1e-16).unwrap();
        let traj = simulate_rk4(&p, 10.0, 1e-3).unwrap();
        assert!(traj.s.iter().all(|s| (s - 0.9).abs() < 1e-8));
    }

    #[test]
    fn rk4_tiny_susceptible_decays_exponentially() {
        let p = SirParams::new(1.0, 0.5, 1e-16, 0.3).unwrap();
        let traj = simulate_rk4(&p, 10.0, 1e-3).unwrap();
        for (t, i) in traj.t.iter().zip(&traj.i) {
            assert!((i - 0.3 * (-0.5 * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_large_step_is_rejected() {
        let p = SirParams::new(50.0, 40.0, 0.9, 0.1).unwrap();
        assert!(matches!(simulate_rk4(&p, 5.0, 0.5), Err(SirError::StepSize(_))));
    }

    #[test]
    fn rk4_at_times_matches_full_run() {
        let p = reference();
        let traj = simulate_rk4(&p, 3.0, 1e-3).unwrap();
        let targets = [0.0, 0.5, 1.2345, 3.0];
        let vals = rk4_at_times(&p, &targets, 1e-3).unwrap();
        for (&t, (s, i)) in targets.iter().zip(vals) {
            let (si, ii) = traj.interpolate(t);
            assert!((s - si).abs() < 1e-6 && (i - ii).abs() < 1e-6);
        }
    }

    #[test]
    fn i_of_s_examples() {
        let p = reference();
        assert!((i_of_s(&p, 0.99).unwrap() - 0.01).abs() < 1e-15);
        assert!(i_of_s(&p, 0.0).is_err());
        assert!(i_of_s(&p, -1.0).is_err());
        // γ → 0: I = C - S
        let q = SirParams::new(1.0, 1e-300, 0.7, 0.2).unwrap();
        assert!((i_of_s(&q, 0.4).unwrap() - (0.9 - 0.4)).abs() < 1e-14);
    }

    #[test]
    fn i_of_s_matches_rk4_crossing() {
        let p = reference();
        let traj = simulate_rk4(&p, 25.0, 1e-5).unwrap();
        let k = traj.s.iter().position(|&s| s <= 0.5).unwrap();
        // interpolate I linearly in S between the bracketing nodes
        let w = (0.5 - traj.s[k - 1]) / (traj.s[k] - traj.s[k - 1]);
        let i_cross = traj.i[k - 1] + w * (traj.i[k] - traj.i[k - 1]);
        assert!((i_of_s(&p, 0.5).unwrap() - i_cross).abs() < 1e-6);
        for k in (0..traj.len()).step_by(1000) {
            let exact = i_of_s(&p, traj.s[k]).unwrap();
            assert!((exact - traj.i[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn time_of_s_examples() {
        let p = reference();
        assert_eq!(time_of_s(&p, 0.99, 1e-10).unwrap(), 0.0);
        let traj = simulate_rk4(&p, 25.0, 1e-5).unwrap();
        let k = traj.s.iter().position(|&s| s <= 0.5).unwrap();
        let w = (0.5 - traj.s[k - 1]) / (traj.s[k] - traj.s[k - 1]);
        let t_cross = traj.t[k - 1] + w * (traj.t[k] - traj.t[k - 1]);
        let t = time_of_s(&p, 0.5, 1e-12).unwrap();
        assert!((t - t_cross).abs() < 1e-5, "{t} vs {t_cross}");
        let t2 = time_of_s(&p, 0.4, 1e-12).unwrap();
        assert!(t2 > t);
        for k in (0..traj.len()).step_by(200_000).skip(1) {
            let tk = time_of_s(&p, traj.s[k], 1e-12).unwrap();
            assert!((tk - traj.t[k]).abs() < 1e-5, "node {k}: {tk} vs {}", traj.t[k]);
        }
    }

    #[test]
    fn time_of_s_domain() {
        let p = reference();
        let lo = s_min(&p).unwrap();
        assert!(i_of_s(&p, lo).unwrap().abs() < 1e-12);
        assert!(lo > 0.0 && lo < 0.5);
        assert!(time_of_s(&p, lo * 0.99, 1e-10).is_err());
        assert!(time_of_s(&p, 0.995, 1e-10).is_err());
    }

    #[test]
    fn s_min_when_below_threshold() {
        // λ S0 < γ: I is increasing on (0, S0)
        let p = SirParams::new(1.0, 2.0, 0.5, 0.1).unwrap();
        let lo = s_min(&p).unwrap();
        assert!(lo < 0.5 && i_of_s(&p, lo).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sis_examples() {
        let p = SisParams::new(2.0, 0.5, 0.1, 0.8).unwrap();
        assert_eq!(sis_closed_form(&p, 0.0).unwrap(), (0.8, 1.0 - 0.8));
        let (s, _) = sis_closed_form(&p, 1e3 / 2.0).unwrap();
        assert!((s - 0.3).abs() < 1e-9);
        let (s, i) = sis_closed_form(&p, 1.0).unwrap();
        assert_eq!(s + i, 1.0);
        let k: f64 = 0.3;
        let displayed = 1.0 - k + (-2.0f64).exp() * (k - 0.8);
        assert!((i - displayed).abs() < 1e-15);
        assert!(sis_closed_form(&p, -1.0).is_err());
    }
}
