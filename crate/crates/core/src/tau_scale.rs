//! Linearization of the classic model in the clock `dτ = I dt`.
//!
//! In `τ` the system reads `S1' = -λ S1`, `I1' = λ S1 - γ`, so both
//! compartments are explicit. The physical clock is recovered from
//! `t(τ) = ∫₀^τ dσ / I1(σ)`, which diverges at the horizon `τ∞` where
//! `I1` vanishes.

use crate::classic_sir::{SirParams, Trajectory};
use crate::error::{Result, SirError};
use crate::numerics::{find_root_bracketed, integrate_adaptive};
use serde::Serialize;

pub const DEFAULT_TAU_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TauCase {
    /// `λ S0 > γ`: `I1` rises to an interior maximum, then falls.
    Case1,
    /// `λ S0 ≤ γ`: `I1` is non-increasing.
    Case2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauSolution {
    pub params: SirParams,
    pub tau_inf: f64,
    pub case_tag: TauCase,
}

impl TauSolution {
    pub fn new(p: &SirParams) -> Result<Self> {
        Ok(Self {
            params: *p,
            tau_inf: tau_infinity(p)?,
            case_tag: classify_case(p),
        })
    }

    pub fn closed_form(&self, tau: f64) -> Result<(f64, f64)> {
        closed_form_within(&self.params, tau, self.tau_inf)
    }
}

fn horizon_residual(p: &SirParams, tau: f64) -> f64 {
    p.i0() - p.s0() * (-p.lambda() * tau).exp_m1() - p.gamma() * tau
}

/// Positive root of `S0 + I0 - S0 e^{-λτ} - γτ`.
pub fn tau_infinity(p: &SirParams) -> Result<f64> {
    let hi = (p.s0() + p.i0()) / p.gamma();
    find_root_bracketed(|tau| horizon_residual(p, tau), 0.0, hi, 1e-15)
}

pub fn classify_case(p: &SirParams) -> TauCase {
    if p.lambda() * p.s0() > p.gamma() {
        TauCase::Case1
    } else {
        TauCase::Case2
    }
}

/// Location `ln(λS0/γ)/λ` of the interior maximum of `I1`, if any.
pub fn peak_tau(p: &SirParams) -> Option<f64> {
    match classify_case(p) {
        TauCase::Case1 => Some((p.lambda() * p.s0() / p.gamma()).ln() / p.lambda()),
        TauCase::Case2 => None,
    }
}

/// `(S1, I1)` at `tau ∈ [0, τ∞]`.
pub fn closed_form(p: &SirParams, tau: f64) -> Result<(f64, f64)> {
    closed_form_within(p, tau, tau_infinity(p)?)
}

fn closed_form_within(p: &SirParams, tau: f64, tau_inf: f64) -> Result<(f64, f64)> {
    if !(tau >= 0.0 && tau <= tau_inf) {
        return Err(SirError::domain(format!("tau = {tau} outside [0, {tau_inf}]")));
    }
    Ok(closed_form_unchecked(p, tau))
}

fn closed_form_unchecked(p: &SirParams, tau: f64) -> (f64, f64) {
    let s1 = p.s0() * (-p.lambda() * tau).exp();
    let i1 = p.i0() - p.s0() * (-p.lambda() * tau).exp_m1() - p.gamma() * tau;
    (s1, i1)
}

/// Physical time `∫₀^τ dσ / I1(σ)` for `tau < τ∞`.
pub fn time_of_tau(p: &SirParams, tau: f64, tol: f64) -> Result<f64> {
    let tau_inf = tau_infinity(p)?;
    if !(tau >= 0.0) {
        return Err(SirError::domain(format!("tau must be non-negative, got {tau}")));
    }
    if tau >= tau_inf {
        return Err(SirError::domain(format!(
            "horizon reached: t -> infinity at tau = {tau} >= tau_inf = {tau_inf}"
        )));
    }
    integrate_adaptive(|x| 1.0 / closed_form_unchecked(p, x).1, 0.0, tau, tol)
}

/// Cumulative `t` at the sorted nodes of a `τ` grid below `τ∞`.
pub fn times_on_grid(p: &SirParams, taus: &[f64], tol: f64) -> Result<Vec<f64>> {
    let tau_inf = tau_infinity(p)?;
    if let Some(&last) = taus.last() {
        if last >= tau_inf {
            return Err(SirError::domain(format!("horizon reached at tau = {last}")));
        }
    }
    let mut out = Vec::with_capacity(taus.len());
    let mut prev = 0.0;
    let mut acc = 0.0;
    for &tau in taus {
        if tau < prev {
            return Err(SirError::invalid("tau grid must be sorted and non-negative"));
        }
        acc += integrate_adaptive(|x| 1.0 / closed_form_unchecked(p, x).1, prev, tau, tol)?;
        out.push(acc);
        prev = tau;
    }
    Ok(out)
}

/// Trajectory on a uniform `τ` grid spanning `[0, cap·τ∞]`.
pub fn reconstruct_trajectory(p: &SirParams, n_nodes: usize, tau_cap_fraction: f64) -> Result<Trajectory> {
    Ok(reconstruct_with_tau(p, n_nodes, tau_cap_fraction, 1e-12)?.1)
}

/// [`reconstruct_trajectory`] returning the `τ` nodes alongside.
pub fn reconstruct_with_tau(
    p: &SirParams,
    n_nodes: usize,
    tau_cap_fraction: f64,
    tol: f64,
) -> Result<(Vec<f64>, Trajectory)> {
    if n_nodes < 2 {
        return Err(SirError::invalid(format!("need at least 2 nodes, got {n_nodes}")));
    }
    if !(tau_cap_fraction > 0.0 && tau_cap_fraction < 1.0) {
        return Err(SirError::invalid(format!(
            "tau cap fraction must lie in (0, 1), got {tau_cap_fraction}"
        )));
    }
    let tau_inf = tau_infinity(p)?;
    let end = tau_cap_fraction * tau_inf;
    let taus: Vec<f64> = (0..n_nodes)
        .map(|k| end * k as f64 / (n_nodes - 1) as f64)
        .collect();
    let times = times_on_grid(p, &taus, tol)?;
    let mut traj = Trajectory::with_capacity(n_nodes);
    for (&tau, &t) in taus.iter().zip(&times) {
        let (s, i) = closed_form_unchecked(p, tau);
        traj.push(t, s, i);
    }
    Ok((taus, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classic_sir::{i_of_s, rk4_at_times};

    fn reference() -> SirParams {
        SirParams::new(1.0, 0.5, 0.99, 0.01).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m
            } else {
                a = m
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn horizon_examples() {
        let p = reference();
        let tau_inf = tau_infinity(&p).unwrap();
        let oracle = bisect(|t| horizon_residual(&p, t), 1e-6, 2.0);
        assert!((tau_inf - oracle).abs() < 1e-12);
        assert!(horizon_residual(&p, tau_inf).abs() < 1e-12);
        assert!((tau_inf - 1.6002).abs() < 5e-4);

        let q = SirParams::new(1.0, 10.0, 0.1, 0.1).unwrap();
        let t = tau_infinity(&q).unwrap();
        assert!(t > 0.0 && t < 0.02 + 1e-3);
        assert!(horizon_residual(&q, 0.02 + 1e-3) < 0.0);

        let doubled = p.with_rates(2.0, 1.0).unwrap();
        assert!((tau_infinity(&doubled).unwrap() - tau_inf / 2.0).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let p = reference();
        assert_eq!(classify_case(&p), TauCase::Case1);
        assert!((peak_tau(&p).unwrap() - 1.98f64.ln()).abs() < 1e-15);
        let edge = SirParams::new(1.0, 0.5, 0.5, 0.1).unwrap();
        assert_eq!(classify_case(&edge), TauCase::Case2);
        let q = SirParams::new(1.0, 2.0, 0.5, 0.1).unwrap();
        assert_eq!(classify_case(&q), TauCase::Case2);
        let tau_inf = tau_infinity(&q).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let (_, i1) = closed_form(&q, tau_inf * k as f64 / 1000.0).unwrap();
            assert!(i1 <= prev);
            prev = i1;
        }
    }

    #[test]
    fn closed_form_examples() {
        let p = reference();
        assert_eq!(closed_form(&p, 0.0).unwrap(), (0.99, 0.01));
        let tau_inf = tau_infinity(&p).unwrap();
        assert!(closed_form(&p, tau_inf).unwrap().1.abs() < 1e-10);
        assert!(closed_form(&p, -0.1).is_err());
        assert!(closed_form(&p, tau_inf * 1.01).is_err());

        // RK4 on the linear τ system
        let (mut s, mut i) = (0.99, 0.01);
        let h = 1e-4;
        let f = |s: f64| (-s, s - 0.5);
        for _ in 0..5000 {
            let k1 = f(s);
            let k2 = f(s + 0.5 * h * k1.0);
            let k3 = f(s + 0.5 * h * k2.0);
            let k4 = f(s + h * k3.0);
            s += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            i += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let (s1, i1) = closed_form(&p, 0.5).unwrap();
        assert!((s1 - s).abs() < 1e-10 && (i1 - i).abs() < 1e-10);
    }

    #[test]
    fn time_of_tau_examples() {
        let p = reference();
        assert_eq!(time_of_tau(&p, 0.0, 1e-12).unwrap(), 0.0);
        let t = time_of_tau(&p, 1.0, 1e-12).unwrap();
        let vals = rk4_at_times(&p, &[t], 1e-5).unwrap();
        assert!((vals[0].0 - 0.99 * (-1.0f64).exp()).abs() < 1e-5);
        let tau_inf = tau_infinity(&p).unwrap();
        assert!(time_of_tau(&p, tau_inf, 1e-10).is_err());
        let mut prev = -1.0;
        for k in 0..20 {
            let t = time_of_tau(&p, tau_inf * k as f64 / 21.0, 1e-10).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn properties_on_tau_grid() {
        let p = reference();
        let tau_inf = tau_infinity(&p).unwrap();
        let n = 2001;
        let grid: Vec<f64> = (0..n).map(|k| tau_inf * k as f64 / (n - 1) as f64).collect();
        let i1: Vec<f64> = grid.iter().map(|&t| closed_form_unchecked(&p, t).1).collect();
        for w in i1.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-15);
        }
        let argmax = (0..n).max_by(|&a, &b| i1[a].total_cmp(&i1[b])).unwrap();
        assert!((grid[argmax] - peak_tau(&p).unwrap()).abs() <= tau_inf / (n - 1) as f64);
        for &t in &grid[..n - 1] {
            let (s1, i1) = closed_form_unchecked(&p, t);
            assert!((i1 - i_of_s(&p, s1).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruction_basics() {
        let p = reference();
        let traj = reconstruct_trajectory(&p, 200, DEFAULT_TAU_CAP).unwrap();
        assert_eq!(traj.t[0], 0.0);
        assert_eq!((traj.s[0], traj.i[0]), (0.99, 0.01));
        assert!(traj.r[0].abs() < 1e-15);
        assert!(traj.t.windows(2).all(|w| w[1] > w[0]));
        assert!(reconstruct_trajectory(&p, 1, 0.5).is_err());
        assert!(reconstruct_trajectory(&p, 10, 1.0).is_err());
    }
}
