//! The nonlocal model in the rescaled clock `τ`.
//!
//! With a two-argument kernel `G1(τ, τ̃)` on `0 ≤ τ̃ ≤ τ` the susceptible
//! compartment is still `S1 = S0 e^{-λτ}` and
//!
//! ```text
//! I1(τ) = λ S0 ∫₀^τ [1 - G1(τ, τ - x)] e^{-λ(τ - x)} dx + I0 [1 - G1(τ, 0)],
//! ```
//!
//! where `x` is the time elapsed since infection.

use crate::classic_sir::{SirParams, Trajectory};
use crate::error::{Result, SirError};
use crate::nonlocal_time::{parse_assignment, CdfKernel};
use crate::numerics::{geomspace, integrate_adaptive, GridFunction};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

type Binary = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

const VALIDATION_NODES: usize = 64;

/// A kernel `G1(τ, τ̃)` on the half-plane `0 ≤ τ̃ ≤ τ`.
#[derive(Clone)]
pub struct AdmissibleKernel {
    name: String,
    scale: f64,
    kernel: Binary,
}

impl fmt::Debug for AdmissibleKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdmissibleKernel")
            .field("name", &self.name)
            .field("scale", &self.scale)
            .finish()
    }
}

impl AdmissibleKernel {
    pub fn new(
        name: impl Into<String>,
        scale: f64,
        kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            scale,
            kernel: Arc::new(kernel),
        }
    }

    /// `G1(τ, τ̃) = 1 - e^{-A(τ - τ̃)}`.
    pub fn exp_tau(rate: f64) -> Result<Self> {
        Ok(HomogeneousKernel::new(rate)?.to_admissible())
    }

    /// `G1 ≡ 0`: nobody recovers. Fails [`AdmissibleKernel::validate`] by design.
    pub fn zero() -> Self {
        Self::new("zero", 1.0, |_, _| 0.0)
    }

    /// `G1(τ, τ̃) = G(φ(τ) - φ(τ̃))` for a sampled time map `φ: τ ↦ t`.
    pub fn from_time_map(cdf: &CdfKernel, time_map: GridFunction) -> Self {
        let scale = time_map.last_node();
        let cdf = cdf.clone();
        Self::new(format!("{}@time-map", cdf.name()), scale, move |tau, earlier| {
            cdf.eval((time_map.eval(tau) - time_map.eval(earlier)).max(0.0))
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, tau: f64, earlier: f64) -> f64 {
        (self.kernel)(tau, earlier)
    }

    /// Sampled admissibility on a 64×64 geometric grid plus the origin.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SirError::invalid(format!("{}: {msg}", self.name)));
        let mut nodes = vec![0.0];
        nodes.extend(geomspace(1e-3 * self.scale, 1e2 * self.scale, VALIDATION_NODES));
        for &tau in &nodes {
            let diag = self.eval(tau, tau);
            if diag.abs() > 1e-12 {
                return fail(format!("G1({tau}, {tau}) = {diag}"));
            }
        }
        for (a, &tau) in nodes.iter().enumerate() {
            let mut prev = f64::INFINITY;
            for &earlier in &nodes[..=a] {
                let v = self.eval(tau, earlier);
                if !(0.0..=1.0).contains(&v) {
                    return fail(format!("G1({tau}, {earlier}) = {v} outside [0, 1]"));
                }
                if v > prev + 1e-12 {
                    return fail(format!("G1({tau}, ·) increases near {earlier}"));
                }
                prev = v;
            }
        }
        for (b, &earlier) in nodes.iter().enumerate() {
            let mut prev = f64::NEG_INFINITY;
            for &tau in &nodes[b..] {
                let v = self.eval(tau, earlier);
                if v < prev - 1e-12 {
                    return fail(format!("G1(·, {earlier}) decreases near {tau}"));
                }
                prev = v;
            }
        }
        let far = 1e3 * self.scale;
        for &earlier in &nodes {
            let v = self.eval(far, earlier);
            if v <= 1.0 - 1e-4 {
                return fail(format!("G1({far}, {earlier}) = {v} does not approach 1"));
            }
        }
        Ok(())
    }
}

/// `G̃(τ) = 1 - e^{-Aτ}` acting through `G1(τ, τ̃) = G̃(τ - τ̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneousKernel {
    rate: f64,
}

impl HomogeneousKernel {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SirError::invalid(format!("kernel rate A must be positive, got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn cdf(&self, elapsed: f64) -> f64 {
        -(-self.rate * elapsed).exp_m1()
    }

    pub fn to_admissible(&self) -> AdmissibleKernel {
        let k = *self;
        AdmissibleKernel::new(format!("exp-tau:A={}", self.rate), 1.0 / self.rate, move |tau, earlier| {
            k.cdf(tau - earlier)
        })
    }
}

/// Registry lookup for `exp-tau:A=<x>`.
pub fn parse_tau_kernel(spec: &str) -> Result<AdmissibleKernel> {
    match spec.strip_prefix("exp-tau:") {
        Some(rest) => AdmissibleKernel::exp_tau(parse_assignment(rest, "A")?),
        None => Err(SirError::invalid(format!("unknown tau kernel `{spec}`"))),
    }
}

/// `I1(τ)` for an arbitrary kernel by adaptive quadrature.
///
/// The factor `e^{-λτ}` is kept inside the integrand, so the weight
/// `e^{-λ(τ - x)}` stays bounded by 1 and nothing overflows for large `τ`.
pub fn i1_general(p: &SirParams, k: &AdmissibleKernel, tau: f64, tol: f64) -> Result<f64> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(SirError::domain(format!("tau must be non-negative, got {tau}")));
    }
    let lambda = p.lambda();
    let memory = integrate_adaptive(
        |elapsed| (1.0 - k.eval(tau, tau - elapsed)) * (-lambda * (tau - elapsed)).exp(),
        0.0,
        tau,
        tol,
    )?;
    Ok(lambda * p.s0() * memory + p.i0() * (1.0 - k.eval(tau, 0.0)))
}

/// Closed form of `I1` for the homogeneous exponential kernel, including the
/// degenerate limit `A = λ`, where `I1 = (λ S0 τ + I0) e^{-λτ}`.
pub fn i1_exponential(p: &SirParams, rate: f64, tau: f64) -> f64 {
    let lambda = p.lambda();
    let gap = rate - lambda;
    let decay = (-lambda * tau).exp();
    // (e^{-λτ} - e^{-Aτ}) / (A - λ), stable as A → λ
    let bridge = if gap == 0.0 {
        tau * decay
    } else {
        decay * -(-gap * tau).exp_m1() / gap
    };
    lambda * p.s0() * bridge + p.i0() * (-rate * tau).exp()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ExponentialCase {
    /// `A < λ`: one interior maximum.
    Case1,
    /// `λ < A < λ(1 + S0/I0)`.
    Case2,
    OutOfRange(String),
}

pub fn classify_exponential(p: &SirParams, rate: f64) -> ExponentialCase {
    let lambda = p.lambda();
    let upper = lambda * (1.0 + p.s0() / p.i0());
    if rate < lambda {
        ExponentialCase::Case1
    } else if rate == lambda {
        ExponentialCase::OutOfRange("degenerate A = lambda".into())
    } else if rate < upper {
        ExponentialCase::Case2
    } else {
        ExponentialCase::OutOfRange(format!("A >= lambda(1 + S0/I0) = {upper} is not classified"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleReport {
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub holds: bool,
}

/// Margins `(S0 + I0) - (S1 + I1)` on a `τ` grid; holds when all are `≥ -10⁻⁹`.
pub fn max_principle_check(
    p: &SirParams,
    k: &AdmissibleKernel,
    tau_grid: &[f64],
    tol: f64,
) -> Result<MaxPrincipleReport> {
    check_grid(tau_grid)?;
    let total = p.s0() + p.i0();
    let margins = tau_grid
        .iter()
        .map(|&tau| {
            let s1 = p.s0() * (-p.lambda() * tau).exp();
            Ok(total - (s1 + i1_general(p, k, tau, tol)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MaxPrincipleReport {
        holds: min_margin >= -1e-9,
        margins,
        min_margin,
    })
}

fn check_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.first().is_some_and(|&t| t < 0.0) || tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SirError::invalid("tau grid must be non-negative and strictly increasing"));
    }
    Ok(())
}

/// `ψ(τ) = ∫₀^τ dσ / I1(σ)`.
pub fn psi_time_map(p: &SirParams, k: &AdmissibleKernel, tau: f64, tol: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(SirError::domain(format!("tau must be non-negative, got {tau}")));
    }
    psi_segment(p, k, 0.0, tau, tol)
}

fn psi_segment(p: &SirParams, k: &AdmissibleKernel, from: f64, to: f64, tol: f64) -> Result<f64> {
    let inner = (tol * 1e-3).max(1e-14);
    crate::numerics::try_integrate_adaptive(|sigma| Ok(1.0 / i1_general(p, k, sigma, inner)?), from, to, tol)
}

/// Physical-time trajectory on a `τ` grid starting at 0: `t = ψ(τ)` by
/// cumulative quadrature, `S = S1(τ)`, `I = I1(τ)`.
pub fn recover_trajectory(
    p: &SirParams,
    k: &AdmissibleKernel,
    tau_grid: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    check_grid(tau_grid)?;
    let mut traj = Trajectory::with_capacity(tau_grid.len());
    let (mut t, mut prev) = (0.0, 0.0);
    for &tau in tau_grid {
        t += psi_segment(p, k, prev, tau, tol)?;
        prev = tau;
        let s1 = p.s0() * (-p.lambda() * tau).exp();
        traj.push(t, s1, i1_general(p, k, tau, tol)?);
    }
    Ok(traj)
}

/// One refinement step: transports the physical-time distribution `G`
/// through a measured time map `τ ↦ t` and returns the resulting kernel.
pub fn refine_from_trajectory(cdf: &CdfKernel, taus: &[f64], times: &[f64]) -> Result<AdmissibleKernel> {
    let map = GridFunction::new(taus.to_vec(), times.to_vec())?;
    if map.values().windows(2).any(|w| w[1] < w[0]) {
        return Err(SirError::invalid("time map must be non-decreasing"));
    }
    Ok(AdmissibleKernel::from_time_map(cdf, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linspace;
    use crate::tau_scale::{closed_form, reconstruct_with_tau, tau_infinity};
    use proptest::prelude::*;

    fn reference() -> SirParams {
        SirParams::new(1.0, 0.5, 0.99, 0.01).unwrap()
    }

    #[test]
    fn kernel_validation() {
        AdmissibleKernel::exp_tau(0.5).unwrap().validate().unwrap();
        assert!(AdmissibleKernel::exp_tau(-1.0).is_err());
        assert!(AdmissibleKernel::zero().validate().is_err());
        let off_diagonal = AdmissibleKernel::new("shifted", 1.0, |t, s| 0.1 + 0.9 * (1.0 - (s - t).exp()));
        assert!(off_diagonal.validate().is_err());
        let wrong_way = AdmissibleKernel::new("wrong-way", 1.0, |t, s| {
            if t == s { 0.0 } else { 0.5 + 0.5 * (-(t - s)).exp() }
        });
        assert!(wrong_way.validate().is_err());
        assert!(parse_tau_kernel("exp-tau:A=2").is_ok());
        assert!(parse_tau_kernel("exp-tau:B=2").is_err());
        assert!(parse_tau_kernel("exponential:gamma=2").is_err());
    }

    #[test]
    fn i1_general_examples() {
        let p = SirParams::new(1.0, 0.5, 0.9, 0.1).unwrap();
        let k = AdmissibleKernel::exp_tau(0.5).unwrap();
        assert!((i1_general(&p, &k, 0.0, 1e-12).unwrap() - 0.1).abs() < 1e-15);
        let zero = AdmissibleKernel::zero();
        for tau in [0.3, 1.0, 4.0] {
            let v = i1_general(&p, &zero, tau, 1e-12).unwrap();
            assert!((v - (1.0 - 0.9 * (-tau).exp())).abs() < 1e-11);
        }
        for tau in linspace(0.0, 30.0, 31) {
            let general = i1_general(&p, &k, tau, 1e-12).unwrap();
            assert!((general - i1_exponential(&p, 0.5, tau)).abs() < 1e-9);
        }
        let slow = AdmissibleKernel::exp_tau(2.0).unwrap();
        let mid = i1_general(&reference(), &slow, 300.0, 1e-10).unwrap();
        assert!(mid > 0.0 && mid < 1e-100);
        // e^{-1000} underflows, so only the limit is observable here
        let far = i1_general(&reference(), &slow, 1e3, 1e-10).unwrap();
        assert!((0.0..1e-6).contains(&far));
        assert!(i1_general(&p, &k, -1.0, 1e-10).is_err());
    }

    #[test]
    fn exponential_closed_form_examples() {
        let p = SirParams::new(1.0, 0.5, 0.9, 0.1).unwrap();
        assert!((i1_exponential(&p, 0.5, 0.0) - 0.1).abs() < 1e-16);
        for tau in [0.5f64, 2.0, 7.0] {
            let displayed = -1.8 * (-tau).exp() + 1.9 * (-0.5 * tau).exp();
            assert!((i1_exponential(&p, 0.5, tau) - displayed).abs() < 1e-14);
        }
        let peak = 2.0 * (1.8f64 / 0.95).ln();
        assert!((peak - 1.278).abs() < 1e-3);
        let derivative = |t: f64| 1.8 * (-t).exp() - 0.95 * (-0.5 * t).exp();
        assert!(derivative(peak).abs() < 1e-14);

        let q = SirParams::new(1.0, 0.5, 0.5, 0.4).unwrap();
        let samples: Vec<f64> = linspace(0.0, 20.0, 2001).iter().map(|&t| i1_exponential(&q, 2.0, t)).collect();
        assert!(samples.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn degenerate_rate_limit_is_continuous() {
        let p = reference();
        for tau in [0.0f64, 0.5, 3.0] {
            let at = i1_exponential(&p, 1.0, tau);
            assert!((at - (0.99 * tau + 0.01) * (-tau).exp()).abs() < 1e-15);
            let near = i1_exponential(&p, 1.0 + 1e-9, tau);
            assert!((near - at).abs() < 1e-8);
            let k = AdmissibleKernel::exp_tau(1.0).unwrap();
            assert!((i1_general(&p, &k, tau, 1e-12).unwrap() - at).abs() < 1e-10);
        }
    }

    #[test]
    fn classification_examples() {
        let p = SirParams::new(1.0, 0.5, 0.9, 0.1).unwrap();
        assert_eq!(classify_exponential(&p, 0.5), ExponentialCase::Case1);
        assert_eq!(classify_exponential(&p, 2.0), ExponentialCase::Case2);
        match classify_exponential(&p, 1.0) {
            ExponentialCase::OutOfRange(note) => assert!(note.contains("degenerate")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(classify_exponential(&p, 10.0), ExponentialCase::OutOfRange(_)));
    }

    #[test]
    fn case1_derivative_changes_sign_once() {
        let p = SirParams::new(1.0, 0.5, 0.9, 0.1).unwrap();
        let v: Vec<f64> = linspace(0.0, 30.0, 3001).iter().map(|&t| i1_exponential(&p, 0.5, t)).collect();
        let signs: Vec<bool> = v.windows(2).map(|w| w[1] > w[0]).collect();
        assert_eq!(signs.windows(2).filter(|w| w[0] != w[1]).count(), 1);
    }

    #[test]
    fn max_principle_examples() {
        let p = reference();
        let grid = linspace(0.0, 20.0, 201);
        let exp = max_principle_check(&p, &AdmissibleKernel::exp_tau(0.5).unwrap(), &grid, 1e-12).unwrap();
        assert!(exp.margins[0].abs() < 1e-15);
        assert!(exp.holds && exp.min_margin >= -1e-9);
        let zero = max_principle_check(&p, &AdmissibleKernel::zero(), &grid, 1e-12).unwrap();
        assert!(zero.margins.iter().all(|m| m.abs() < 1e-10));
        assert!(max_principle_check(&p, &AdmissibleKernel::zero(), &[1.0, 0.5], 1e-10).is_err());
    }

    #[test]
    fn psi_examples() {
        let p = reference();
        let k = AdmissibleKernel::exp_tau(0.5).unwrap();
        assert_eq!(psi_time_map(&p, &k, 0.0, 1e-10).unwrap(), 0.0);
        let h = 1e-6;
        let slope = psi_time_map(&p, &k, h, 1e-12).unwrap() / h;
        assert!((slope - 100.0).abs() < 1e-2);
        let grid = linspace(0.0, 5.0, 26);
        let traj = recover_trajectory(&p, &k, &grid, 1e-10).unwrap();
        assert!(traj.t.windows(2).all(|w| w[1] > w[0]));
        assert!((traj.t[5] - psi_time_map(&p, &k, grid[5], 1e-10).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn refinement_with_classic_time_map_recovers_classic_solution() {
        let p = reference();
        let (taus, traj) = reconstruct_with_tau(&p, 20001, 0.999, 1e-12).unwrap();
        let k = refine_from_trajectory(&CdfKernel::exponential(0.5).unwrap(), &taus, &traj.t).unwrap();
        let tau_inf = tau_infinity(&p).unwrap();
        for frac in [0.1, 0.3, 0.5, 0.7] {
            let tau = frac * tau_inf;
            let refined = i1_general(&p, &k, tau, 1e-10).unwrap();
            let classic = closed_form(&p, tau).unwrap().1;
            assert!((refined - classic).abs() < 1e-4, "tau = {tau}: {refined} vs {classic}");
        }
    }

    proptest! {
        #[test]
        fn general_matches_closed_form(
            rate in 0.05f64..5.0,
            s0 in 0.05f64..0.9,
            tau in 0.0f64..15.0,
        ) {
            let p = SirParams::new(1.3, 0.5, s0, 1.0 - s0).unwrap();
            let k = AdmissibleKernel::exp_tau(rate).unwrap();
            let general = i1_general(&p, &k, tau, 1e-12).unwrap();
            prop_assert!((general - i1_exponential(&p, rate, tau)).abs() < 1e-9);
            prop_assert!(general > 0.0);
        }
    }
}
