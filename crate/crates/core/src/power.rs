//! Power allocation for a fixed schedule and fixed beams.
//!
//! Successive pseudo-convex approximation. Around the current powers `p_t`
//! every link keeps its own rate exact in its own power, with interference
//! frozen at `p_t`, and the effect of its power on every other link is
//! replaced by the first-order price
//!
//! ```text
//! c_v = sum_{u != v} d r_u / d p_v  (p_t)   <= 0
//! ```
//!
//! The surrogate `sum_v B log2(1 + a_v p_v) + c_v (p_v - p_t,v)` separates
//! per BS and its KKT point is the waterfilling level
//! `p_v = [B / ((lambda - c_v) ln 2) - 1 / a_v]^+`, with `lambda` found by
//! bisection on the BS budget. The next iterate moves toward that point with
//! an Armijo step on the true sum rate.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use crate::allocation::Allocation;
use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::rate::{Coupling, RateModel};

const ARMIJO_C: f64 = 1e-4;
const STEP_FLOOR: f64 = 1e-4;
const MAX_BRACKET_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Armijo,
    Diminishing,
}

impl FromStr for StepRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "armijo" => Ok(StepRule::Armijo),
            "diminishing" => Ok(StepRule::Diminishing),
            other => Err(format!("unknown step rule `{other}`")),
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepRule::Armijo => "armijo",
            StepRule::Diminishing => "diminishing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpcaSettings {
    pub outer_iters: usize,
    /// Bisection stops once the budget is met within this fraction of `P_m`.
    pub bisection_tol: f64,
    pub rel_tol: f64,
    pub step_rule: StepRule,
}

impl Default for SpcaSettings {
    fn default() -> Self {
        SpcaSettings {
            outer_iters: 100,
            bisection_tol: 1e-10,
            rel_tol: 1e-6,
            step_rule: StepRule::Armijo,
        }
    }
}

/// Per-link surrogate data at an expansion point, in [`Coupling`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateCoefficients {
    pub links: Vec<usize>,
    /// Serving BS per link.
    pub bs: Vec<usize>,
    /// Own gain over interference-plus-noise at the expansion point (1/W).
    pub a: Vec<f64>,
    /// Interference price (bit/s/W), nonpositive.
    pub c: Vec<f64>,
    /// Expansion point.
    pub p_t: Vec<f64>,
}

impl SurrogateCoefficients {
    pub fn from_coupling(
        coupling: &Coupling,
        p_t: &[f64],
        model: &RateModel,
        bs_of: impl Fn(usize) -> usize,
    ) -> Self {
        let l = coupling.len();
        let interference = coupling.interference(p_t, model.noise_power);
        let total: Vec<f64> = (0..l)
            .map(|v| interference[v] + coupling.direct[v] * p_t[v])
            .collect();
        let a = (0..l).map(|v| coupling.direct[v] / interference[v]).collect();
        let scale = model.bandwidth / LN_2;
        let c = (0..l)
            .map(|v| {
                (0..l)
                    .filter(|&u| u != v)
                    .map(|u| {
                        coupling.cross[u * l + v] * (1.0 / total[u] - 1.0 / interference[u])
                    })
                    .sum::<f64>()
                    * scale
            })
            .collect();
        SurrogateCoefficients {
            links: coupling.links.clone(),
            bs: coupling.links.iter().map(|&x| bs_of(x)).collect(),
            a,
            c,
            p_t: p_t.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn value(&self, p: &[f64], bandwidth: f64) -> f64 {
        (0..self.len())
            .map(|v| {
                bandwidth * (self.a[v] * p[v]).ln_1p() / LN_2 + self.c[v] * (p[v] - self.p_t[v])
            })
            .sum()
    }

    pub fn gradient(&self, p: &[f64], bandwidth: f64) -> Vec<f64> {
        (0..self.len())
            .map(|v| bandwidth * self.a[v] / ((1.0 + self.a[v] * p[v]) * LN_2) + self.c[v])
            .collect()
    }
}

/// Surrogate of the sum rate around the powers currently in `alloc`.
pub fn surrogate_build(
    ch: &ChannelState,
    alloc: &Allocation,
    model: &RateModel,
) -> Result<SurrogateCoefficients> {
    let coupling = Coupling::build(ch, alloc, model.sic)?;
    let d = ch.dims();
    Ok(SurrogateCoefficients::from_coupling(
        &coupling,
        &coupling.powers_of(alloc),
        model,
        |l| d.unlink(l).0,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    /// Link powers in coefficient order.
    pub p: Vec<f64>,
    /// Budget multiplier per BS that has links.
    pub lambda: Vec<(usize, f64)>,
}

fn level_power(a: f64, c: f64, lambda: f64, bandwidth: f64) -> f64 {
    let gap = lambda - c;
    if gap <= 0.0 {
        return f64::INFINITY;
    }
    (bandwidth / (gap * LN_2) - 1.0 / a).max(0.0)
}

/// Maximizes the separable surrogate under each BS budget.
pub fn waterfill_fixed_point(
    coeffs: &SurrogateCoefficients,
    budget: f64,
    bandwidth: f64,
    tol: f64,
) -> Result<Waterfill> {
    let mut p = vec![0.0; coeffs.len()];
    let mut bss: Vec<usize> = coeffs.bs.clone();
    bss.sort_unstable();
    bss.dedup();
    let abs_tol = tol * budget;
    let mut lambda = Vec::with_capacity(bss.len());

    for bs in bss {
        let on_bs: Vec<usize> = (0..coeffs.len()).filter(|&v| coeffs.bs[v] == bs).collect();
        for &v in &on_bs {
            if !(coeffs.a[v].is_finite() && coeffs.a[v] >= 0.0 && coeffs.c[v].is_finite() && coeffs.c[v] <= 0.0) {
                return Err(Error::Bracketing {
                    bs,
                    reason: format!("invalid coefficients a = {}, c = {}", coeffs.a[v], coeffs.c[v]),
                });
            }
        }
        let idx: Vec<usize> = on_bs.into_iter().filter(|&v| coeffs.a[v] > 0.0).collect();
        if idx.is_empty() {
            continue;
        }
        let total = |lam: f64| -> f64 {
            idx.iter()
                .map(|&v| level_power(coeffs.a[v], coeffs.c[v], lam, bandwidth))
                .sum()
        };
        let lam = if total(0.0) <= budget {
            0.0
        } else {
            let mut hi = idx
                .iter()
                .map(|&v| coeffs.c[v] + bandwidth * coeffs.a[v] / LN_2)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
                + 1.0;
            let mut doublings = 0;
            while total(hi) > budget {
                hi *= 2.0;
                doublings += 1;
                if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
                    return Err(Error::Bracketing {
                        bs,
                        reason: "upper multiplier never met the budget".into(),
                    });
                }
            }
            let mut lo = 0.0;
            for _ in 0..MAX_BISECTIONS {
                if budget - total(hi) <= abs_tol {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if total(mid) > budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        for &v in &idx {
            p[v] = level_power(coeffs.a[v], coeffs.c[v], lam, bandwidth);
        }
        lambda.push((bs, lam));
    }
    Ok(Waterfill { p, lambda })
}

/// Iterates surrogate solves from the powers in `alloc`. Returns the updated
/// allocation and the true sum rate after each iterate (starting with the
/// initial value).
pub fn spca_iterate(
    ch: &ChannelState,
    alloc: &Allocation,
    model: &RateModel,
    budget: f64,
    settings: &SpcaSettings,
) -> Result<(Allocation, Vec<f64>)> {
    let coupling = Coupling::build(ch, alloc, model.sic)?;
    let d = ch.dims();
    let mut p = coupling.powers_of(alloc);
    let mut f = coupling.sum_rate(&p, model);
    let mut trace = vec![f];

    if !coupling.is_empty() {
        for t in 0..settings.outer_iters {
            let coeffs = SurrogateCoefficients::from_coupling(&coupling, &p, model, |l| d.unlink(l).0);
            let target = waterfill_fixed_point(&coeffs, budget, model.bandwidth, settings.bisection_tol)?;
            let dir: Vec<f64> = target.p.iter().zip(&p).map(|(x, y)| x - y).collect();
            let step = |gamma: f64| -> Vec<f64> {
                p.iter()
                    .zip(&dir)
                    .map(|(x, dx)| (x + gamma * dx).max(0.0))
                    .collect()
            };

            let next = match settings.step_rule {
                StepRule::Armijo => {
                    let slope: f64 = coeffs
                        .gradient(&p, model.bandwidth)
                        .iter()
                        .zip(&dir)
                        .map(|(g, dx)| g * dx)
                        .sum();
                    let mut gamma = 1.0;
                    let mut found = None;
                    while gamma >= STEP_FLOOR {
                        let cand = step(gamma);
                        let fc = coupling.sum_rate(&cand, model);
                        if fc > f && fc >= f + ARMIJO_C * gamma * slope {
                            found = Some((cand, fc));
                            break;
                        }
                        gamma *= 0.5;
                    }
                    found
                }
                StepRule::Diminishing => {
                    let gamma = 1.0 / ((t + 1) as f64).powf(0.6);
                    let cand = step(gamma);
                    let fc = coupling.sum_rate(&cand, model);
                    Some((cand, fc))
                }
            };
            let Some((cand, fc)) = next else { break };
            let improvement = (fc - f).abs() / f.abs().max(f64::MIN_POSITIVE);
            p = cand;
            f = fc;
            trace.push(f);
            if improvement < settings.rel_tol {
                break;
            }
        }
    }

    let mut out = alloc.clone();
    for (&link, &q) in coupling.links.iter().zip(&p) {
        out.p[link] = q;
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::beam::mrt_all;
    use crate::channel::{complex_gaussian, norm_sqr};
    use crate::config::Dims;

    fn model() -> RateModel {
        RateModel {
            noise_power: 0.1,
            bandwidth: 1.0,
            sic: false,
        }
    }

    fn coeffs(a: Vec<f64>, c: Vec<f64>, bs: Vec<usize>) -> SurrogateCoefficients {
        let n = a.len();
        SurrogateCoefficients {
            links: (0..n).collect(),
            bs,
            a,
            c,
            p_t: vec![0.0; n],
        }
    }

    /// Two BSs on one subcarrier, `users` users each, MRT beams, equal power.
    fn instance(seed: u64, users: usize) -> (ChannelState, Allocation) {
        let d = Dims::new(2, 2 * users, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = (0..d.num_links() * 2).map(|_| complex_gaussian(&mut rng)).collect();
        let ch = ChannelState::from_raw(d, h).unwrap();
        let beams = mrt_all(&ch);
        let mut a = Allocation::empty(d);
        for k in 0..2 * users {
            let m = k % 2;
            let l = d.link(m, k, 0);
            a.assign(m, k, 0, &beams[l * 2..l * 2 + 2], rng.random_range(0.1..0.5));
        }
        (ch, a)
    }

    #[test]
    fn symmetric_links_split_evenly() {
        let wf = waterfill_fixed_point(&coeffs(vec![3.0, 3.0], vec![0.0, 0.0], vec![0, 0]), 2.0, 1.0, 1e-12)
            .unwrap();
        assert!((wf.p[0] - 1.0).abs() < 1e-9 && (wf.p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_free_link_takes_whole_budget() {
        let wf = waterfill_fixed_point(&coeffs(vec![0.5], vec![0.0], vec![0]), 1e6, 1.0, 1e-10).unwrap();
        assert!((wf.p[0] - 1e6).abs() <= 1e-10 * 1e6 + 1e-9);
    }

    #[test]
    fn steep_price_leaves_budget_unused() {
        // c so negative that the unconstrained optimum is tiny
        let wf = waterfill_fixed_point(&coeffs(vec![10.0], vec![-2.0], vec![0]), 5.0, 1.0, 1e-10).unwrap();
        let expected = 1.0 / (2.0 * LN_2) - 0.1;
        assert!((wf.p[0] - expected).abs() < 1e-12);
        assert_eq!(wf.lambda, vec![(0, 0.0)]);
    }

    #[test]
    fn kkt_stationarity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 5;
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..50.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..0.5)).collect();
            let bs: Vec<usize> = (0..n).map(|v| v % 2).collect();
            let cf = coeffs(a.clone(), c.clone(), bs.clone());
            let wf = waterfill_fixed_point(&cf, 1.0, 1.0, 1e-10).unwrap();
            for &(m, lam) in &wf.lambda {
                let used: f64 = (0..n).filter(|&v| bs[v] == m).map(|v| wf.p[v]).sum();
                assert!(used <= 1.0 + 1e-12);
                if lam > 0.0 {
                    assert!(1.0 - used <= 1e-10);
                }
                for v in (0..n).filter(|&v| bs[v] == m) {
                    let slope = a[v] / ((1.0 + a[v] * wf.p[v]) * LN_2) + c[v];
                    if wf.p[v] > 0.0 {
                        assert!((slope - lam).abs() <= 1e-8 * slope.abs().max(1.0), "{slope} {lam}");
                    } else {
                        assert!(slope <= lam + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn non_finite_coefficients_fail_to_bracket() {
        let err = waterfill_fixed_point(&coeffs(vec![f64::NAN], vec![0.0], vec![0]), 1.0, 1.0, 1e-10)
            .unwrap_err();
        assert!(matches!(err, Error::Bracketing { bs: 0, .. }));
        let err = waterfill_fixed_point(&coeffs(vec![1.0], vec![0.5], vec![0]), 1.0, 1.0, 1e-10)
            .unwrap_err();
        assert!(matches!(err, Error::Bracketing { .. }));
    }

    #[test]
    fn single_link_surrogate_has_no_price() {
        let d = Dims::new(1, 1, 1, 2);
        let h = vec![Complex64::new(0.4, 0.3), Complex64::new(-1.0, 0.2)];
        let ch = ChannelState::from_raw(d, h.clone()).unwrap();
        let mut a = Allocation::empty(d);
        a.assign(0, 0, 0, &mrt_all(&ch), 0.3);
        let s = surrogate_build(&ch, &a, &model()).unwrap();
        assert_eq!(s.c, vec![0.0]);
        assert!((s.a[0] - norm_sqr(&h) / 0.1).abs() < 1e-12);

        let (out, trace) = spca_iterate(&ch, &a, &model(), 2.0, &SpcaSettings::default()).unwrap();
        assert!((out.p[0] - 2.0).abs() < 1e-9);
        assert!(trace.len() <= 3, "{trace:?}");
    }

    #[test]
    fn interfering_links_have_negative_prices() {
        let (ch, a) = instance(1, 1);
        let s = surrogate_build(&ch, &a, &model()).unwrap();
        assert!(s.c.iter().all(|&c| c < 0.0), "{:?}", s.c);
    }

    #[test]
    fn zero_channel_user_gets_no_power() {
        let (mut ch, a) = instance(2, 2);
        for z in ch.h_mut(0, 0, 0) {
            *z = Complex64::new(0.0, 0.0);
        }
        let (out, _) = spca_iterate(&ch, &a, &model(), 1.0, &SpcaSettings::default()).unwrap();
        assert_eq!(out.p[ch.dims().link(0, 0, 0)], 0.0);
    }

    #[test]
    fn iterates_stay_feasible_and_monotone() {
        for seed in 0..20 {
            let (ch, a) = instance(seed, 2);
            for rule in [StepRule::Armijo, StepRule::Diminishing] {
                let settings = SpcaSettings {
                    step_rule: rule,
                    ..Default::default()
                };
                let (out, trace) = spca_iterate(&ch, &a, &model(), 1.0, &settings).unwrap();
                for used in out.bs_power() {
                    assert!(used <= 1.0 + 1e-9);
                }
                assert!(out.p.iter().all(|&p| p >= 0.0));
                if rule == StepRule::Armijo {
                    assert!(trace.windows(2).all(|t| t[1] >= t[0] - 1e-12));
                }
                assert_eq!(out.rho, a.rho);
                assert_eq!(out.w, a.w);
            }
        }
    }

    #[test]
    fn step_rule_parses() {
        assert_eq!("armijo".parse::<StepRule>().unwrap(), StepRule::Armijo);
        assert_eq!("diminishing".parse::<StepRule>().unwrap(), StepRule::Diminishing);
        assert!("newton".parse::<StepRule>().is_err());
    }
}
