//! SINR, rate and sum-rate evaluation plus constraint slacks.
//!
//! The SINR of a scheduled slot (m, k, s) is its own received power over
//! the power it receives from every other scheduled transmission on the same
//! subcarrier (intra-cell and inter-cell alike) plus noise. Subcarriers are
//! orthogonal. With `sic` enabled, a user additionally removes the intra-cell
//! signals of co-channel users with weaker effective gain `|h^H w|^2`.

use serde::Serialize;

use crate::allocation::Allocation;
use crate::channel::{inner, ChannelState};
use crate::config::NetworkConfig;
use crate::error::Result;

/// Everything needed to turn an allocation into rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    /// Noise power per subcarrier (W).
    pub noise_power: f64,
    /// Subcarrier bandwidth (Hz).
    pub bandwidth: f64,
    pub sic: bool,
}

impl RateModel {
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        RateModel {
            noise_power: cfg.noise_power(),
            bandwidth: cfg.bandwidth,
            sic: cfg.sic_mode,
        }
    }

    #[inline]
    pub fn rate(&self, sinr: f64) -> f64 {
        self.bandwidth * sinr.ln_1p() / std::f64::consts::LN_2
    }
}

/// Power gains between the scheduled slots of an allocation, for its
/// current beams. Link `i` refers to slot `links[i]`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub links: Vec<usize>,
    /// `|h_{m,k,s}^H w_{m,k,s}|^2` per link.
    pub direct: Vec<f64>,
    /// `cross[v * L + a]`: gain `|h_{n,k,s}^H w_a|^2` of aggressor `a` at
    /// victim `v`, zero when not coupled.
    pub cross: Vec<f64>,
    /// Whether aggressor `a` interferes with victim `v`.
    pub coupled: Vec<bool>,
}

impl Coupling {
    pub fn build(ch: &ChannelState, alloc: &Allocation, sic: bool) -> Result<Self> {
        alloc.check_dims(ch)?;
        let d = ch.dims();
        let links = alloc.scheduled();
        let n = links.len();
        let coords: Vec<_> = links.iter().map(|&l| d.unlink(l)).collect();
        let direct: Vec<f64> = links
            .iter()
            .zip(&coords)
            .map(|(&l, &(m, k, s))| inner(ch.h(m, k, s), alloc.beam(l)).norm_sqr())
            .collect();
        let mut cross = vec![0.0; n * n];
        let mut coupled = vec![false; n * n];
        for v in 0..n {
            let (mv, kv, sv) = coords[v];
            for a in 0..n {
                let (ma, ka, sa) = coords[a];
                if a == v || sa != sv {
                    continue;
                }
                if sic && ma == mv && (direct[a], ka) < (direct[v], kv) {
                    continue;
                }
                coupled[v * n + a] = true;
                cross[v * n + a] = inner(ch.h(ma, kv, sv), alloc.beam(links[a])).norm_sqr();
            }
        }
        Ok(Coupling {
            links,
            direct,
            cross,
            coupled,
        })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Interference-plus-noise at each link for link powers `p`.
    pub fn interference(&self, p: &[f64], noise_power: f64) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|v| {
                let row = &self.cross[v * n..(v + 1) * n];
                noise_power + row.iter().zip(p).map(|(g, q)| g * q).sum::<f64>()
            })
            .collect()
    }

    pub fn sinr(&self, p: &[f64], noise_power: f64) -> Vec<f64> {
        self.interference(p, noise_power)
            .into_iter()
            .enumerate()
            .map(|(v, i)| self.direct[v] * p[v] / i)
            .collect()
    }

    pub fn sum_rate(&self, p: &[f64], model: &RateModel) -> f64 {
        self.sinr(p, model.noise_power)
            .into_iter()
            .map(|g| model.rate(g))
            .sum()
    }

    /// Link powers of `alloc` in coupling order.
    pub fn powers_of(&self, alloc: &Allocation) -> Vec<f64> {
        self.links.iter().map(|&l| alloc.p[l]).collect()
    }
}

/// SINR for every slot `[M][K][S]`; zero where unscheduled.
pub fn compute_sinr(ch: &ChannelState, alloc: &Allocation, model: &RateModel) -> Result<Vec<f64>> {
    let coupling = Coupling::build(ch, alloc, model.sic)?;
    let p = coupling.powers_of(alloc);
    let mut out = vec![0.0; ch.dims().num_links()];
    for (g, &link) in coupling.sinr(&p, model.noise_power).into_iter().zip(&coupling.links) {
        out[link] = g;
    }
    Ok(out)
}

pub fn compute_rates(sinr: &[f64], bandwidth: f64) -> Vec<f64> {
    sinr.iter()
        .map(|g| bandwidth * g.ln_1p() / std::f64::consts::LN_2)
        .collect()
}

pub fn sum_rate(rates: &[f64]) -> f64 {
    rates.iter().sum()
}

/// Sum rate of an allocation in one call.
pub fn allocation_sum_rate(ch: &ChannelState, alloc: &Allocation, model: &RateModel) -> Result<f64> {
    let coupling = Coupling::build(ch, alloc, model.sic)?;
    Ok(coupling.sum_rate(&coupling.powers_of(alloc), model))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub sum_rate: f64,
    /// `P_m - sum_{k,s} rho p` per BS (W).
    pub budget_slack: Vec<f64>,
    /// (m, k, s) of each scheduled slot, aligned with `qos_slack`.
    pub scheduled: Vec<[usize; 3]>,
    /// `r - r_min` per scheduled slot (bit/s).
    pub qos_slack: Vec<f64>,
    /// Binary schedule with at most one slot per user.
    pub schedule_valid: bool,
    /// Every power is finite and nonnegative.
    pub powers_nonnegative: bool,
}

impl RateReport {
    /// Budgets met within `1e-9 * P_m`.
    pub fn budgets_met(&self, budget: f64) -> bool {
        self.budget_slack.iter().all(|&s| s >= -1e-9 * budget)
    }

    pub fn qos_met(&self) -> bool {
        self.qos_slack.iter().all(|&s| s >= 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates the allocation and reports every constraint slack. Violations
/// are reported, not raised.
pub fn check_feasibility(
    ch: &ChannelState,
    alloc: &Allocation,
    cfg: &NetworkConfig,
) -> Result<RateReport> {
    check_feasibility_with(
        ch,
        alloc,
        &RateModel::from_config(cfg),
        cfg.power_budget(),
        cfg.min_rate,
    )
}

/// [`check_feasibility`] with the scenario scalars given directly.
pub fn check_feasibility_with(
    ch: &ChannelState,
    alloc: &Allocation,
    model: &RateModel,
    budget: f64,
    min_rate: f64,
) -> Result<RateReport> {
    let d = ch.dims();
    let sinr = compute_sinr(ch, alloc, model)?;
    let rate = compute_rates(&sinr, model.bandwidth);
    let total = sum_rate(&rate);
    let budget_slack = alloc.bs_power().into_iter().map(|u| budget - u).collect();
    let scheduled_links = alloc.scheduled();
    let scheduled = scheduled_links
        .iter()
        .map(|&l| {
            let (m, k, s) = d.unlink(l);
            [m, k, s]
        })
        .collect();
    let qos_slack = scheduled_links.iter().map(|&l| rate[l] - min_rate).collect();
    Ok(RateReport {
        sinr,
        rate,
        sum_rate: total,
        budget_slack,
        scheduled,
        qos_slack,
        schedule_valid: alloc.schedule_valid(),
        powers_nonnegative: alloc.p.iter().all(|&p| p.is_finite() && p >= 0.0),
    })
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::channel::{complex_gaussian, norm, norm_sqr};
    use crate::config::Dims;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn model(noise: f64) -> RateModel {
        RateModel {
            noise_power: noise,
            bandwidth: 1.0,
            sic: false,
        }
    }

    fn mrt(h: &[Complex64]) -> Vec<Complex64> {
        let n = norm(h);
        h.iter().map(|z| z / n).collect()
    }

    fn random_instance(seed: u64, dims: Dims) -> (ChannelState, Allocation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = (0..dims.num_links() * dims.num_antennas)
            .map(|_| complex_gaussian(&mut rng))
            .collect();
        let ch = ChannelState::from_raw(dims, h).unwrap();
        let mut alloc = Allocation::empty(dims);
        for k in 0..dims.num_users {
            let m = k % dims.num_bs;
            let s = (k / dims.num_bs) % dims.num_subcarriers;
            let beam: Vec<_> = mrt(&(0..dims.num_antennas)
                .map(|_| complex_gaussian(&mut rng))
                .collect::<Vec<_>>());
            alloc.assign(m, k, s, &beam, 0.2 + k as f64 * 0.3);
        }
        (ch, alloc)
    }

    #[test]
    fn single_link_mrt_closed_form() {
        let d = Dims::new(1, 1, 1, 2);
        let h = vec![c(0.3, -1.2), c(0.7, 0.4)];
        let ch = ChannelState::from_raw(d, h.clone()).unwrap();
        let mut a = Allocation::empty(d);
        a.assign(0, 0, 0, &mrt(&h), 2.0);
        let g = compute_sinr(&ch, &a, &model(0.1)).unwrap();
        let expected = norm_sqr(&h) * 2.0 / 0.1;
        assert!((g[0] - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn zero_power_zero_sinr() {
        let d = Dims::new(2, 3, 2, 2);
        let (ch, mut a) = random_instance(1, d);
        a.p.fill(0.0);
        let g = compute_sinr(&ch, &a, &model(0.1)).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rates_from_sinr() {
        let r = compute_rates(&[1.0, 0.0], 250_000.0);
        assert!((r[0] - 250_000.0).abs() < 1e-9);
        assert_eq!(r[1], 0.0);
        let r = compute_rates(&[3.0], 1.0);
        assert!((r[0] - 2.0).abs() < 1e-15);
        assert_eq!(sum_rate(&[0.0, 0.0]), 0.0);
        assert_eq!(sum_rate(&[0.0, 7.5]), 7.5);
    }

    #[test]
    fn interference_free_when_cross_links_vanish() {
        // two cells, one user each on the same subcarrier, no cross channels
        let d = Dims::new(2, 2, 1, 2);
        let mut ch = ChannelState::zeros(d);
        ch.h_mut(0, 0, 0).copy_from_slice(&[c(1.0, 0.5), c(-0.2, 0.1)]);
        ch.h_mut(1, 1, 0).copy_from_slice(&[c(0.3, 0.0), c(0.9, -0.4)]);
        let mut a = Allocation::empty(d);
        let w0 = [c(0.6, 0.0), c(0.0, 0.8)];
        let w1 = [c(0.0, 1.0), c(0.0, 0.0)];
        a.assign(0, 0, 0, &w0, 1.5);
        a.assign(1, 1, 0, &w1, 0.5);
        let g = compute_sinr(&ch, &a, &model(0.2)).unwrap();
        let e0 = inner(ch.h(0, 0, 0), &w0).norm_sqr() * 1.5 / 0.2;
        let e1 = inner(ch.h(1, 1, 0), &w1).norm_sqr() * 0.5 / 0.2;
        assert!((g[d.link(0, 0, 0)] - e0).abs() < 1e-12 * e0);
        assert!((g[d.link(1, 1, 0)] - e1).abs() < 1e-12 * e1);
    }

    #[test]
    fn sic_removes_weaker_intra_cell_interference() {
        let d = Dims::new(1, 2, 1, 1);
        let ch = ChannelState::from_raw(d, vec![c(2.0, 0.0), c(0.5, 0.0)]).unwrap();
        let mut a = Allocation::empty(d);
        a.assign(0, 0, 0, &[c(1.0, 0.0)], 0.2);
        a.assign(0, 1, 0, &[c(1.0, 0.0)], 0.8);
        let noise = 0.01;
        let plain = compute_sinr(&ch, &a, &model(noise)).unwrap();
        let sic = compute_sinr(
            &ch,
            &a,
            &RateModel {
                sic: true,
                ..model(noise)
            },
        )
        .unwrap();
        // strong user 0 cancels user 1's signal; weak user 1 does not
        assert!((sic[0] - 4.0 * 0.2 / noise).abs() < 1e-9);
        assert!((plain[0] - 4.0 * 0.2 / (4.0 * 0.8 + noise)).abs() < 1e-12);
        assert_eq!(sic[1], plain[1]);
    }

    #[test]
    fn feasibility_report_boundaries() {
        let cfg = NetworkConfig {
            num_bs: 2,
            num_users: 3,
            num_subcarriers: 2,
            min_rate: 0.0,
            ..Default::default()
        };
        let d = cfg.dims();
        let (ch, mut a) = random_instance(4, d);
        a.p.fill(0.0);
        let r = check_feasibility(&ch, &a, &cfg).unwrap();
        assert!(r.schedule_valid);
        assert!(r.budget_slack.iter().all(|&s| s == cfg.power_budget()));
        assert!(r.qos_slack.iter().all(|&s| s == 0.0));
        assert_eq!(r.sum_rate, 0.0);

        // BS 0 spends exactly its budget
        let budget = cfg.power_budget();
        let on_bs0: Vec<usize> = a.scheduled().into_iter().filter(|&l| d.unlink(l).0 == 0).collect();
        for &l in &on_bs0 {
            a.p[l] = budget / on_bs0.len() as f64;
        }
        let r = check_feasibility(&ch, &a, &cfg).unwrap();
        assert!(r.budget_slack[0].abs() <= 1e-9 * budget);
        assert!(r.budgets_met(budget));

        // a user holding two slots breaks the schedule but is still reported
        let beam = a.beam(a.scheduled()[0]).to_vec();
        a.assign(1, 0, 1, &beam, 0.0);
        let r = check_feasibility(&ch, &a, &cfg).unwrap();
        assert!(!r.schedule_valid);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (ch, _) = random_instance(0, Dims::new(1, 2, 1, 2));
        let other = Allocation::empty(Dims::new(1, 3, 1, 2));
        assert!(compute_sinr(&ch, &other, &model(1.0)).is_err());
    }

    #[test]
    fn report_serializes() {
        let cfg = NetworkConfig {
            num_bs: 1,
            num_users: 2,
            num_subcarriers: 1,
            ..Default::default()
        };
        let (ch, a) = random_instance(2, cfg.dims());
        let json = check_feasibility(&ch, &a, &cfg).unwrap().to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["sum_rate"].is_f64());
        assert_eq!(v["budget_slack"].as_array().unwrap().len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sinr_strictly_increasing_in_own_power(seed in 0u64..10_000, bump in 0.01f64..5.0) {
            let d = Dims::new(2, 3, 2, 2);
            let (ch, a) = random_instance(seed, d);
            let m = model(0.05);
            let base = compute_sinr(&ch, &a, &m).unwrap();
            for link in a.scheduled() {
                let mut b = a.clone();
                b.p[link] += bump;
                let g = compute_sinr(&ch, &b, &m).unwrap();
                prop_assert!(g[link] > base[link]);
            }
        }

        #[test]
        fn unscheduled_slots_have_zero_sinr(seed in 0u64..10_000) {
            let d = Dims::new(2, 3, 2, 2);
            let (ch, a) = random_instance(seed, d);
            let g = compute_sinr(&ch, &a, &model(0.05)).unwrap();
            for (l, &on) in a.rho.iter().enumerate() {
                if !on {
                    prop_assert_eq!(g[l], 0.0);
                } else {
                    prop_assert!(g[l] >= 0.0);
                }
            }
        }
    }
}
