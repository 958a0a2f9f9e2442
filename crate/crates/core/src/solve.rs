//! Alternating baseline (schedule, then beams, then powers), the random
//! reference heuristic, prediction projection and empirical CDFs.

use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::allocation::Allocation;
use crate::beam::{beamform_update, mrt_all, BeamSolverSettings};
use crate::channel::{draw_network, norm, ChannelState};
use crate::config::{KvFile, NetworkConfig};
use crate::error::{Error, Result};
use crate::power::{spca_iterate, SpcaSettings};
use crate::rate::{allocation_sum_rate, check_feasibility, RateModel, RateReport};
use crate::schedule::{schedule_users, uniform_allocation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_rounds: usize,
    /// Stop once a round improves the sum rate by less than this fraction.
    pub round_rel_tol: f64,
    pub beam: BeamSolverSettings,
    pub spca: SpcaSettings,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_rounds: 10,
            round_rel_tol: 1e-4,
            beam: BeamSolverSettings::default(),
            spca: SpcaSettings::default(),
        }
    }
}

impl SolverSettings {
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let d = SolverSettings::default();
        let s = SolverSettings {
            max_rounds: kv.take("max_rounds")?.unwrap_or(d.max_rounds),
            round_rel_tol: kv.take("round_rel_tol")?.unwrap_or(d.round_rel_tol),
            beam: BeamSolverSettings {
                max_iters: kv.take("beam_max_iters")?.unwrap_or(d.beam.max_iters),
                step_init: kv.take("beam_step_init")?.unwrap_or(d.beam.step_init),
                armijo_shrink: kv.take("beam_armijo_shrink")?.unwrap_or(d.beam.armijo_shrink),
                rel_tol: kv.take("beam_rel_tol")?.unwrap_or(d.beam.rel_tol),
                qos_penalty: kv.take("qos_penalty")?.unwrap_or(d.beam.qos_penalty),
            },
            spca: SpcaSettings {
                outer_iters: kv.take("spca_outer_iters")?.unwrap_or(d.spca.outer_iters),
                bisection_tol: kv.take("spca_bisection_tol")?.unwrap_or(d.spca.bisection_tol),
                rel_tol: kv.take("spca_rel_tol")?.unwrap_or(d.spca.rel_tol),
                step_rule: kv.take("spca_step_rule")?.unwrap_or(d.spca.step_rule),
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.max_rounds == 0 || self.beam.max_iters == 0 || self.spca.outer_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.beam.step_init > 0.0) {
            return bad("beam_step_init must be positive");
        }
        if !(self.beam.armijo_shrink > 0.0 && self.beam.armijo_shrink < 1.0) {
            return bad("beam_armijo_shrink must lie in (0, 1)");
        }
        if !(self.beam.qos_penalty >= 0.0) {
            return bad("qos_penalty must be nonnegative");
        }
        if !(self.spca.bisection_tol > 0.0) {
            return bad("spca_bisection_tol must be positive");
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "max_rounds = {}\nround_rel_tol = {:?}\nbeam_max_iters = {}\nbeam_step_init = {:?}\n\
             beam_armijo_shrink = {:?}\nbeam_rel_tol = {:?}\nqos_penalty = {:?}\n\
             spca_outer_iters = {}\nspca_bisection_tol = {:?}\nspca_rel_tol = {:?}\n\
             spca_step_rule = {}\n",
            self.max_rounds,
            self.round_rel_tol,
            self.beam.max_iters,
            self.beam.step_init,
            self.beam.armijo_shrink,
            self.beam.rel_tol,
            self.beam.qos_penalty,
            self.spca.outer_iters,
            self.spca.bisection_tol,
            self.spca.rel_tol,
            self.spca.step_rule,
        )
    }
}

/// Network and solver settings from one config file.
pub fn load_config(path: Option<&Path>) -> Result<(NetworkConfig, SolverSettings)> {
    let mut kv = match path {
        Some(p) => KvFile::load(p)?,
        None => KvFile::default(),
    };
    let cfg = NetworkConfig::from_kv(&mut kv)?;
    let settings = SolverSettings::from_kv(&mut kv)?;
    kv.finish()?;
    Ok((cfg, settings))
}

/// Objective traces of one alternation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub beam: Vec<f64>,
    pub power: Vec<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub alloc: Allocation,
    pub report: RateReport,
    /// Sum rate of the initial allocation and after each accepted round.
    pub outer_trace: Vec<f64>,
    pub rounds: usize,
    pub round_traces: Vec<RoundTrace>,
    pub wall_time: f64,
}

pub fn solve_baseline(
    ch: &ChannelState,
    cfg: &NetworkConfig,
    settings: &SolverSettings,
) -> Result<SolveResult> {
    let start = Instant::now();
    let model = RateModel::from_config(cfg);
    let budget = cfg.power_budget();
    let d = ch.dims();
    let nant = d.num_antennas;
    let mrt = mrt_all(ch);

    let mut best = Allocation::empty(d);
    best.check_dims(ch)?;
    let mut best_rate = allocation_sum_rate(ch, &best, &model)?;
    let mut outer_trace = vec![best_rate];
    let mut round_traces = Vec::new();
    let mut rounds = 0;

    while rounds < settings.max_rounds {
        rounds += 1;
        let mut candidates = mrt.clone();
        for link in best.scheduled() {
            candidates[link * nant..(link + 1) * nant].copy_from_slice(best.beam(link));
        }
        let decision = schedule_users(ch, &candidates, budget, cfg.max_users_per_carrier, &model)?;
        let alloc = uniform_allocation(ch, &decision.assignment, &candidates, budget)?;
        let (alloc, beam_trace) = beamform_update(ch, &alloc, &model, cfg.min_rate, &settings.beam)?;
        let (alloc, power_trace) = spca_iterate(ch, &alloc, &model, budget, &settings.spca)?;
        let rate = allocation_sum_rate(ch, &alloc, &model)?;

        let accepted = rate >= best_rate;
        round_traces.push(RoundTrace {
            beam: beam_trace,
            power: power_trace,
            accepted,
        });
        if !accepted {
            break;
        }
        let gain = if best_rate > 0.0 {
            (rate - best_rate) / best_rate
        } else if rate > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        best = alloc;
        best_rate = rate;
        outer_trace.push(rate);
        if gain < settings.round_rel_tol {
            break;
        }
    }

    let report = check_feasibility(ch, &best, cfg)?;
    Ok(SolveResult {
        alloc: best,
        report,
        outer_trace,
        rounds,
        round_traces,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Random slot per user (among those the carrier cap admits), MRT beams,
/// equal power split per BS.
pub fn heuristic_allocation<R: Rng + ?Sized>(
    ch: &ChannelState,
    cfg: &NetworkConfig,
    rng: &mut R,
) -> Result<Allocation> {
    let d = ch.dims();
    let mut load = vec![0usize; d.num_bs * d.num_subcarriers];
    let mut assignment = vec![None; d.num_users];
    for slot in assignment.iter_mut() {
        let open: Vec<usize> = (0..load.len())
            .filter(|&i| cfg.max_users_per_carrier.admits(load[i]))
            .collect();
        if open.is_empty() {
            continue;
        }
        let pick = open[rng.random_range(0..open.len())];
        load[pick] += 1;
        *slot = Some((pick / d.num_subcarriers, pick % d.num_subcarriers));
    }
    uniform_allocation(ch, &assignment, &mrt_all(ch), cfg.power_budget())
}

/// Seed of sample `index` in a run seeded with `base`.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Stream used by the heuristic's random schedule, distinct from the
/// channel stream of the same sample.
fn heuristic_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    Heuristic,
}

/// Runs `f` over `0..n` on a pool of `workers` threads, keeping index order.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Sum rate of `n` freshly drawn samples under `method`.
pub fn sample_sum_rates(
    cfg: &NetworkConfig,
    settings: &SolverSettings,
    method: Method,
    n: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<f64>> {
    parallel_map(n, workers, |i| {
        let seed = sample_seed(base_seed, i);
        let ch = draw_network(cfg, seed)?;
        match method {
            Method::Baseline => Ok(solve_baseline(&ch, cfg, settings)?.report.sum_rate),
            Method::Heuristic => {
                let alloc = heuristic_allocation(&ch, cfg, &mut heuristic_rng(seed))?;
                allocation_sum_rate(&ch, &alloc, &RateModel::from_config(cfg))
            }
        }
    })
}

/// Sorted samples paired with `(i + 1) / n`.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Value at cumulative probability 1/2 of an empirical CDF.
pub fn cdf_median(table: &[(f64, f64)]) -> Option<f64> {
    table.iter().find(|&&(_, p)| p >= 0.5).map(|&(x, _)| x)
}

pub fn cdf_csv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("sum_rate_bps,cum_prob\n");
    for (x, p) in table {
        out.push_str(&format!("{x},{p}\n"));
    }
    out
}

/// Raw learned outputs for one instance, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    /// Scheduling scores in [0, 1], `[M][K][S]`.
    pub rho: Vec<f64>,
    pub w: Vec<Complex64>,
    pub p: Vec<f64>,
}

/// Maps raw outputs onto a feasible allocation: per-user argmax slot kept if
/// its score reaches 0.5, beams renormalized (MRT if degenerate), powers
/// clipped at zero and scaled down per BS to the budget.
pub fn project_prediction(ch: &ChannelState, raw: &RawPrediction, budget: f64) -> Result<Allocation> {
    let d = ch.dims();
    let nant = d.num_antennas;
    if raw.rho.len() != d.num_links() {
        return Err(Error::shape("predicted rho", d.num_links(), raw.rho.len()));
    }
    if raw.w.len() != d.num_links() * nant {
        return Err(Error::shape("predicted w", d.num_links() * nant, raw.w.len()));
    }
    if raw.p.len() != d.num_links() {
        return Err(Error::shape("predicted p", d.num_links(), raw.p.len()));
    }
    let mut alloc = Allocation::empty(d);
    for k in 0..d.num_users {
        let mut best: Option<(usize, f64)> = None;
        for m in 0..d.num_bs {
            for s in 0..d.num_subcarriers {
                let link = d.link(m, k, s);
                let score = raw.rho[link];
                if score.is_finite() && best.is_none_or(|(_, b)| score > b) {
                    best = Some((link, score));
                }
            }
        }
        let Some((link, score)) = best else { continue };
        if score < 0.5 {
            continue;
        }
        let (m, _, s) = d.unlink(link);
        let w = &raw.w[link * nant..(link + 1) * nant];
        let n = norm(w);
        let beam: Vec<Complex64> = if n.is_finite() && n > 0.0 {
            w.iter().map(|z| z / n).collect()
        } else {
            let h = ch.h(m, k, s);
            let hn = norm(h);
            if hn > 0.0 {
                h.iter().map(|z| z / hn).collect()
            } else {
                let mut e = vec![Complex64::new(0.0, 0.0); nant];
                e[0] = Complex64::new(1.0, 0.0);
                e
            }
        };
        let p = raw.p[link];
        alloc.assign(m, k, s, &beam, if p.is_finite() { p.max(0.0) } else { 0.0 });
    }
    let used = alloc.bs_power();
    for link in alloc.scheduled() {
        let m = d.unlink(link).0;
        if used[m] > budget {
            alloc.p[link] *= budget / used[m];
        }
    }
    Ok(alloc)
}
