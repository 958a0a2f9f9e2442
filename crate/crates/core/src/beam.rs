//! Beamforming for a fixed schedule and fixed powers.
//!
//! Projected gradient ascent on the product of unit spheres: each scheduled
//! beam moves along the tangent component of the sum-rate gradient and is
//! renormalized. Step sizes come from Armijo backtracking and a step is only
//! taken when it improves the objective, so the objective trace never
//! decreases. The QoS floor enters as an optional quadratic penalty
//! `mu * sum max(0, r_min - r)^2`.

use num_complex::Complex64;

use crate::allocation::Allocation;
use crate::channel::{inner, norm, ChannelState};
use crate::error::Result;
use crate::rate::{Coupling, RateModel};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSolverSettings {
    pub max_iters: usize,
    pub step_init: f64,
    pub armijo_shrink: f64,
    pub rel_tol: f64,
    /// QoS penalty weight; 0 means plain sum rate.
    pub qos_penalty: f64,
}

impl Default for BeamSolverSettings {
    fn default() -> Self {
        BeamSolverSettings {
            max_iters: 200,
            step_init: 1.0,
            armijo_shrink: 0.5,
            rel_tol: 1e-6,
            qos_penalty: 0.0,
        }
    }
}

fn normalized(v: &[Complex64]) -> Vec<Complex64> {
    let n = norm(v);
    if n > 0.0 {
        v.iter().map(|z| z / n).collect()
    } else {
        vec![Complex64::new(0.0, 0.0); v.len()]
    }
}

/// Matched-filter beam `h / ‖h‖` for every slot; zero where `h = 0`.
pub fn mrt_all(ch: &ChannelState) -> Vec<Complex64> {
    let d = ch.dims();
    let mut out = Vec::with_capacity(d.num_links() * d.num_antennas);
    for link in 0..d.num_links() {
        let (m, k, s) = d.unlink(link);
        out.extend(normalized(ch.h(m, k, s)));
    }
    out
}

/// MRT beams on the scheduled slots of `schedule`, zero elsewhere.
pub fn mrt_init(ch: &ChannelState, schedule: &Allocation) -> Result<Vec<Complex64>> {
    schedule.check_dims(ch)?;
    let d = ch.dims();
    let mut out = vec![Complex64::new(0.0, 0.0); d.num_links() * d.num_antennas];
    let n = d.num_antennas;
    for link in schedule.scheduled() {
        let (m, k, s) = d.unlink(link);
        out[link * n..(link + 1) * n].copy_from_slice(&normalized(ch.h(m, k, s)));
    }
    Ok(out)
}

struct LinkState {
    total: Vec<f64>,
    interference: Vec<f64>,
    rates: Vec<f64>,
}

fn link_state(c: &Coupling, p: &[f64], model: &RateModel) -> LinkState {
    let interference = c.interference(p, model.noise_power);
    let total: Vec<f64> = interference
        .iter()
        .enumerate()
        .map(|(v, i)| i + c.direct[v] * p[v])
        .collect();
    let rates = (0..c.len())
        .map(|v| model.rate(c.direct[v] * p[v] / interference[v]))
        .collect();
    LinkState {
        total,
        interference,
        rates,
    }
}

fn penalized(rates: &[f64], min_rate: f64, mu: f64) -> f64 {
    let sum: f64 = rates.iter().sum();
    if mu == 0.0 {
        return sum;
    }
    let pen: f64 = rates.iter().map(|r| (min_rate - r).max(0.0).powi(2)).sum();
    sum - mu * pen
}

/// Sum rate minus the QoS penalty.
pub fn beam_objective(
    ch: &ChannelState,
    alloc: &Allocation,
    model: &RateModel,
    min_rate: f64,
    mu: f64,
) -> Result<f64> {
    let c = Coupling::build(ch, alloc, model.sic)?;
    let st = link_state(&c, &c.powers_of(alloc), model);
    Ok(penalized(&st.rates, min_rate, mu))
}

/// Gradient of [`beam_objective`] with respect to every beam, flattened like
/// `alloc.w`. Entry `g` of a beam component `w` packs the real-coordinate
/// partials as `∂f/∂Re(w) + i ∂f/∂Im(w)`, i.e. twice the Wirtinger
/// derivative `∂f/∂w*`. Unscheduled slots get zero.
pub fn beam_gradient(
    ch: &ChannelState,
    alloc: &Allocation,
    model: &RateModel,
    min_rate: f64,
    mu: f64,
) -> Result<Vec<Complex64>> {
    let c = Coupling::build(ch, alloc, model.sic)?;
    Ok(gradient_from(ch, alloc, &c, model, min_rate, mu))
}

fn gradient_from(
    ch: &ChannelState,
    alloc: &Allocation,
    c: &Coupling,
    model: &RateModel,
    min_rate: f64,
    mu: f64,
) -> Vec<Complex64> {
    let d = ch.dims();
    let nant = d.num_antennas;
    let l = c.len();
    let p = c.powers_of(alloc);
    let st = link_state(c, &p, model);
    let scale = 2.0 * model.bandwidth / std::f64::consts::LN_2;
    let weight: Vec<f64> = st
        .rates
        .iter()
        .map(|r| 1.0 + 2.0 * mu * (min_rate - r).max(0.0))
        .collect();
    let coords: Vec<_> = c.links.iter().map(|&x| d.unlink(x)).collect();

    let mut grad = vec![Complex64::new(0.0, 0.0); alloc.w.len()];
    for a in 0..l {
        let link = c.links[a];
        let w = alloc.beam(link);
        let (ma, ka, s) = coords[a];
        let g = &mut grad[link * nant..(link + 1) * nant];

        let h = ch.h(ma, ka, s);
        let coef = scale * weight[a] * p[a] / st.total[a] * inner(h, w);
        for (gi, hi) in g.iter_mut().zip(h) {
            *gi += hi * coef;
        }
        for v in 0..l {
            if v == a || !c.coupled[v * l + a] {
                continue;
            }
            let kv = coords[v].1;
            let h = ch.h(ma, kv, s);
            let diff = 1.0 / st.total[v] - 1.0 / st.interference[v];
            let coef = scale * weight[v] * p[a] * diff * inner(h, w);
            for (gi, hi) in g.iter_mut().zip(h) {
                *gi += hi * coef;
            }
        }
    }
    grad
}

/// Runs projected ascent from the beams in `alloc`. Returns the updated
/// allocation and the objective after every accepted iterate (starting with
/// the initial value).
pub fn beamform_update(
    ch: &ChannelState,
    alloc: &Allocation,
    model: &RateModel,
    min_rate: f64,
    settings: &BeamSolverSettings,
) -> Result<(Allocation, Vec<f64>)> {
    let mu = settings.qos_penalty;
    let mut cur = alloc.clone();
    let links = cur.scheduled();
    let nant = ch.dims().num_antennas;
    let mut c = Coupling::build(ch, &cur, model.sic)?;
    let mut f = penalized(&link_state(&c, &c.powers_of(&cur), model).rates, min_rate, mu);
    let mut trace = vec![f];
    if links.is_empty() {
        return Ok((cur, trace));
    }
    let mut step = settings.step_init;

    for _ in 0..settings.max_iters {
        let grad = gradient_from(ch, &cur, &c, model, min_rate, mu);
        // tangent component on each sphere: g - Re(w^H g) w
        let mut dir = vec![Complex64::new(0.0, 0.0); cur.w.len()];
        let mut dnorm2 = 0.0;
        let mut gnorm2 = 0.0;
        for &link in &links {
            let r = link * nant..(link + 1) * nant;
            let w = &cur.w[r.clone()];
            let g = &grad[r.clone()];
            let radial = inner(w, g).re;
            for ((di, wi), gi) in dir[r.clone()].iter_mut().zip(w).zip(g) {
                *di = gi - wi * radial;
                dnorm2 += di.norm_sqr();
                gnorm2 += gi.norm_sqr();
            }
        }
        let dnorm = dnorm2.sqrt();
        if dnorm <= 1e-12 * gnorm2.sqrt() || dnorm == 0.0 {
            break;
        }

        let mut accepted = None;
        let mut eta = step;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = cur.clone();
            for &link in &links {
                let r = link * nant..(link + 1) * nant;
                let moved: Vec<Complex64> = cur.w[r.clone()]
                    .iter()
                    .zip(&dir[r.clone()])
                    .map(|(w, d)| w + d * (eta / dnorm))
                    .collect();
                trial.w[r].copy_from_slice(&normalized(&moved));
            }
            let tc = Coupling::build(ch, &trial, model.sic)?;
            let tf = penalized(&link_state(&tc, &tc.powers_of(&trial), model).rates, min_rate, mu);
            if tf > f && tf >= f + ARMIJO_C * eta * dnorm {
                accepted = Some((trial, tc, tf));
                break;
            }
            eta *= settings.armijo_shrink;
        }
        let Some((trial, tc, tf)) = accepted else { break };
        let improvement = (tf - f) / f.abs().max(f64::MIN_POSITIVE);
        cur = trial;
        c = tc;
        f = tf;
        trace.push(f);
        step = (eta / settings.armijo_shrink).min(settings.step_init);
        if improvement < settings.rel_tol {
            break;
        }
    }
    Ok((cur, trace))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::channel::{complex_gaussian, norm_sqr};
    use crate::config::Dims;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn model() -> RateModel {
        RateModel {
            noise_power: 0.1,
            bandwidth: 1.0,
            sic: false,
        }
    }

    /// M=2, K=3, S=1, N=3: two users on BS 0, one on BS 1, all co-channel.
    fn instance(seed: u64) -> (ChannelState, Allocation) {
        let d = Dims::new(2, 3, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = (0..d.num_links() * 3).map(|_| complex_gaussian(&mut rng)).collect();
        let ch = ChannelState::from_raw(d, h).unwrap();
        let mut a = Allocation::empty(d);
        for (m, k) in [(0, 0), (0, 1), (1, 2)] {
            let w: Vec<_> = (0..3).map(|_| complex_gaussian(&mut rng)).collect();
            a.assign(m, k, 0, &normalized(&w), rng.random_range(0.2..1.0));
        }
        (ch, a)
    }

    #[test]
    fn mrt_examples() {
        let d = Dims::new(1, 2, 1, 2);
        let ch = ChannelState::from_raw(d, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 3.0), c(4.0, 0.0)])
            .unwrap();
        let w = mrt_all(&ch);
        assert_eq!(&w[..2], &[c(1.0, 0.0), c(0.0, 0.0)]);
        assert!((norm(&w[2..]) - 1.0).abs() < 1e-15);
        assert!((w[2] - c(0.0, 0.6)).norm() < 1e-15 && (w[3] - c(0.8, 0.0)).norm() < 1e-15);

        let mut sched = Allocation::empty(d);
        sched.rho[1] = true;
        let init = mrt_init(&ch, &sched).unwrap();
        assert_eq!(&init[..2], &[c(0.0, 0.0); 2]);
        assert_eq!(&init[2..], &w[2..]);
    }

    #[test]
    fn mrt_maximizes_isolated_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h: Vec<_> = (0..4).map(|_| complex_gaussian(&mut rng)).collect();
        let w = normalized(&h);
        let best = inner(&h, &w).norm_sqr();
        assert!((best - norm_sqr(&h)).abs() < 1e-12);
        for _ in 0..1000 {
            let u: Vec<_> = (0..4).map(|_| complex_gaussian(&mut rng)).collect();
            assert!(inner(&h, &normalized(&u)).norm_sqr() <= best + 1e-12);
        }
    }

    #[test]
    fn objective_without_penalty_is_sum_rate() {
        let (ch, a) = instance(2);
        let f = beam_objective(&ch, &a, &model(), 0.5, 0.0).unwrap();
        let s = crate::rate::allocation_sum_rate(&ch, &a, &model()).unwrap();
        assert_eq!(f, s);
        // QoS met everywhere -> penalty inactive for any weight
        let g = beam_objective(&ch, &a, &model(), 0.0, 1e6).unwrap();
        assert_eq!(g, s);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let (ch, a) = instance(seed);
            for (min_rate, mu) in [(0.0, 0.0), (3.0, 0.7)] {
                let g = beam_gradient(&ch, &a, &model(), min_rate, mu).unwrap();
                let f = |alloc: &Allocation| beam_objective(&ch, alloc, &model(), min_rate, mu).unwrap();
                let h = 1e-6;
                for link in a.scheduled() {
                    for i in 0..3 {
                        let idx = link * 3 + i;
                        for (part, unit) in [(g[idx].re, c(1.0, 0.0)), (g[idx].im, c(0.0, 1.0))] {
                            let mut up = a.clone();
                            up.w[idx] += unit * h;
                            let mut dn = a.clone();
                            dn.w[idx] -= unit * h;
                            let fd = (f(&up) - f(&dn)) / (2.0 * h);
                            let tol = 1e-4 * fd.abs().max(part.abs()).max(1e-3);
                            assert!((fd - part).abs() <= tol, "seed {seed}: fd {fd} vs {part}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn phase_rotation_leaves_objective_unchanged() {
        let (ch, a) = instance(5);
        let f0 = beam_objective(&ch, &a, &model(), 0.0, 0.0).unwrap();
        let mut b = a.clone();
        let rot = Complex64::from_polar(1.0, 1.234);
        for link in b.scheduled() {
            for z in b.beam_mut(link) {
                *z *= rot;
            }
        }
        let f1 = beam_objective(&ch, &b, &model(), 0.0, 0.0).unwrap();
        assert!((f0 - f1).abs() <= 1e-12 * f0.abs());
    }

    #[test]
    fn single_link_converges_to_mrt() {
        let d = Dims::new(1, 1, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h: Vec<_> = (0..3).map(|_| complex_gaussian(&mut rng)).collect();
        let ch = ChannelState::from_raw(d, h.clone()).unwrap();
        let mut a = Allocation::empty(d);
        let w0: Vec<_> = (0..3).map(|_| complex_gaussian(&mut rng)).collect();
        a.assign(0, 0, 0, &normalized(&w0), 1.0);
        let (out, trace) = beamform_update(&ch, &a, &model(), 0.0, &BeamSolverSettings::default()).unwrap();
        let gain = inner(&h, out.beam(0)).norm_sqr();
        assert!((gain - norm_sqr(&h)).abs() < 1e-4 * norm_sqr(&h), "{gain}");
        assert!(trace.windows(2).all(|t| t[1] >= t[0] - 1e-12));
        let tight = BeamSolverSettings {
            rel_tol: 1e-14,
            ..Default::default()
        };
        let (out, _) = beamform_update(&ch, &a, &model(), 0.0, &tight).unwrap();
        let gain = inner(&h, out.beam(0)).norm_sqr();
        assert!((gain - norm_sqr(&h)).abs() < 1e-9 * norm_sqr(&h), "{gain}");

        // starting at the optimum changes nothing
        let mut opt = a.clone();
        opt.beam_mut(0).copy_from_slice(&normalized(&h));
        let (again, trace) = beamform_update(&ch, &opt, &model(), 0.0, &BeamSolverSettings::default()).unwrap();
        assert!(trace.len() <= 2, "{trace:?}");
        let drift: f64 = again.w.iter().zip(&opt.w).map(|(x, y)| (x - y).norm()).sum();
        assert!(drift < 1e-6);
    }

    #[test]
    fn ascent_is_monotone_and_keeps_unit_norm() {
        for seed in 0..10 {
            let (ch, a) = instance(seed);
            let settings = BeamSolverSettings {
                qos_penalty: if seed % 2 == 0 { 0.0 } else { 0.5 },
                ..Default::default()
            };
            let (out, trace) = beamform_update(&ch, &a, &model(), 2.0, &settings).unwrap();
            assert!(trace.windows(2).all(|t| t[1] >= t[0] - 1e-12));
            for link in out.scheduled() {
                assert!((norm(out.beam(link)) - 1.0).abs() < 1e-9);
            }
            assert_eq!(out.p, a.p);
            assert_eq!(out.rho, a.rho);
        }
    }

    #[test]
    fn empty_schedule_is_a_no_op() {
        let d = Dims::new(1, 2, 1, 2);
        let ch = ChannelState::zeros(d);
        let a = Allocation::empty(d);
        let (out, trace) = beamform_update(&ch, &a, &model(), 0.0, &BeamSolverSettings::default()).unwrap();
        assert_eq!(out, a);
        assert_eq!(trace, vec![0.0]);
    }
}
