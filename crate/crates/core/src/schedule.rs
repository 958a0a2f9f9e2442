//! Greedy joint user–BS association and subcarrier assignment.
//!
//! Users are visited strongest-first (by their best channel norm). Each user
//! probes every admissible (BS, subcarrier) slot with its candidate beam,
//! the chosen BS re-splitting its budget evenly over one more user, and
//! takes the slot that raises the sum rate of everything committed so far
//! the most. A user whose best gain is not positive stays unscheduled.
//! [`marginal_rates`] reports the candidate's own rate per slot instead.

use num_complex::Complex64;

use crate::allocation::Allocation;
use crate::channel::{inner, ChannelState};
use crate::config::{Dims, UsersPerCarrier};
use crate::error::{Error, Result};
use crate::rate::RateModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    /// Chosen (BS, subcarrier) per user.
    pub assignment: Vec<Option<(usize, usize)>>,
    /// Relaxed association indicator: 1 if scheduled, 0 otherwise.
    pub phi: Vec<f64>,
}

impl ScheduleDecision {
    pub fn scheduled_count(&self) -> usize {
        self.assignment.iter().flatten().count()
    }
}

fn check_candidates(ch: &ChannelState, beams: &[Complex64], powers: Option<&[f64]>) -> Result<()> {
    let d = ch.dims();
    if beams.len() != d.num_links() * d.num_antennas {
        return Err(Error::shape(
            "candidate beams",
            d.num_links() * d.num_antennas,
            beams.len(),
        ));
    }
    if let Some(p) = powers {
        if p.len() != d.num_links() {
            return Err(Error::shape("candidate powers", d.num_links(), p.len()));
        }
    }
    Ok(())
}

fn candidate_beam(d: Dims, beams: &[Complex64], link: usize) -> &[Complex64] {
    let n = d.num_antennas;
    &beams[link * n..(link + 1) * n]
}

/// Interference-plus-noise seen by user `k` on each subcarrier from the
/// transmissions in `snapshot` (excluding user `k`'s own).
fn interference_at(ch: &ChannelState, snapshot: &Allocation, k: usize, noise: f64) -> Vec<f64> {
    let d = ch.dims();
    let mut out = vec![noise; d.num_subcarriers];
    for link in snapshot.scheduled() {
        let (n, j, s) = d.unlink(link);
        if j == k {
            continue;
        }
        out[s] += inner(ch.h(n, k, s), snapshot.beam(link)).norm_sqr() * snapshot.p[link];
    }
    out
}

/// Rate user `k` would get on each slot, `[M][S]` row-major.
fn user_rates(
    ch: &ChannelState,
    snapshot: &Allocation,
    beams: &[Complex64],
    power: impl Fn(usize, usize) -> f64,
    k: usize,
    model: &RateModel,
) -> Vec<f64> {
    let d = ch.dims();
    let interference = interference_at(ch, snapshot, k, model.noise_power);
    let mut out = Vec::with_capacity(d.num_bs * d.num_subcarriers);
    for m in 0..d.num_bs {
        for s in 0..d.num_subcarriers {
            let link = d.link(m, k, s);
            let gain = inner(ch.h(m, k, s), candidate_beam(d, beams, link)).norm_sqr();
            out.push(model.rate(gain * power(m, s) / interference[s]));
        }
    }
    out
}

/// Rate of every user on every candidate slot under the interference of
/// `snapshot`, laid out `[K][M][S]`.
pub fn marginal_rates(
    ch: &ChannelState,
    snapshot: &Allocation,
    beams: &[Complex64],
    powers: &[f64],
    model: &RateModel,
) -> Result<Vec<f64>> {
    snapshot.check_dims(ch)?;
    check_candidates(ch, beams, Some(powers))?;
    let d = ch.dims();
    let mut out = Vec::with_capacity(d.num_links());
    for k in 0..d.num_users {
        out.extend(user_rates(
            ch,
            snapshot,
            beams,
            |m, s| powers[d.link(m, k, s)],
            k,
            model,
        ));
    }
    Ok(out)
}

/// Users in descending order of best channel norm, ties by index.
pub fn processing_order(ch: &ChannelState) -> Vec<usize> {
    let norms: Vec<f64> = (0..ch.dims().num_users).map(|k| ch.best_norm(k)).collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order
}

/// Builds the allocation for a given assignment: candidate beams on the
/// chosen slots and each BS's budget split evenly across its users.
pub fn uniform_allocation(
    ch: &ChannelState,
    assignment: &[Option<(usize, usize)>],
    beams: &[Complex64],
    budget: f64,
) -> Result<Allocation> {
    check_candidates(ch, beams, None)?;
    let d = ch.dims();
    if assignment.len() != d.num_users {
        return Err(Error::shape("assignment", d.num_users, assignment.len()));
    }
    let mut load = vec![0usize; d.num_bs];
    for &(m, _) in assignment.iter().flatten() {
        load[m] += 1;
    }
    let mut alloc = Allocation::empty(d);
    for (k, slot) in assignment.iter().enumerate() {
        if let Some((m, s)) = *slot {
            let link = d.link(m, k, s);
            alloc.assign(m, k, s, candidate_beam(d, beams, link), budget / load[m] as f64);
        }
    }
    Ok(alloc)
}

/// A committed or candidate transmission on one subcarrier.
#[derive(Debug, Clone, Copy)]
struct Member {
    m: usize,
    k: usize,
    link: usize,
}

/// Sum rate of the transmissions sharing subcarrier `s`, with BS `n`
/// transmitting at `power(n)` on each of its links.
fn subcarrier_rate(
    ch: &ChannelState,
    beams: &[Complex64],
    members: &[Member],
    s: usize,
    power: impl Fn(usize) -> f64,
    model: &RateModel,
) -> f64 {
    let d = ch.dims();
    let direct: Vec<f64> = members
        .iter()
        .map(|v| inner(ch.h(v.m, v.k, s), candidate_beam(d, beams, v.link)).norm_sqr())
        .collect();
    let mut total = 0.0;
    for (i, v) in members.iter().enumerate() {
        let mut interference = model.noise_power;
        for (j, a) in members.iter().enumerate() {
            if i == j || (model.sic && a.m == v.m && (direct[j], a.k) < (direct[i], v.k)) {
                continue;
            }
            interference += inner(ch.h(a.m, v.k, s), candidate_beam(d, beams, a.link)).norm_sqr() * power(a.m);
        }
        total += model.rate(direct[i] * power(v.m) / interference);
    }
    total
}

pub fn schedule_users(
    ch: &ChannelState,
    beams: &[Complex64],
    budget: f64,
    cap: UsersPerCarrier,
    model: &RateModel,
) -> Result<ScheduleDecision> {
    check_candidates(ch, beams, None)?;
    let d = ch.dims();
    let mut assignment = vec![None; d.num_users];
    let mut bs_load = vec![0usize; d.num_bs];
    let mut slot_load = vec![0usize; d.num_bs * d.num_subcarriers];
    let mut groups: Vec<Vec<Member>> = vec![Vec::new(); d.num_subcarriers];
    let mut current = vec![0.0; d.num_subcarriers];

    for k in processing_order(ch) {
        let mut best: Option<(usize, f64)> = None;
        for m in 0..d.num_bs {
            let share = |n: usize| budget / (bs_load[n] + usize::from(n == m)) as f64;
            // subcarriers where BS m already transmits lose power to the newcomer
            let diluted: Vec<f64> = (0..d.num_subcarriers)
                .map(|t| {
                    if groups[t].iter().any(|g| g.m == m) {
                        subcarrier_rate(ch, beams, &groups[t], t, share, model) - current[t]
                    } else {
                        0.0
                    }
                })
                .collect();
            let diluted_total: f64 = diluted.iter().sum();
            for s in 0..d.num_subcarriers {
                let slot = m * d.num_subcarriers + s;
                if !cap.admits(slot_load[slot]) {
                    continue;
                }
                let mut trial = groups[s].clone();
                trial.push(Member {
                    m,
                    k,
                    link: d.link(m, k, s),
                });
                let gain = subcarrier_rate(ch, beams, &trial, s, share, model) - current[s]
                    + diluted_total
                    - diluted[s];
                if best.is_none_or(|(_, b)| gain > b) {
                    best = Some((slot, gain));
                }
            }
        }
        let Some((slot, gain)) = best else { continue };
        if gain <= 0.0 {
            continue;
        }
        let (m, s) = (slot / d.num_subcarriers, slot % d.num_subcarriers);
        assignment[k] = Some((m, s));
        bs_load[m] += 1;
        slot_load[slot] += 1;
        groups[s].push(Member {
            m,
            k,
            link: d.link(m, k, s),
        });
        let share = |n: usize| budget / bs_load[n].max(1) as f64;
        for (t, group) in groups.iter().enumerate() {
            current[t] = subcarrier_rate(ch, beams, group, t, share, model);
        }
    }

    let phi = assignment
        .iter()
        .map(|a| if a.is_some() { 1.0 } else { 0.0 })
        .collect();
    Ok(ScheduleDecision { assignment, phi })
}
