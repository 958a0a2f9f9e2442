use num_complex::Complex64;

use crate::channel::{norm, ChannelState};
use crate::config::Dims;
use crate::error::{Error, Result};

/// Decision triple: binary schedule, unit-norm beams and transmit powers,
/// each indexed by slot (m, k, s).
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    dims: Dims,
    pub rho: Vec<bool>,
    /// Flattened `[M][K][S][N]`.
    pub w: Vec<Complex64>,
    /// Watts.
    pub p: Vec<f64>,
}

impl Allocation {
    pub fn empty(dims: Dims) -> Self {
        let links = dims.num_links();
        Allocation {
            dims,
            rho: vec![false; links],
            w: vec![Complex64::new(0.0, 0.0); links * dims.num_antennas],
            p: vec![0.0; links],
        }
    }

    pub fn from_parts(dims: Dims, rho: Vec<bool>, w: Vec<Complex64>, p: Vec<f64>) -> Result<Self> {
        let links = dims.num_links();
        if rho.len() != links {
            return Err(Error::shape("rho", links, rho.len()));
        }
        if w.len() != links * dims.num_antennas {
            return Err(Error::shape("w", links * dims.num_antennas, w.len()));
        }
        if p.len() != links {
            return Err(Error::shape("p", links, p.len()));
        }
        Ok(Allocation { dims, rho, w, p })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn check_dims(&self, ch: &ChannelState) -> Result<()> {
        let (a, b) = (self.dims, ch.dims());
        if a.num_bs != b.num_bs {
            return Err(Error::shape("BS count", b.num_bs, a.num_bs));
        }
        if a.num_users != b.num_users {
            return Err(Error::shape("user count", b.num_users, a.num_users));
        }
        if a.num_subcarriers != b.num_subcarriers {
            return Err(Error::shape("subcarrier count", b.num_subcarriers, a.num_subcarriers));
        }
        if a.num_antennas != b.num_antennas {
            return Err(Error::shape("antenna count", b.num_antennas, a.num_antennas));
        }
        Ok(())
    }

    #[inline]
    pub fn beam(&self, link: usize) -> &[Complex64] {
        let n = self.dims.num_antennas;
        &self.w[link * n..(link + 1) * n]
    }

    #[inline]
    pub fn beam_mut(&mut self, link: usize) -> &mut [Complex64] {
        let n = self.dims.num_antennas;
        &mut self.w[link * n..(link + 1) * n]
    }

    /// Flat indices of slots with `rho = 1`, ascending.
    pub fn scheduled(&self) -> Vec<usize> {
        (0..self.rho.len()).filter(|&i| self.rho[i]).collect()
    }

    /// Schedules slot (m, k, s) with the given beam and power.
    pub fn assign(&mut self, m: usize, k: usize, s: usize, beam: &[Complex64], power: f64) {
        let link = self.dims.link(m, k, s);
        self.rho[link] = true;
        self.beam_mut(link).copy_from_slice(beam);
        self.p[link] = power;
    }

    pub fn clear_link(&mut self, link: usize) {
        self.rho[link] = false;
        self.p[link] = 0.0;
        self.beam_mut(link).fill(Complex64::new(0.0, 0.0));
    }

    /// Number of slots held by user `k`.
    pub fn user_slot_count(&self, k: usize) -> usize {
        let d = self.dims;
        (0..d.num_bs)
            .flat_map(|m| (0..d.num_subcarriers).map(move |s| (m, s)))
            .filter(|&(m, s)| self.rho[d.link(m, k, s)])
            .count()
    }

    /// The (m, s) slot of user `k`, if it holds exactly one.
    pub fn user_slot(&self, k: usize) -> Option<(usize, usize)> {
        let d = self.dims;
        let mut found = None;
        for m in 0..d.num_bs {
            for s in 0..d.num_subcarriers {
                if self.rho[d.link(m, k, s)] {
                    if found.is_some() {
                        return None;
                    }
                    found = Some((m, s));
                }
            }
        }
        found
    }

    /// Sum of scheduled powers per BS.
    pub fn bs_power(&self) -> Vec<f64> {
        let d = self.dims;
        let mut out = vec![0.0; d.num_bs];
        for (link, &on) in self.rho.iter().enumerate() {
            if on {
                out[d.unlink(link).0] += self.p[link];
            }
        }
        out
    }

    /// Users holding at most one slot each.
    pub fn schedule_valid(&self) -> bool {
        (0..self.dims.num_users).all(|k| self.user_slot_count(k) <= 1)
    }

    /// Describes the first broken structural invariant, if any: per-user slot
    /// count, unit-norm scheduled beams, nonnegative powers and zero power on
    /// unscheduled slots.
    pub fn invariant_violation(&self) -> Option<String> {
        let d = self.dims;
        for k in 0..d.num_users {
            let c = self.user_slot_count(k);
            if c > 1 {
                return Some(format!("user {k} holds {c} slots"));
            }
        }
        for link in 0..d.num_links() {
            let (m, k, s) = d.unlink(link);
            let p = self.p[link];
            if !(p.is_finite() && p >= 0.0) {
                return Some(format!("power at ({m},{k},{s}) is {p}"));
            }
            if self.rho[link] {
                let nrm = norm(self.beam(link));
                if (nrm - 1.0).abs() > 1e-9 {
                    return Some(format!("beam at ({m},{k},{s}) has norm {nrm}"));
                }
            } else if p != 0.0 {
                return Some(format!("unscheduled slot ({m},{k},{s}) carries power {p}"));
            }
        }
        None
    }
}
