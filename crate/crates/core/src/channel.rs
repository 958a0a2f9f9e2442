//! Network geometry and Rayleigh-faded channel realizations.
//!
//! BSs sit on a square grid with inter-site distance of two cell radii. Users
//! are dropped uniformly over the union of the cell discs. Each (BS, user,
//! subcarrier) triple gets an independent length-N vector
//! `h = sqrt(d^-alpha) * z` with `z ~ CN(0, I)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Dims, NetworkConfig, MIN_BS_DISTANCE};
use crate::error::{Error, Result};

const MAX_DROP_RETRIES: usize = 10_000;

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub bs_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
}

impl Topology {
    pub fn distance(&self, m: usize, k: usize) -> f64 {
        let (bx, by) = self.bs_positions[m];
        let (ux, uy) = self.user_positions[k];
        (bx - ux).hypot(by - uy)
    }
}

/// Channel vectors for one network realization, flattened `[M][K][S][N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    dims: Dims,
    h: Vec<Complex64>,
    pub topology: Option<Topology>,
}

impl ChannelState {
    pub fn from_raw(dims: Dims, h: Vec<Complex64>) -> Result<Self> {
        let expected = dims.num_links() * dims.num_antennas;
        if h.len() != expected {
            return Err(Error::shape("channel coefficients", expected, h.len()));
        }
        Ok(ChannelState {
            dims,
            h,
            topology: None,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        ChannelState {
            dims,
            h: vec![Complex64::new(0.0, 0.0); dims.num_links() * dims.num_antennas],
            topology: None,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Channel from BS `m` to user `k` on subcarrier `s`.
    #[inline]
    pub fn h(&self, m: usize, k: usize, s: usize) -> &[Complex64] {
        let n = self.dims.num_antennas;
        let off = self.dims.link(m, k, s) * n;
        &self.h[off..off + n]
    }

    pub fn h_mut(&mut self, m: usize, k: usize, s: usize) -> &mut [Complex64] {
        let n = self.dims.num_antennas;
        let off = self.dims.link(m, k, s) * n;
        &mut self.h[off..off + n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.h
    }

    /// Largest `‖h[m][k][s]‖` over all BSs and subcarriers for user `k`.
    pub fn best_norm(&self, k: usize) -> f64 {
        let d = self.dims;
        let mut best = 0.0f64;
        for m in 0..d.num_bs {
            for s in 0..d.num_subcarriers {
                best = best.max(norm(self.h(m, k, s)));
            }
        }
        best
    }
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(v: &[Complex64]) -> f64 {
    norm_sqr(v).sqrt()
}

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Grid positions of `num_bs` BSs with spacing `2 * cell_radius`.
pub fn bs_grid(num_bs: usize, cell_radius: f64) -> Vec<Point> {
    let cols = (num_bs as f64).sqrt().ceil() as usize;
    let isd = 2.0 * cell_radius;
    (0..num_bs)
        .map(|m| ((m % cols) as f64 * isd, (m / cols) as f64 * isd))
        .collect()
}

pub fn generate_topology<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Topology> {
    let bs_positions = bs_grid(cfg.num_bs, cfg.cell_radius);
    let mut user_positions = Vec::with_capacity(cfg.num_users);
    for _ in 0..cfg.num_users {
        let mut placed = None;
        for _ in 0..MAX_DROP_RETRIES {
            // Grid discs are tangent, so a uniform disc pick followed by a
            // uniform point in it is uniform over the union.
            let (cx, cy) = bs_positions[rng.random_range(0..cfg.num_bs)];
            let r = cfg.cell_radius * rng.random::<f64>().sqrt();
            let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let p = (cx + r * theta.cos(), cy + r * theta.sin());
            let too_close = bs_positions
                .iter()
                .any(|&(bx, by)| (bx - p.0).hypot(by - p.1) < MIN_BS_DISTANCE);
            if !too_close {
                placed = Some(p);
                break;
            }
        }
        match placed {
            Some(p) => user_positions.push(p),
            None => {
                return Err(Error::Config(format!(
                    "could not place a user at least {MIN_BS_DISTANCE} m from every BS \
                     after {MAX_DROP_RETRIES} draws (cell_radius = {})",
                    cfg.cell_radius
                )))
            }
        }
    }
    Ok(Topology {
        bs_positions,
        user_positions,
    })
}

/// One `CN(0, 1)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn generate_channels<R: Rng + ?Sized>(
    cfg: &NetworkConfig,
    topology: &Topology,
    rng: &mut R,
) -> ChannelState {
    let dims = cfg.dims();
    let mut state = ChannelState::zeros(dims);
    for m in 0..dims.num_bs {
        for k in 0..dims.num_users {
            let amp = topology.distance(m, k).powf(-cfg.pathloss_exponent).sqrt();
            for s in 0..dims.num_subcarriers {
                let h = state.h_mut(m, k, s);
                loop {
                    for z in h.iter_mut() {
                        *z = complex_gaussian(rng) * amp;
                    }
                    if h.iter().all(|z| z.re.is_finite() && z.im.is_finite())
                        && norm_sqr(h) > 0.0
                    {
                        break;
                    }
                }
            }
        }
    }
    state.topology = Some(topology.clone());
    state
}

/// Topology plus channels from a dedicated seeded stream.
pub fn draw_network(cfg: &NetworkConfig, seed: u64) -> Result<ChannelState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = generate_topology(cfg, &mut rng)?;
    Ok(generate_channels(cfg, &topo, &mut rng))
}
