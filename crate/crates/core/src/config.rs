//! Scenario parameters and the flat `key = value` config file format.
//!
//! Defaults follow the reference simulation setup: 4 BSs with 12 users each,
//! 2 transmit antennas, 250 kHz subcarriers, -80 dBm/Hz noise with a 7 dB
//! noise figure, 500 m cells and a path loss exponent of 3.7. The number of
//! subcarriers defaults to half the number of users.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Users closer than this to any BS are redrawn (meters).
pub const MIN_BS_DISTANCE: f64 = 10.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Problem dimensions: BSs, users, subcarriers, antennas per BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub num_bs: usize,
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
}

impl Dims {
    pub fn new(num_bs: usize, num_users: usize, num_subcarriers: usize, num_antennas: usize) -> Self {
        Dims {
            num_bs,
            num_users,
            num_subcarriers,
            num_antennas,
        }
    }

    /// Number of (m, k, s) slots.
    pub fn num_links(&self) -> usize {
        self.num_bs * self.num_users * self.num_subcarriers
    }

    /// Row-major index of slot (m, k, s).
    #[inline]
    pub fn link(&self, m: usize, k: usize, s: usize) -> usize {
        (m * self.num_users + k) * self.num_subcarriers + s
    }

    /// Inverse of [`Dims::link`].
    #[inline]
    pub fn unlink(&self, idx: usize) -> (usize, usize, usize) {
        let s = idx % self.num_subcarriers;
        let mk = idx / self.num_subcarriers;
        (mk / self.num_users, mk % self.num_users, s)
    }
}

/// Cap on the number of users sharing one (BS, subcarrier) slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsersPerCarrier {
    Unlimited,
    AtMost(usize),
}

impl UsersPerCarrier {
    pub fn admits(&self, load: usize) -> bool {
        match *self {
            UsersPerCarrier::Unlimited => true,
            UsersPerCarrier::AtMost(cap) => load < cap,
        }
    }
}

impl fmt::Display for UsersPerCarrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UsersPerCarrier::Unlimited => f.write_str("unlimited"),
            UsersPerCarrier::AtMost(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for UsersPerCarrier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("unlimited") {
            return Ok(UsersPerCarrier::Unlimited);
        }
        match s.parse::<usize>() {
            Ok(0) => Err("must be positive or `unlimited`".into()),
            Ok(n) => Ok(UsersPerCarrier::AtMost(n)),
            Err(e) => Err(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub num_bs: usize,
    /// Total users across the network.
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    pub power_budget_dbm: f64,
    /// Per-link QoS floor (bit/s).
    pub min_rate: f64,
    /// Subcarrier bandwidth (Hz).
    pub bandwidth: f64,
    /// Noise power spectral density (dBm/Hz).
    pub noise_psd: f64,
    /// Receiver noise figure (dB).
    pub noise_figure: f64,
    pub cell_radius: f64,
    pub pathloss_exponent: f64,
    /// Stored for the record; the channel model has no frequency term.
    pub carrier_freq: f64,
    pub max_users_per_carrier: UsersPerCarrier,
    pub rng_seed: u64,
    /// Cancel intra-cell interference from weaker co-channel users.
    pub sic_mode: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_bs: 4,
            num_users: 48,
            num_subcarriers: 24,
            num_antennas: 2,
            power_budget_dbm: 30.0,
            min_rate: 1e5,
            bandwidth: 250e3,
            noise_psd: -80.0,
            noise_figure: 7.0,
            cell_radius: 500.0,
            pathloss_exponent: 3.7,
            carrier_freq: 2.4e9,
            max_users_per_carrier: UsersPerCarrier::Unlimited,
            rng_seed: 0,
            sic_mode: false,
        }
    }
}

impl NetworkConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(
            self.num_bs,
            self.num_users,
            self.num_subcarriers,
            self.num_antennas,
        )
    }

    /// Per-BS power budget in watts.
    pub fn power_budget(&self) -> f64 {
        dbm_to_watts(self.power_budget_dbm)
    }

    /// Per-subcarrier noise power in watts.
    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_psd + 10.0 * self.bandwidth.log10() + self.noise_figure)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_bs", self.num_bs),
            ("num_users", self.num_users),
            ("num_subcarriers", self.num_subcarriers),
            ("num_antennas", self.num_antennas),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let finite_positive = [
            ("bandwidth", self.bandwidth),
            ("cell_radius", self.cell_radius),
            ("pathloss_exponent", self.pathloss_exponent),
            ("carrier_freq", self.carrier_freq),
        ];
        for (name, v) in finite_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.min_rate.is_finite() && self.min_rate >= 0.0) {
            return Err(Error::Config(format!(
                "min_rate must be nonnegative, got {}",
                self.min_rate
            )));
        }
        for (name, v) in [
            ("power_budget_dbm", self.power_budget_dbm),
            ("noise_psd", self.noise_psd),
            ("noise_figure", self.noise_figure),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        let sigma2 = self.noise_power();
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::Config(format!("noise power {sigma2} W is not positive")));
        }
        Ok(())
    }

    /// Reads the network keys from `kv`, leaving unrelated keys in place.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let d = NetworkConfig::default();
        let num_users = kv.take("num_users")?.unwrap_or(d.num_users);
        let cfg = NetworkConfig {
            num_bs: kv.take("num_bs")?.unwrap_or(d.num_bs),
            num_users,
            num_subcarriers: kv
                .take("num_subcarriers")?
                .unwrap_or((num_users / 2).max(1)),
            num_antennas: kv.take("num_antennas")?.unwrap_or(d.num_antennas),
            power_budget_dbm: kv.take("power_budget_dbm")?.unwrap_or(d.power_budget_dbm),
            min_rate: kv.take("min_rate")?.unwrap_or(d.min_rate),
            bandwidth: kv.take("bandwidth")?.unwrap_or(d.bandwidth),
            noise_psd: kv.take("noise_psd")?.unwrap_or(d.noise_psd),
            noise_figure: kv.take("noise_figure")?.unwrap_or(d.noise_figure),
            cell_radius: kv.take("cell_radius")?.unwrap_or(d.cell_radius),
            pathloss_exponent: kv.take("pathloss_exponent")?.unwrap_or(d.pathloss_exponent),
            carrier_freq: kv.take("carrier_freq")?.unwrap_or(d.carrier_freq),
            max_users_per_carrier: kv
                .take("max_users_per_carrier")?
                .unwrap_or(d.max_users_per_carrier),
            rng_seed: kv.take("rng_seed")?.unwrap_or(d.rng_seed),
            sic_mode: kv.take("sic_mode")?.unwrap_or(d.sic_mode),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "num_bs = {}\nnum_users = {}\nnum_subcarriers = {}\nnum_antennas = {}\n\
             power_budget_dbm = {:?}\nmin_rate = {:?}\nbandwidth = {:?}\nnoise_psd = {:?}\n\
             noise_figure = {:?}\ncell_radius = {:?}\npathloss_exponent = {:?}\n\
             carrier_freq = {:?}\nmax_users_per_carrier = {}\nrng_seed = {}\nsic_mode = {}\n",
            self.num_bs,
            self.num_users,
            self.num_subcarriers,
            self.num_antennas,
            self.power_budget_dbm,
            self.min_rate,
            self.bandwidth,
            self.noise_psd,
            self.noise_figure,
            self.cell_radius,
            self.pathloss_exponent,
            self.carrier_freq,
            self.max_users_per_carrier,
            self.rng_seed,
            self.sic_mode,
        )
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kv = KvFile::parse(s)?;
        let cfg = NetworkConfig::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }
}

/// Parsed `key = value` file. Keys are consumed with [`KvFile::take`];
/// [`KvFile::finish`] rejects whatever was not consumed.
#[derive(Debug, Default, Clone)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: "empty key or value".into(),
                });
            }
            if entries
                .insert(key.to_string(), (line_no, value.to_string()))
                .is_some()
            {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KvFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|e| Error::ConfigSyntax {
                line,
                msg: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::ConfigSyntax {
                line,
                msg: format!("unknown key `{key}`"),
            }),
        }
    }
}
