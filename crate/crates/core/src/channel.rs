//! Random network layouts and mmWave channel realizations.
//!
//! Every link is a sum of `L` planar-wave paths between two uniform planar
//! arrays with half-wavelength spacing:
//!
//! `H = (1/√L) Σ_l α_l · a_row(φ_l, ψ_l) · a_col(φ'_l, ψ'_l)^H`
//!
//! where `a(·)` is the unit-modulus array response and
//! `α_l ~ CN(0, PL(d))`. With unit-modulus responses every entry of `H`
//! has variance `PL(d)`.

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::complex::{from_pairs, matrix_from_pairs, matrix_to_pairs, to_pairs};
use crate::numerics::{CMatrix, CVector, Real};

/// Log-distance path loss `PL(dB) = intercept + 10·exponent·log10(d) + ξ`,
/// `ξ ~ N(0, shadowing²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel {
    pub intercept_db: f64,
    pub exponent: f64,
    pub shadowing_db: f64,
}

impl PathLossModel {
    /// 28 GHz line-of-sight fit from the New York City measurement campaign.
    pub const LOS_28GHZ: Self = Self {
        intercept_db: 61.4,
        exponent: 2.0,
        shadowing_db: 5.8,
    };
    /// 28 GHz non-line-of-sight fit from the same campaign.
    pub const NLOS_28GHZ: Self = Self {
        intercept_db: 72.0,
        exponent: 2.92,
        shadowing_db: 8.7,
    };

    /// Mean path loss in dB, without shadowing. Distances below 1 m are clamped.
    pub fn loss_db(&self, distance_m: f64) -> f64 {
        self.intercept_db + 10.0 * self.exponent * distance_m.max(1.0).log10()
    }

    /// Linear path gain without shadowing.
    pub fn gain(&self, distance_m: f64) -> f64 {
        db_to_linear(-self.loss_db(distance_m))
    }

    /// Linear path gain with one shadowing draw.
    pub fn sample_gain<R: Rng + ?Sized>(&self, distance_m: f64, rng: &mut R) -> f64 {
        let xi: f64 = StandardNormal.sample(rng);
        db_to_linear(-(self.loss_db(distance_m) + self.shadowing_db * xi))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Physical and network constants of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// K, single-antenna users.
    pub users: usize,
    /// J, reflecting surfaces. Zero means no RIS in the cell.
    pub ris: usize,
    pub bs_rows: usize,
    pub bs_cols: usize,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub tx_power_dbm: f64,
    pub region_side_m: f64,
    /// L, propagation paths per link.
    pub paths: usize,
    pub seed: u64,
    pub bs_height_m: f64,
    pub ris_height_m: f64,
    pub user_height_m: f64,
    /// Applied to BS–RIS links.
    pub los: PathLossModel,
    /// Applied to BS–user and RIS–user links.
    pub nlos: PathLossModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            users: 4,
            ris: 6,
            bs_rows: 4,
            bs_cols: 4,
            ris_rows: 4,
            ris_cols: 4,
            carrier_hz: 28e9,
            bandwidth_hz: 1e9,
            noise_psd_dbm_hz: -174.0,
            tx_power_dbm: 20.0,
            region_side_m: 200.0,
            paths: 3,
            seed: 0,
            bs_height_m: 10.0,
            ris_height_m: 5.0,
            user_height_m: 1.5,
            los: PathLossModel::LOS_28GHZ,
            nlos: PathLossModel::NLOS_28GHZ,
        }
    }
}

impl ScenarioConfig {
    /// N
    pub fn bs_antennas(&self) -> usize {
        self.bs_rows * self.bs_cols
    }

    /// M
    pub fn ris_elements(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("users", self.users),
            ("bs_rows", self.bs_rows),
            ("bs_cols", self.bs_cols),
            ("ris_rows", self.ris_rows),
            ("ris_cols", self.ris_cols),
            ("paths", self.paths),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("region_side_m", self.region_side_m), ("bandwidth_hz", self.bandwidth_hz), ("carrier_hz", self.carrier_hz)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Noise power σ² in watts over the configured bandwidth.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_w(self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10())
    }

    /// Total BS transmit power P_t in watts.
    pub fn tx_power_w(&self) -> f64 {
        dbm_to_w(self.tx_power_dbm)
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    db_to_linear(dbm) / 1e3
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

/// Node positions of one drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub bs: Point,
    pub ris: Vec<Point>,
    pub users: Vec<Point>,
}

/// BS at the region centre; users and RISs i.i.d. uniform over the square.
pub fn sample_layout<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Layout {
    let side = cfg.region_side_m;
    let bs = Point {
        x: side / 2.0,
        y: side / 2.0,
        z: cfg.bs_height_m,
    };
    let mut drop = |z: f64| Point {
        x: rng.random::<f64>() * side,
        y: rng.random::<f64>() * side,
        z,
    };
    let users = (0..cfg.users).map(|_| drop(cfg.user_height_m)).collect();
    let ris = (0..cfg.ris).map(|_| drop(cfg.ris_height_m)).collect();
    Layout { bs, ris, users }
}

/// Unit-modulus UPA response with half-wavelength spacing, flattened row-major:
/// entry `(p, q)` is `exp(jπ(p·sinψ + q·cosψ·sinφ))`.
pub fn array_response<T: Real>(azimuth: f64, elevation: f64, rows: usize, cols: usize) -> CVector<T> {
    let (u, v) = (elevation.sin(), elevation.cos() * azimuth.sin());
    let mut out = CVector::zeros(rows * cols);
    for p in 0..rows {
        for q in 0..cols {
            let phase = std::f64::consts::PI * (p as f64 * u + q as f64 * v);
            out[p * cols + q] = Complex::new(T::lit(phase.cos()), T::lit(phase.sin()));
        }
    }
    out
}

/// [`array_response`] scaled to unit 2-norm.
pub fn steering_vector<T: Real>(azimuth: f64, elevation: f64, rows: usize, cols: usize) -> CVector<T> {
    let scale = T::lit(1.0 / ((rows * cols) as f64).sqrt());
    array_response::<T>(azimuth, elevation, rows, cols).mapv(|z| z * scale)
}

/// One propagation path. The `row_*` angles belong to the array indexing the
/// rows of the channel matrix, the `col_*` angles to the column array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: [f64; 2],
    pub row_azimuth: f64,
    pub row_elevation: f64,
    pub col_azimuth: f64,
    pub col_elevation: f64,
}

pub fn sample_paths<R: Rng + ?Sized>(count: usize, path_gain: f64, rng: &mut R) -> Vec<PathParams> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let sd = (path_gain / 2.0).sqrt();
    (0..count)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            PathParams {
                gain: [sd * re, sd * im],
                row_azimuth: rng.random_range(-PI..=PI),
                row_elevation: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
                col_azimuth: rng.random_range(-PI..=PI),
                col_elevation: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
            }
        })
        .collect()
}

/// `(1/√L) Σ_l α_l a_row a_col^H` for arrays of the given `(rows, cols)` shapes.
pub fn channel_from_paths<T: Real>(paths: &[PathParams], row_array: (usize, usize), col_array: (usize, usize)) -> CMatrix<T> {
    let (nr, nc) = (row_array.0 * row_array.1, col_array.0 * col_array.1);
    let mut h: CMatrix<T> = Array2::zeros((nr, nc));
    let norm = T::lit(1.0 / (paths.len().max(1) as f64).sqrt());
    for path in paths {
        let alpha = Complex::new(T::lit(path.gain[0]), T::lit(path.gain[1])) * norm;
        let a_row = array_response::<T>(path.row_azimuth, path.row_elevation, row_array.0, row_array.1);
        let a_col = array_response::<T>(path.col_azimuth, path.col_elevation, col_array.0, col_array.1);
        for i in 0..nr {
            let left = alpha * a_row[i];
            for j in 0..nc {
                h[(i, j)] += left * a_col[j].conj();
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// `h_k`, N × 1.
    BsUser,
    /// `G_j`, N × M.
    BsRis,
    /// `f_{j,k}`, M × 1.
    RisUser,
}

/// Draws one link between `a` and `b`.
pub fn sample_channel<T: Real, R: Rng + ?Sized>(cfg: &ScenarioConfig, a: &Point, b: &Point, link: LinkKind, rng: &mut R) -> CMatrix<T> {
    let d = a.distance(b);
    let bs = (cfg.bs_rows, cfg.bs_cols);
    let surface = (cfg.ris_rows, cfg.ris_cols);
    let (model, rows, cols) = match link {
        LinkKind::BsUser => (&cfg.nlos, bs, (1, 1)),
        LinkKind::BsRis => (&cfg.los, bs, surface),
        LinkKind::RisUser => (&cfg.nlos, surface, (1, 1)),
    };
    let gain = model.sample_gain(d, rng);
    let paths = sample_paths(cfg.paths, gain, rng);
    channel_from_paths(&paths, rows, cols)
}

/// One draw of every link in the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T: Real> {
    pub layout: Layout,
    /// `h_k ∈ C^N`, BS to user k.
    pub direct: Vec<CVector<T>>,
    /// `G_j ∈ C^{N×M}`, BS to RIS j.
    pub bs_ris: Vec<CMatrix<T>>,
    /// `f_{j,k} ∈ C^M`, RIS j to user k, indexed `[j][k]`.
    pub ris_user: Vec<Vec<CVector<T>>>,
}

impl<T: Real> ChannelRealization<T> {
    pub fn users(&self) -> usize {
        self.direct.len()
    }

    pub fn ris(&self) -> usize {
        self.bs_ris.len()
    }

    pub fn bs_antennas(&self) -> usize {
        self.direct.first().map_or(0, |h| h.len())
    }

    /// M, or zero when the cell has no RIS.
    pub fn ris_elements(&self) -> usize {
        self.bs_ris.first().map_or(0, |g| g.ncols())
    }

    /// The same drop with every RIS removed.
    pub fn without_ris(&self) -> Self {
        Self {
            layout: Layout {
                ris: Vec::new(),
                ..self.layout.clone()
            },
            direct: self.direct.clone(),
            bs_ris: Vec::new(),
            ris_user: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (k, j, n, m) = (self.users(), self.ris(), self.bs_antennas(), self.ris_elements());
        if k == 0 {
            return Err(Error::Config("realization has no users".into()));
        }
        for h in &self.direct {
            if h.len() != n {
                return Err(Error::dimension("direct channel length", n, h.len()));
            }
        }
        for g in &self.bs_ris {
            if g.dim() != (n, m) {
                return Err(Error::dimension("BS-RIS channel rows", n, g.nrows()));
            }
        }
        if self.ris_user.len() != j {
            return Err(Error::dimension("RIS-user channel sets", j, self.ris_user.len()));
        }
        for row in &self.ris_user {
            if row.len() != k {
                return Err(Error::dimension("RIS-user channels per RIS", k, row.len()));
            }
            for f in row {
                if f.len() != m {
                    return Err(Error::dimension("RIS-user channel length", m, f.len()));
                }
            }
        }
        let finite = |z: &Complex<T>| z.re.is_finite() && z.im.is_finite();
        let all_finite = self.direct.iter().all(|h| h.iter().all(finite))
            && self.bs_ris.iter().all(|g| g.iter().all(finite))
            && self.ris_user.iter().flatten().all(|f| f.iter().all(finite));
        if !all_finite {
            return Err(Error::NonFinite("channel realization".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ChannelDump::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ChannelDump>(s)?.try_into()
    }
}

/// Draws a layout and all channels: `h_k` for each user, then `G_j` for each
/// RIS, then `f_{j,k}` in `(j, k)` order.
pub fn sample_realization<T: Real, R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> ChannelRealization<T> {
    let layout = sample_layout(cfg, rng);
    let direct = layout
        .users
        .iter()
        .map(|u| sample_channel::<T, _>(cfg, &layout.bs, u, LinkKind::BsUser, rng).column(0).to_owned())
        .collect();
    let bs_ris = layout
        .ris
        .iter()
        .map(|r| sample_channel::<T, _>(cfg, &layout.bs, r, LinkKind::BsRis, rng))
        .collect();
    let ris_user = layout
        .ris
        .iter()
        .map(|r| {
            layout
                .users
                .iter()
                .map(|u| sample_channel::<T, _>(cfg, r, u, LinkKind::RisUser, rng).column(0).to_owned())
                .collect()
        })
        .collect();
    ChannelRealization {
        layout,
        direct,
        bs_ris,
        ris_user,
    }
}

/// Independent random stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Realizations `first..first + count` of the stream family `seed`. Each
/// sample owns its own stream, so the result does not depend on thread count.
pub fn sample_batch<T: Real>(cfg: &ScenarioConfig, seed: u64, first: u64, count: usize) -> Vec<ChannelRealization<T>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_realization(cfg, &mut stream_rng(seed, first + i)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ChannelDump {
    layout: Layout,
    direct: Vec<Vec<[f64; 2]>>,
    bs_ris: Vec<Vec<Vec<[f64; 2]>>>,
    ris_user: Vec<Vec<Vec<[f64; 2]>>>,
}

impl<T: Real> From<&ChannelRealization<T>> for ChannelDump {
    fn from(r: &ChannelRealization<T>) -> Self {
        Self {
            layout: r.layout.clone(),
            direct: r.direct.iter().map(|h| to_pairs(h.view())).collect(),
            bs_ris: r.bs_ris.iter().map(|g| matrix_to_pairs(g.view())).collect(),
            ris_user: r.ris_user.iter().map(|row| row.iter().map(|f| to_pairs(f.view())).collect()).collect(),
        }
    }
}

impl<T: Real> TryFrom<ChannelDump> for ChannelRealization<T> {
    type Error = Error;

    fn try_from(d: ChannelDump) -> Result<Self> {
        let out = Self {
            layout: d.layout,
            direct: d.direct.iter().map(|h| from_pairs(h)).collect(),
            bs_ris: d.bs_ris.iter().map(|g| matrix_from_pairs(g)).collect::<Result<_>>()?,
            ris_user: d.ris_user.iter().map(|row| row.iter().map(|f| from_pairs(f)).collect()).collect(),
        };
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn noise_power_from_psd() {
        let mut cfg = ScenarioConfig::default();
        assert_abs_diff_eq!(w_to_dbm(cfg.noise_power_w()), -84.0, epsilon = 1e-9);
        cfg.bandwidth_hz = 1.0;
        assert_abs_diff_eq!(w_to_dbm(cfg.noise_power_w()), -174.0, epsilon = 1e-9);
        cfg.bandwidth_hz = 10e6;
        assert_abs_diff_eq!(w_to_dbm(cfg.noise_power_w()), -104.0, epsilon = 1e-9);
    }

    #[test]
    fn broadside_steering_is_flat() {
        let a = steering_vector::<f64>(0.0, 0.0, 2, 2);
        for z in a.iter() {
            assert_abs_diff_eq!(z.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn endfire_pair_has_half_turn_phase_step() {
        let a = array_response::<f64>(std::f64::consts::FRAC_PI_2, 0.0, 1, 2);
        let step = (a[1] / a[0]).arg();
        assert_abs_diff_eq!(step.abs(), std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn single_path_channel_is_outer_product() {
        let path = PathParams {
            gain: [1.0, 0.0],
            row_azimuth: 0.3,
            row_elevation: -0.2,
            col_azimuth: 1.1,
            col_elevation: 0.4,
        };
        let h = channel_from_paths::<f64>(&[path], (2, 2), (1, 3));
        let ar = array_response::<f64>(0.3, -0.2, 2, 2);
        let at = array_response::<f64>(1.1, 0.4, 1, 3);
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(h[(i, j)], ar[i] * at[j].conj());
            }
        }
    }

    #[test]
    fn layout_is_deterministic_and_handles_no_ris() {
        let mut cfg = ScenarioConfig::default();
        let a = sample_layout(&cfg, &mut stream_rng(7, 0));
        let b = sample_layout(&cfg, &mut stream_rng(7, 0));
        assert_eq!(a, b);
        cfg.ris = 0;
        assert!(sample_layout(&cfg, &mut stream_rng(7, 0)).ris.is_empty());
    }

    #[test]
    fn layout_coordinates_are_centred() {
        let cfg = ScenarioConfig {
            users: 1,
            ris: 1,
            ..Default::default()
        };
        let mut rng = stream_rng(3, 0);
        let n = 10_000;
        let (mut sx, mut sy, mut rx) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let l = sample_layout(&cfg, &mut rng);
            sx += l.users[0].x;
            sy += l.users[0].y;
            rx += l.ris[0].x;
        }
        // uniform on [0, 200]: sd = 200/√12, standard error = sd/√n
        let se = 200.0 / 12f64.sqrt() / (n as f64).sqrt();
        for mean in [sx / n as f64, sy / n as f64, rx / n as f64] {
            assert!((mean - 100.0).abs() < 3.0 * se, "mean {mean}");
        }
    }

    #[test]
    fn direct_channel_power_matches_path_gain() {
        let cfg = ScenarioConfig {
            nlos: PathLossModel {
                shadowing_db: 0.0,
                ..PathLossModel::NLOS_28GHZ
            },
            ..Default::default()
        };
        let bs = Point { x: 0.0, y: 0.0, z: 10.0 };
        let user = Point { x: 60.0, y: 80.0, z: 10.0 };
        let mut rng = stream_rng(11, 0);
        let draws = 10_000;
        let n = cfg.bs_antennas() as f64;
        let mean = (0..draws)
            .map(|_| {
                let h = sample_channel::<f64, _>(&cfg, &bs, &user, LinkKind::BsUser, &mut rng);
                h.iter().map(|z| z.norm_sqr()).sum::<f64>() / n
            })
            .sum::<f64>()
            / draws as f64;
        let expected = cfg.nlos.gain(100.0);
        assert!((mean / expected - 1.0).abs() < 0.05, "ratio {}", mean / expected);
    }

    #[test]
    fn shadowed_power_matches_lognormal_mean() {
        let model = PathLossModel {
            shadowing_db: 2.0,
            ..PathLossModel::LOS_28GHZ
        };
        let mut rng = stream_rng(12, 0);
        let draws = 10_000;
        let mean = (0..draws).map(|_| model.sample_gain(50.0, &mut rng)).sum::<f64>() / draws as f64;
        // E[10^(-ξ/10)] = exp((σ ln10 / 10)² / 2)
        let s = 2.0 * std::f64::consts::LN_10 / 10.0;
        let expected = model.gain(50.0) * (s * s / 2.0).exp();
        assert!((mean / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_distance_is_clamped() {
        let g = PathLossModel::LOS_28GHZ.gain(0.0);
        assert_eq!(g, PathLossModel::LOS_28GHZ.gain(1.0));
        assert!(g.is_finite() && g > 0.0);
    }

    #[test]
    fn realization_is_bit_identical_for_fixed_seed() {
        let cfg = ScenarioConfig::default();
        let a: ChannelRealization<f64> = sample_realization(&cfg, &mut stream_rng(5, 2));
        let b: ChannelRealization<f64> = sample_realization(&cfg, &mut stream_rng(5, 2));
        assert_eq!(a, b);
        let batch = sample_batch::<f64>(&cfg, 5, 2, 3);
        assert_eq!(batch[0], a);
    }

    #[test]
    fn json_dump_round_trips() {
        let cfg = ScenarioConfig {
            users: 2,
            ris: 2,
            bs_rows: 1,
            bs_cols: 2,
            ris_rows: 1,
            ris_cols: 3,
            ..Default::default()
        };
        let r: ChannelRealization<f64> = sample_realization(&cfg, &mut stream_rng(1, 1));
        let json = r.to_json().unwrap();
        assert!(json.contains("\"direct\":[[["));
        assert_eq!(ChannelRealization::<f64>::from_json(&json).unwrap(), r);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ScenarioConfig { users: 0, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { region_side_m: 0.0, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { ris: 0, ..Default::default() }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn steering_vector_has_unit_norm(az in -PI..PI, el in -FRAC_PI_2..FRAC_PI_2, rows in 1usize..6, cols in 1usize..6) {
            let a = steering_vector::<f64>(az, el, rows, cols);
            let n: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }

        #[test]
        fn realization_dimensions_follow_config(k in 1usize..5, j in 0usize..4, br in 1usize..3, bc in 1usize..3, rr in 1usize..3, rc in 1usize..3, seed in 0u64..1000) {
            let cfg = ScenarioConfig { users: k, ris: j, bs_rows: br, bs_cols: bc, ris_rows: rr, ris_cols: rc, ..Default::default() };
            let r: ChannelRealization<f64> = sample_realization(&cfg, &mut stream_rng(seed, 0));
            prop_assert_eq!(r.users(), k);
            prop_assert_eq!(r.ris(), j);
            prop_assert!(r.validate().is_ok());
            prop_assert_eq!(r.bs_antennas(), br * bc);
            if j > 0 {
                prop_assert_eq!(r.ris_elements(), rr * rc);
            }
        }
    }
}
