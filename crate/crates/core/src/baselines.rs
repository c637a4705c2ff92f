//! Conventional reference designs and degenerate controls.
//!
//! All of them give every user the same power `P_t/K` and return
//! unit-modulus RIS coefficients, so their outputs are directly comparable
//! with the network's.
//!
//! The phase updates work on the conjugated effective channel
//! `h̃*_k = h*_k + Σ_{j,m} v_{j,m} a_{j,k,m}` with `a_{j,k,m} = f*_{j,k,m} G_j[:, m]`.
//! Changing a single `v_{j,m}` with everything else fixed, the unit-modulus value
//! maximising `Σ_{k∈S} ‖h̃_k‖²` is the phase of `Σ_{k∈S} a^H r_k`, where `r_k`
//! is the rest of the channel. Both aligned baselines are coordinate ascent on
//! that surrogate, so it never decreases.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, ScenarioConfig};
use crate::error::{Error, Result};
use crate::gnn::BeamformingSolution;
use crate::numerics::complex::{hermitian, inverse, norm2};
use crate::numerics::{CMatrix, CVector, Real};
use crate::objective::effective_channels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MrtAligned,
    ZfPhaseOpt,
    #[serde(rename = "random_phase")]
    RandomPhaseMrt,
    NoRis,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::MrtAligned, Self::ZfPhaseOpt, Self::RandomPhaseMrt, Self::NoRis];

    pub fn name(self) -> &'static str {
        match self {
            Self::MrtAligned => "mrt_aligned",
            Self::ZfPhaseOpt => "zf_phase_opt",
            Self::RandomPhaseMrt => "random_phase",
            Self::NoRis => "no_ris",
        }
    }

    /// `rng` is only consumed by [`BaselineKind::RandomPhaseMrt`].
    pub fn run<T: Real, R: Rng + ?Sized>(self, real: &ChannelRealization<T>, cfg: &BaselineConfig, rng: &mut R) -> Result<BeamformingSolution<T>> {
        match self {
            Self::MrtAligned => mrt_aligned(real, cfg),
            Self::ZfPhaseOpt => zf_phase_opt(real, cfg),
            Self::RandomPhaseMrt => random_phase(real, cfg, rng),
            Self::NoRis => no_ris(real, cfg),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrt_aligned" | "mrt" => Ok(Self::MrtAligned),
            "zf_phase_opt" | "zf" => Ok(Self::ZfPhaseOpt),
            "random_phase" | "random_phase_mrt" => Ok(Self::RandomPhaseMrt),
            "no_ris" => Ok(Self::NoRis),
            other => Err(Error::Config(format!(
                "unknown baseline '{other}' (expected one of mrt_aligned, zf_phase_opt, random_phase, no_ris)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// P_t in watts.
    pub tx_power_w: f64,
    /// Alignment sweeps over all RISs for `mrt_aligned`.
    pub align_sweeps: usize,
    /// ZF / phase alternation rounds for `zf_phase_opt`.
    pub zf_rounds: usize,
    /// Diagonal loading, relative to the mean diagonal of `H̃H̃^H`, used only
    /// when that matrix is numerically singular.
    pub zf_ridge: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tx_power_w: 0.1,
            align_sweeps: 2,
            zf_rounds: 5,
            zf_ridge: 1e-10,
        }
    }
}

impl BaselineConfig {
    pub fn from_scenario(scenario: &ScenarioConfig) -> Self {
        Self {
            tx_power_w: scenario.tx_power_w(),
            ..Self::default()
        }
    }
}

fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Conjugated effective channels `h̃*_k` (rows), given the phases.
fn conj_rows<T: Real>(real: &ChannelRealization<T>, phases: &[CVector<T>]) -> Result<Vec<CVector<T>>> {
    Ok(effective_channels(real, phases)?.into_iter().map(|h| h.mapv(|z| z.conj())).collect())
}

/// `a_{j,k,m}` as an N-vector.
fn cascade_term<T: Real>(real: &ChannelRealization<T>, j: usize, k: usize, m: usize) -> CVector<T> {
    let f = real.ris_user[j][k][m].conj();
    real.bs_ris[j].column(m).mapv(|g| f * g)
}

/// One pass of exact coordinate ascent over the elements of RIS `j` on
/// `Σ_{k∈users} ‖h̃_k‖²`. `rows` holds the current `h̃*_k` of every user and is
/// kept in sync.
fn co_phase<T: Real>(real: &ChannelRealization<T>, j: usize, users: &[usize], phases: &mut [CVector<T>], rows: &mut [CVector<T>]) {
    for m in 0..real.ris_elements() {
        let terms: Vec<CVector<T>> = (0..real.users()).map(|k| cascade_term(real, j, k, m)).collect();
        let old = phases[j][m];
        let mut corr: Complex<T> = czero();
        for &k in users {
            let rest = &rows[k] - &terms[k].mapv(|a| a * old);
            corr += terms[k].iter().zip(rest.iter()).fold(czero::<T>(), |acc, (a, r)| acc + a.conj() * r);
        }
        let mag = corr.norm();
        // a zero correlation leaves the objective flat in this coordinate
        let new = if mag > T::zero() { corr / mag } else { old };
        if new != old {
            for (row, term) in rows.iter_mut().zip(&terms) {
                row.zip_mut_with(term, |r, &a| *r += a * (new - old));
            }
            phases[j][m] = new;
        }
    }
}

/// `Σ_k ‖h̃_k‖²`.
pub fn channel_energy<T: Real>(real: &ChannelRealization<T>, phases: &[CVector<T>]) -> Result<T> {
    Ok(effective_channels(real, phases)?.iter().map(|h| norm2(h.view()).powi(2)).sum())
}

/// `w_k = sqrt(P_t/K) · h̃_k/‖h̃_k‖`. A zero channel gets the first antenna.
pub fn mrt<T: Real>(effective: &[CVector<T>], tx_power: T, diagnostics: &mut Vec<String>) -> Vec<CVector<T>> {
    let amp = (tx_power / T::from_usize(effective.len().max(1)).unwrap()).sqrt();
    effective
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let norm = norm2(h.view());
            if norm > T::zero() {
                h.mapv(|z| z * (amp / norm))
            } else {
                diagnostics.push(format!("user {k}: zero effective channel, MRT beam set to first antenna"));
                let mut w = Array1::from_elem(h.len(), czero());
                if !w.is_empty() {
                    w[0] = Complex::new(amp, T::zero());
                }
                w
            }
        })
        .collect()
}

/// Zero-forcing directions `H̃^H(H̃H̃^H)^{-1}`, each column scaled to power
/// `P_t/K`. Returns the beams and the ridge if one was needed.
pub fn zero_forcing<T: Real>(effective: &[CVector<T>], tx_power: T, ridge_rel: T) -> Result<(Vec<CVector<T>>, Option<T>)> {
    let k = effective.len();
    let n = effective.first().map_or(0, |h| h.len());
    if k > n {
        return Err(Error::Config(format!("zero forcing needs K ≤ N, got K = {k}, N = {n}")));
    }
    // rows of H̃ are h̃_k^H
    let h: CMatrix<T> = Array2::from_shape_fn((k, n), |(r, c)| effective[r][c].conj());
    let hh = hermitian(h.view());
    let gram = h.dot(&hh);
    let inv = inverse(gram.view(), ridge_rel)?;
    let directions = hh.dot(&inv.matrix);
    let amp = (tx_power / T::from_usize(k.max(1)).unwrap()).sqrt();
    let beams = (0..k)
        .map(|c| {
            let col = directions.column(c);
            let norm = norm2(col);
            if norm > T::zero() {
                col.mapv(|z| z * (amp / norm))
            } else {
                let mut w = Array1::from_elem(n, czero());
                w[0] = Complex::new(amp, T::zero());
                w
            }
        })
        .collect();
    Ok((beams, inv.ridge))
}

fn unit_phases<T: Real>(real: &ChannelRealization<T>) -> Vec<CVector<T>> {
    vec![Array1::from_elem(real.ris_elements(), Complex::new(T::one(), T::zero())); real.ris()]
}

/// Aligns each RIS to the user with the strongest effective channel, then
/// applies MRT.
///
/// Each sweep visits the RISs in order; before RIS `j` is aligned its target
/// `k*_j = argmax_k ‖h̃_k‖` is recomputed under the current phases, ties going
/// to the lowest index. Phases start at 1.
pub fn mrt_aligned<T: Real>(real: &ChannelRealization<T>, cfg: &BaselineConfig) -> Result<BeamformingSolution<T>> {
    real.validate()?;
    let mut phases = unit_phases(real);
    let mut rows = conj_rows(real, &phases)?;
    for _ in 0..cfg.align_sweeps {
        for j in 0..real.ris() {
            let mut best = 0;
            let mut best_gain = norm2(rows[0].view());
            for (k, row) in rows.iter().enumerate().skip(1) {
                let g = norm2(row.view());
                if g > best_gain {
                    best = k;
                    best_gain = g;
                }
            }
            co_phase(real, j, &[best], &mut phases, &mut rows);
        }
    }
    let mut diagnostics = Vec::new();
    let effective = effective_channels(real, &phases)?;
    let beamformers = mrt(&effective, T::lit(cfg.tx_power_w), &mut diagnostics);
    Ok(BeamformingSolution {
        beamformers,
        phases,
        diagnostics,
    })
}

/// Alternates zero-forcing beams with phase updates, then finishes with a ZF
/// step on the final phases.
pub fn zf_phase_opt<T: Real>(real: &ChannelRealization<T>, cfg: &BaselineConfig) -> Result<BeamformingSolution<T>> {
    Ok(zf_phase_opt_trace(real, cfg)?.0)
}

/// [`zf_phase_opt`] plus `Σ_k ‖h̃_k‖²` at the start and after every round.
///
/// The phase step maximises the channel-energy surrogate rather than the sum
/// rate of the current ZF beams, so it does not use them.
pub fn zf_phase_opt_trace<T: Real>(real: &ChannelRealization<T>, cfg: &BaselineConfig) -> Result<(BeamformingSolution<T>, Vec<T>)> {
    real.validate()?;
    if real.users() > real.bs_antennas() {
        return Err(Error::Config(format!(
            "zf_phase_opt needs K ≤ N, got K = {}, N = {}",
            real.users(),
            real.bs_antennas()
        )));
    }
    let tx_power = T::lit(cfg.tx_power_w);
    let ridge_rel = T::lit(cfg.zf_ridge);
    let everyone: Vec<usize> = (0..real.users()).collect();
    let mut phases = unit_phases(real);
    let mut rows = conj_rows(real, &phases)?;
    let energy = |rows: &[CVector<T>]| rows.iter().map(|r| norm2(r.view()).powi(2)).sum::<T>();
    let mut trace = vec![energy(&rows)];
    let mut diagnostics = Vec::new();
    let note_ridge = |ridge: Option<T>, diagnostics: &mut Vec<String>| {
        if let Some(r) = ridge {
            let msg = format!("zero forcing: singular channel Gram matrix, ridge {r} added");
            log::warn!("{msg}");
            diagnostics.push(msg);
        }
    };
    for _ in 0..cfg.zf_rounds {
        let effective = effective_channels(real, &phases)?;
        let (_, ridge) = zero_forcing(&effective, tx_power, ridge_rel)?;
        note_ridge(ridge, &mut diagnostics);
        for j in 0..real.ris() {
            co_phase(real, j, &everyone, &mut phases, &mut rows);
        }
        trace.push(energy(&rows));
    }
    let effective = effective_channels(real, &phases)?;
    let (beamformers, ridge) = zero_forcing(&effective, tx_power, ridge_rel)?;
    note_ridge(ridge, &mut diagnostics);
    Ok((
        BeamformingSolution {
            beamformers,
            phases,
            diagnostics,
        },
        trace,
    ))
}

/// Phases uniform in `[−π, π)`, MRT on the resulting channels.
pub fn random_phase<T: Real, R: Rng + ?Sized>(real: &ChannelRealization<T>, cfg: &BaselineConfig, rng: &mut R) -> Result<BeamformingSolution<T>> {
    real.validate()?;
    let pi = std::f64::consts::PI;
    let phases: Vec<CVector<T>> = (0..real.ris())
        .map(|_| {
            (0..real.ris_elements())
                .map(|_| {
                    let theta = rng.random_range(-pi..pi);
                    Complex::new(T::lit(theta.cos()), T::lit(theta.sin()))
                })
                .collect()
        })
        .collect();
    let mut diagnostics = Vec::new();
    let effective = effective_channels(real, &phases)?;
    let beamformers = mrt(&effective, T::lit(cfg.tx_power_w), &mut diagnostics);
    Ok(BeamformingSolution {
        beamformers,
        phases,
        diagnostics,
    })
}

/// MRT on the direct channels. The returned solution carries no phase
/// vectors, which the objective evaluates as a cell without RIS.
pub fn no_ris<T: Real>(real: &ChannelRealization<T>, cfg: &BaselineConfig) -> Result<BeamformingSolution<T>> {
    real.validate()?;
    let mut diagnostics = Vec::new();
    let beamformers = mrt(&real.direct, T::lit(cfg.tx_power_w), &mut diagnostics);
    Ok(BeamformingSolution {
        beamformers,
        phases: Vec::new(),
        diagnostics,
    })
}
