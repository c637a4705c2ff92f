//! Effective channels, SINR and sum rate.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::gnn::BeamformingSolution;
use crate::numerics::complex::to_pairs;
use crate::numerics::{CVector, Real};

/// `h̃_k` for every user, from `h̃*_k = h*_k + Σ_j v_jᵀ diag(f*_{j,k}) G_jᵀ`.
///
/// `phases` holds one unit-modulus vector `v_j` per RIS.
pub fn effective_channels<T: Real>(real: &ChannelRealization<T>, phases: &[CVector<T>]) -> Result<Vec<CVector<T>>> {
    if phases.len() != real.ris() {
        return Err(Error::dimension("phase vectors (one per RIS)", real.ris(), phases.len()));
    }
    let m = real.ris_elements();
    for v in phases {
        if v.len() != m {
            return Err(Error::dimension("phase vector length", m, v.len()));
        }
    }
    let out = (0..real.users())
        .map(|k| {
            // row form h̃*_k, conjugated back at the end
            let mut row: CVector<T> = real.direct[k].mapv(|z| z.conj());
            for (j, v) in phases.iter().enumerate() {
                let f = &real.ris_user[j][k];
                let g = &real.bs_ris[j];
                for mi in 0..m {
                    let coef = v[mi] * f[mi].conj();
                    for (n, r) in row.iter_mut().enumerate() {
                        *r += coef * g[(n, mi)];
                    }
                }
            }
            row.mapv_into(|z| z.conj())
        })
        .collect();
    Ok(out)
}

/// `γ_k = |h̃_k^H w_k|² / (Σ_{k'≠k} |h̃_k^H w_{k'}|² + σ²)`.
pub fn sinr<T: Real>(effective: &[CVector<T>], beams: &[CVector<T>], noise: T) -> Result<Vec<T>> {
    if effective.is_empty() {
        return Err(Error::Config("SINR needs at least one user".into()));
    }
    if beams.len() != effective.len() {
        return Err(Error::dimension("beamformers (one per user)", effective.len(), beams.len()));
    }
    if !(noise > T::zero()) {
        return Err(Error::Config("noise power must be positive".into()));
    }
    let n = effective[0].len();
    if let Some(bad) = effective.iter().chain(beams).find(|x| x.len() != n) {
        return Err(Error::dimension("antenna count", n, bad.len()));
    }
    let gains: Vec<Vec<T>> = effective
        .iter()
        .map(|h| {
            beams
                .iter()
                .map(|w| h.iter().zip(w).fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b).norm_sqr())
                .collect()
        })
        .collect();
    Ok(gains
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let interference: T = row.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, &p)| p).sum();
            row[k] / (interference + noise)
        })
        .collect())
}

/// `Σ_k log₂(1 + γ_k)` in bit/s/Hz.
pub fn sum_rate<T: Real>(sinr: &[T]) -> T {
    sinr.iter().map(|&g| (T::one() + g).log2()).sum()
}

/// Negative mini-batch mean of the sum rate.
pub fn loss<T: Real>(sum_rates: &[T]) -> Result<T> {
    if sum_rates.is_empty() {
        return Err(Error::Config("loss over an empty batch".into()));
    }
    Ok(-sum_rates.iter().copied().sum::<T>() / T::from_usize(sum_rates.len()).unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport<T: Real> {
    pub effective: Vec<CVector<T>>,
    pub sinr: Vec<T>,
    pub rates: Vec<T>,
    pub sum_rate: T,
}

impl<T: Real> RateReport<T> {
    /// Rates of `solution` on `real`. A solution without phase vectors on a
    /// realization with RISs is evaluated on the direct links only, as in a
    /// cell without RIS.
    pub fn evaluate(real: &ChannelRealization<T>, solution: &BeamformingSolution<T>, noise: T) -> Result<Self> {
        let effective = if solution.phases.is_empty() && real.ris() > 0 {
            effective_channels(&real.without_ris(), &[])?
        } else {
            effective_channels(real, &solution.phases)?
        };
        let sinr = sinr(&effective, &solution.beamformers, noise)?;
        let rates: Vec<T> = sinr.iter().map(|&g| (T::one() + g).log2()).collect();
        let sum_rate = rates.iter().copied().sum();
        Ok(Self {
            effective,
            sinr,
            rates,
            sum_rate,
        })
    }

    /// Sum throughput in bit/s for the given bandwidth.
    pub fn throughput_bps(&self, bandwidth_hz: f64) -> f64 {
        self.sum_rate.as_f64() * bandwidth_hz
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump {
            effective: Vec<Vec<[f64; 2]>>,
            sinr: Vec<f64>,
            rates: Vec<f64>,
            sum_rate: f64,
        }
        Ok(serde_json::to_string(&Dump {
            effective: self.effective.iter().map(|h| to_pairs(h.view())).collect(),
            sinr: self.sinr.iter().map(|g| g.as_f64()).collect(),
            rates: self.rates.iter().map(|r| r.as_f64()).collect(),
            sum_rate: self.sum_rate.as_f64(),
        })?)
    }

    pub const CSV_HEADER: &'static str = "user,sinr,rate";

    /// One `user,sinr,rate` line per user.
    pub fn csv_rows(&self) -> Vec<String> {
        self.sinr
            .iter()
            .zip(&self.rates)
            .enumerate()
            .map(|(k, (g, r))| format!("{k},{g},{r}"))
            .collect()
    }
}

/// Mean, sample standard deviation and count of a set of sum rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }

    /// Half-width of the two-sided 95% normal confidence interval of the mean.
    pub fn ci95(&self) -> f64 {
        1.959_963_984_540_054 * self.std / (self.n as f64).sqrt()
    }
}

/// Statistics of the per-sample differences `a_i − b_i` of two paired runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub difference: Summary,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl PairedComparison {
    pub fn new(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::dimension("paired samples", a.len(), b.len()));
        }
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let difference = Summary::of(&diffs);
        let half = difference.ci95();
        Ok(Self {
            difference,
            ci95_low: difference.mean - half,
            ci95_high: difference.mean + half,
        })
    }

    /// `a` beats `b` at 95% confidence.
    pub fn significantly_positive(&self) -> bool {
        self.ci95_low > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_realization, stream_rng, ScenarioConfig};
    use crate::numerics::complex::{diag, elementwise_exp_i};
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn small_cfg(k: usize, j: usize, n: usize, m: usize) -> ScenarioConfig {
        ScenarioConfig {
            users: k,
            ris: j,
            bs_rows: 1,
            bs_cols: n,
            ris_rows: 1,
            ris_cols: m,
            ..Default::default()
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[7.0]).std, 0.0);
        assert!(Summary::of(&[]).mean.is_nan());
        let p = PairedComparison::new(&[2.0, 3.0, 4.1], &[1.0, 2.0, 3.0]).unwrap();
        assert!(p.significantly_positive());
        assert!(!PairedComparison::new(&[1.0, 3.0], &[2.0, 2.0]).unwrap().significantly_positive());
        assert!(PairedComparison::new(&[1.0], &[]).is_err());
    }

    #[test]
    fn no_ris_effective_channel_is_direct() {
        let r: ChannelRealization<f64> = sample_realization(&small_cfg(3, 0, 4, 2), &mut stream_rng(0, 0));
        assert_eq!(effective_channels(&r, &[]).unwrap(), r.direct);
    }

    #[test]
    fn zero_phases_add_plain_reflection() {
        let r: ChannelRealization<f64> = sample_realization(&small_cfg(2, 1, 3, 2), &mut stream_rng(1, 0));
        let ones = vec![Array1::from_elem(2, c(1.0, 0.0))];
        let eff = effective_channels(&r, &ones).unwrap();
        for k in 0..2 {
            // h* + f* G
            let fh = r.ris_user[0][k].mapv(|z| z.conj());
            let refl = fh.dot(&r.bs_ris[0].t());
            for n in 0..3 {
                let expect = r.direct[k][n].conj() + refl[n];
                assert!((eff[k][n].conj() - expect).norm() < 1e-18);
            }
        }
    }

    #[test]
    fn effective_channel_matches_theta_form() {
        let mut rng = stream_rng(2, 0);
        for _ in 0..20 {
            let r: ChannelRealization<f64> = sample_realization(&small_cfg(3, 3, 4, 3), &mut rng);
            let phases: Vec<CVector<f64>> = (0..3).map(|_| elementwise_exp_i(Array1::from_shape_fn(3, |_| rng.random::<f64>() * 7.0).view())).collect();
            let eff = effective_channels(&r, &phases).unwrap();
            for k in 0..3 {
                let mut row = r.direct[k].mapv(|z| z.conj());
                for j in 0..3 {
                    let theta = diag(phases[j].view());
                    row = row + r.ris_user[j][k].mapv(|z| z.conj()).dot(&theta).dot(&r.bs_ris[j].t());
                }
                let scale = row.iter().map(|z| z.norm()).fold(0.0, f64::max);
                for n in 0..4 {
                    assert!((eff[k][n].conj() - row[n]).norm() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn single_user_sinr_is_snr() {
        let h = vec![array![c(1.0, 1.0), c(0.0, 2.0)]];
        let w = vec![array![c(0.5, 0.0), c(0.0, 0.5)]];
        let g = sinr(&h, &w, 0.25).unwrap();
        // h^H w = (1-j)0.5 + (-2j)(0.5j) = 0.5 - 0.5j + 1
        let signal = c(1.5, -0.5).norm_sqr();
        assert!((g[0] - signal / 0.25).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_beams_have_no_interference() {
        let h = vec![array![c(1.0, 0.0), c(0.0, 0.0)], array![c(0.0, 0.0), c(1.0, 0.0)]];
        let w = vec![array![c(2.0, 0.0), c(0.0, 0.0)], array![c(0.0, 0.0), c(0.0, 3.0)]];
        let g = sinr(&h, &w, 1.0).unwrap();
        assert_eq!(g, vec![4.0, 9.0]);
    }

    #[test]
    fn sinr_matches_triple_loop() {
        let mut rng = stream_rng(3, 0);
        let rnd = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> CVector<f64> { Array1::from_shape_fn(n, |_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)) };
        let h: Vec<_> = (0..3).map(|_| rnd(&mut rng, 4)).collect();
        let w: Vec<_> = (0..3).map(|_| rnd(&mut rng, 4)).collect();
        let got = sinr(&h, &w, 0.1).unwrap();
        for k in 0..3 {
            let mut num = 0.0;
            let mut den = 0.1;
            for l in 0..3 {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..4 {
                    re += h[k][n].re * w[l][n].re + h[k][n].im * w[l][n].im;
                    im += h[k][n].re * w[l][n].im - h[k][n].im * w[l][n].re;
                }
                if l == k {
                    num = re * re + im * im;
                } else {
                    den += re * re + im * im;
                }
            }
            assert!((got[k] - num / den).abs() <= 1e-12 * got[k].max(1.0));
        }
    }

    #[test]
    fn sum_rate_and_loss_arithmetic() {
        assert_eq!(sum_rate(&[0.0, 0.0]), 0.0);
        assert_eq!(loss(&[0.0]).unwrap(), 0.0);
        assert!((sum_rate(&[1.0f64, 3.0]) - 3.0).abs() < 1e-15);
        assert_eq!(loss(&[2.5, 2.5]).unwrap(), loss(&[2.5]).unwrap());
        assert!(loss::<f64>(&[]).is_err());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let h = vec![array![c(1.0, 0.0)]];
        assert!(sinr(&h, &h, 0.0).is_err());
        assert!(sinr::<f64>(&[], &[], 1.0).is_err());
        let r: ChannelRealization<f64> = sample_realization(&small_cfg(1, 2, 2, 2), &mut stream_rng(0, 0));
        assert!(effective_channels(&r, &[]).is_err());
    }

    #[test]
    fn report_csv_and_json() {
        let r: ChannelRealization<f64> = sample_realization(&small_cfg(2, 1, 2, 2), &mut stream_rng(0, 0));
        let sol = BeamformingSolution {
            beamformers: r.direct.clone(),
            phases: vec![Array1::from_elem(2, c(1.0, 0.0))],
            diagnostics: vec![],
        };
        let rep = RateReport::evaluate(&r, &sol, 1e-12).unwrap();
        assert_eq!(rep.csv_rows().len(), 2);
        assert!((rep.sum_rate - rep.rates.iter().sum::<f64>()).abs() <= 1e-12);
        let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(v["rates"].as_array().unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn noiseless_sinr_is_scale_invariant(seed in 0u64..500, beta in 1.1f64..10.0) {
            let r: ChannelRealization<f64> = sample_realization(&small_cfg(3, 0, 4, 1), &mut stream_rng(seed, 0));
            let h = effective_channels(&r, &[]).unwrap();
            let w: Vec<_> = h.iter().rev().cloned().collect();
            let ws: Vec<_> = w.iter().map(|x| x.mapv(|z| z * beta)).collect();
            let tiny = 1e-60;
            let a = sinr(&h, &w, tiny).unwrap();
            let b = sinr(&h, &ws, tiny).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn more_noise_means_lower_sinr(seed in 0u64..500, bump in 1.01f64..5.0) {
            let r: ChannelRealization<f64> = sample_realization(&small_cfg(2, 0, 3, 1), &mut stream_rng(seed, 1));
            let w = r.direct.clone();
            let noise = 1e-12;
            let a = sinr(&r.direct, &w, noise).unwrap();
            let b = sinr(&r.direct, &w, noise * bump).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(y < x);
            }
        }

        #[test]
        fn rates_are_nonnegative(seed in 0u64..200) {
            let r: ChannelRealization<f64> = sample_realization(&small_cfg(3, 2, 3, 2), &mut stream_rng(seed, 2));
            let sol = BeamformingSolution { beamformers: r.direct.clone(), phases: vec![Array1::from_elem(2, c(0.0, 1.0)); 2], diagnostics: vec![] };
            let rep = RateReport::evaluate(&r, &sol, 1e-13).unwrap();
            prop_assert!(rep.sinr.iter().all(|&g| g >= 0.0));
            prop_assert!(rep.rates.iter().all(|&x| x >= 0.0));
            prop_assert!((rep.sum_rate - rep.rates.iter().sum::<f64>()).abs() <= 1e-12);
        }
    }

}
