//! Fused "projection → effective channel → SINR → negative sum rate" head.
//!
//! Complex intermediates are differentiated through their real and imaginary
//! parts. For a real loss `L` and complex `z = x + jy` the adjoint is kept as
//! the packed value `∂L/∂x + j ∂L/∂y`; for a product `a = c·z` with `c` fixed
//! this gives `adj(z) = conj(c)·adj(a)`.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex;

use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::graph::cascade_matrix;
use crate::numerics::{CMatrix, GradTape, NodeId, Real, TapeOp};

struct SampleChannels<T: Real> {
    /// `K × N`, row k is `h*_k`.
    direct_conj: CMatrix<T>,
    /// `cascade[j][k]`, each `M × N`.
    cascades: Vec<Vec<CMatrix<T>>>,
    users: Range<usize>,
    ris: Range<usize>,
}

/// Channel constants of a packed mini-batch, aligned with a `GraphBatch`.
pub struct BatchChannels<T: Real> {
    samples: Vec<SampleChannels<T>>,
    tx_power: T,
    noise: T,
}

impl<T: Real> BatchChannels<T> {
    pub fn new(reals: &[&ChannelRealization<T>], tx_power: T, noise: T) -> Result<Self> {
        let (mut u, mut r) = (0, 0);
        let mut samples = Vec::with_capacity(reals.len());
        for real in reals {
            let (k, j) = (real.users(), real.ris());
            let n = real.bs_antennas();
            let mut direct_conj = Array2::zeros((k, n));
            for (ki, h) in real.direct.iter().enumerate() {
                direct_conj.row_mut(ki).assign(&h.mapv(|z| z.conj()));
            }
            let cascades = (0..j)
                .map(|ji| (0..k).map(|ki| cascade_matrix(real.ris_user[ji][ki].view(), real.bs_ris[ji].view())).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            samples.push(SampleChannels {
                direct_conj,
                cascades,
                users: u..u + k,
                ris: r..r + j,
            });
            u += k;
            r += j;
        }
        Ok(Self { samples, tx_power, noise })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

struct Forward<T: Real> {
    u: Vec<Vec<Complex<T>>>,
    norms: Vec<T>,
    fallback: Vec<bool>,
    w: Vec<Vec<Complex<T>>>,
    v: Vec<Vec<Complex<T>>>,
    /// rows `h̃*_k`
    g: Vec<Vec<Complex<T>>>,
    /// `a[k][l] = h̃*_k w_l`
    a: Vec<Vec<Complex<T>>>,
    rate: T,
}

fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

fn sample_forward<T: Real>(d: ArrayView2<T>, c: ArrayView2<T>, ch: &SampleChannels<T>, tx_power: T, noise: T) -> Forward<T> {
    let (k, n) = ch.direct_conj.dim();
    let amp = (tx_power / T::from_usize(k).unwrap()).sqrt();
    let mut u = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    let mut fallback = Vec::with_capacity(k);
    let mut w = Vec::with_capacity(k);
    for row in d.rows() {
        let uk: Vec<Complex<T>> = (0..n).map(|i| Complex::new(row[i], row[n + i])).collect();
        let norm = uk.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        let ok = norm > T::zero() && norm.is_finite();
        let wk = if ok {
            uk.iter().map(|&z| z * (amp / norm)).collect()
        } else {
            let mut e = vec![czero(); n];
            e[0] = Complex::new(amp, T::zero());
            e
        };
        u.push(uk);
        norms.push(norm);
        fallback.push(!ok);
        w.push(wk);
    }
    let v: Vec<Vec<Complex<T>>> = c.rows().into_iter().map(|row| row.iter().map(|&t| Complex::new(t.cos(), t.sin())).collect()).collect();
    let mut g: Vec<Vec<Complex<T>>> = ch.direct_conj.rows().into_iter().map(|r| r.to_vec()).collect();
    for (j, vj) in v.iter().enumerate() {
        for (ki, gk) in g.iter_mut().enumerate() {
            let a = &ch.cascades[j][ki];
            for (m, &vm) in vj.iter().enumerate() {
                for (ni, gn) in gk.iter_mut().enumerate() {
                    *gn += vm * a[(m, ni)];
                }
            }
        }
    }
    let a: Vec<Vec<Complex<T>>> = g
        .iter()
        .map(|gk| w.iter().map(|wl| gk.iter().zip(wl).fold(czero(), |acc, (x, y)| acc + x * y)).collect())
        .collect();
    let mut rate = T::zero();
    for (ki, row) in a.iter().enumerate() {
        let total: T = row.iter().map(|z| z.norm_sqr()).sum::<T>() + noise;
        let interference = total - row[ki].norm_sqr();
        rate += (total / interference).log2();
    }
    Forward {
        u,
        norms,
        fallback,
        w,
        v,
        g,
        a,
        rate,
    }
}

/// Tape op computing `-(1/B) Σ_b Σ_k log₂(1+γ_k)` from the packed `d` and `c`.
pub struct SumRateLoss<'a, T: Real> {
    channels: &'a BatchChannels<T>,
}

impl<'a, T: Real> SumRateLoss<'a, T> {
    /// Appends the loss node; also returns the per-sample sum rates.
    pub fn apply(tape: &mut GradTape<'a, T>, users: NodeId, ris: NodeId, channels: &'a BatchChannels<T>) -> (NodeId, Vec<T>) {
        let (d, c) = (tape.value(users), tape.value(ris));
        let rates: Vec<T> = channels
            .samples
            .iter()
            .map(|ch| sample_forward(d.slice(s![ch.users.clone(), ..]), c.slice(s![ch.ris.clone(), ..]), ch, channels.tx_power, channels.noise).rate)
            .collect();
        let mean = rates.iter().copied().sum::<T>() / T::from_usize(rates.len().max(1)).unwrap();
        let value = Array2::from_elem((1, 1), -mean);
        let node = tape.custom(vec![users, ris], value, Box::new(SumRateLoss { channels }));
        (node, rates)
    }
}

impl<'a, T: Real> TapeOp<T> for SumRateLoss<'a, T> {
    fn name(&self) -> &'static str {
        "sum_rate_loss"
    }

    fn backward(&self, inputs: &[&Array2<T>], _output: &Array2<T>, upstream: &Array2<T>) -> Vec<Array2<T>> {
        let (d, c) = (inputs[0], inputs[1]);
        let mut gd = Array2::zeros(d.dim());
        let mut gc = Array2::zeros(c.dim());
        let batch = T::from_usize(self.channels.samples.len().max(1)).unwrap();
        // d(loss)/d(rate_b) = -upstream / B; rates are in bits, so also divide by ln 2
        let scale = -upstream[(0, 0)] / (batch * T::LN_2());
        let (tx_power, noise) = (self.channels.tx_power, self.channels.noise);

        for ch in &self.channels.samples {
            let f = sample_forward(d.slice(s![ch.users.clone(), ..]), c.slice(s![ch.ris.clone(), ..]), ch, tx_power, noise);
            let k = f.w.len();
            let n = ch.direct_conj.ncols();

            // S_kl = |a_kl|²; rate·ln2 = Σ_k ln(T_k) − ln(D_k)
            let mut adj_a = vec![vec![czero::<T>(); k]; k];
            for ki in 0..k {
                let total: T = f.a[ki].iter().map(|z| z.norm_sqr()).sum::<T>() + noise;
                let interference = total - f.a[ki][ki].norm_sqr();
                for l in 0..k {
                    let ds = if l == ki { T::one() / total } else { T::one() / total - T::one() / interference };
                    adj_a[ki][l] = f.a[ki][l] * (T::lit(2.0) * ds * scale);
                }
            }

            // a_kl = Σ_n g_kn w_ln
            let mut adj_g = vec![vec![czero::<T>(); n]; k];
            let mut adj_w = vec![vec![czero::<T>(); n]; k];
            for ki in 0..k {
                for l in 0..k {
                    let adj = adj_a[ki][l];
                    for ni in 0..n {
                        adj_g[ki][ni] += adj * f.w[l][ni].conj();
                        adj_w[l][ni] += adj * f.g[ki][ni].conj();
                    }
                }
            }

            // w = amp · u / ‖u‖
            let amp = (tx_power / T::from_usize(k).unwrap()).sqrt();
            for ki in 0..k {
                if f.fallback[ki] {
                    continue;
                }
                let norm = f.norms[ki];
                let uk = &f.u[ki];
                let proj: T = uk.iter().zip(&adj_w[ki]).map(|(x, y)| (x.conj() * y).re).sum();
                let row = ch.users.start + ki;
                for ni in 0..n {
                    let adj_u = (adj_w[ki][ni] - uk[ni] * (proj / (norm * norm))) * (amp / norm);
                    gd[(row, ni)] += adj_u.re;
                    gd[(row, n + ni)] += adj_u.im;
                }
            }

            // g_kn += Σ_j Σ_m v_jm A_jk[m, n];  v = e^{jc}
            for (j, vj) in f.v.iter().enumerate() {
                let row = ch.ris.start + j;
                for (m, &vm) in vj.iter().enumerate() {
                    let mut adj_v = czero::<T>();
                    for ki in 0..k {
                        let a = &ch.cascades[j][ki];
                        for ni in 0..n {
                            adj_v += adj_g[ki][ni] * a[(m, ni)].conj();
                        }
                    }
                    // dv/dc = j v
                    gc[(row, m)] += (adj_v.conj() * Complex::new(T::zero(), T::one()) * vm).re;
                }
            }
        }
        vec![gd, gc]
    }
}
