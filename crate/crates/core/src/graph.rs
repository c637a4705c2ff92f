//! Bipartite user/RIS graph and its real-valued node and edge features.
//!
//! Users and RISs are the two node types; every RIS is connected to every
//! user and there are no same-type edges. User `k` carries
//! `z_k = [Re h_k; Im h_k]`, edge `(j, k)` carries the cascaded channel
//! `diag(f*_{j,k}) G_jᵀ` split into real and imaginary parts and vectorised
//! column-major. RIS nodes have no feature.

use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, Real};

/// `diag(f*) Gᵀ` as an `M × N` matrix: row `m` is RIS element `m`'s
/// contribution to the effective channel row `h̃*`, so
/// `h̃*_k = h*_k + Σ_j v_jᵀ · cascade(f_{j,k}, G_j)`.
pub fn cascade_matrix<T: Real>(f: ArrayView1<Complex<T>>, g: ArrayView2<Complex<T>>) -> Result<CMatrix<T>> {
    let m = f.len();
    if g.ncols() != m {
        return Err(Error::dimension("cascade: RIS elements of G", m, g.ncols()));
    }
    let n = g.nrows();
    Ok(Array2::from_shape_fn((m, n), |(mi, ni)| f[mi].conj() * g[(ni, mi)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NetworkGraph<T: Real> {
    users: usize,
    ris: usize,
    bs_antennas: usize,
    ris_elements: usize,
    /// `K × 2N`, row k is `z_k`.
    user_features: Array2<T>,
    /// `(J·K) × 2NM`, row `j·K + k` is `e_{j,k}`.
    edge_features: Array2<T>,
}

impl<T: Real> NetworkGraph<T> {
    /// Node and edge features of one channel realization.
    pub fn build(real: &ChannelRealization<T>) -> Result<Self> {
        real.validate()?;
        let (k, j, n, m) = (real.users(), real.ris(), real.bs_antennas(), real.ris_elements());
        let mut user_features = Array2::zeros((k, 2 * n));
        for (row, h) in user_features.rows_mut().into_iter().zip(&real.direct) {
            let mut row = row;
            for (i, z) in h.iter().enumerate() {
                row[i] = z.re;
                row[n + i] = z.im;
            }
        }
        let mut edge_features = Array2::zeros((j * k, 2 * n * m));
        for ji in 0..j {
            for ki in 0..k {
                let a = cascade_matrix(real.ris_user[ji][ki].view(), real.bs_ris[ji].view())?;
                let mut row = edge_features.row_mut(ji * k + ki);
                // column-major vec(·)
                for ni in 0..n {
                    for mi in 0..m {
                        let z = a[(mi, ni)];
                        row[ni * m + mi] = z.re;
                        row[n * m + ni * m + mi] = z.im;
                    }
                }
            }
        }
        Ok(Self {
            users: k,
            ris: j,
            bs_antennas: n,
            ris_elements: m,
            user_features,
            edge_features,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn ris(&self) -> usize {
        self.ris
    }

    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas
    }

    /// M, zero when the graph has no RIS nodes.
    pub fn ris_elements(&self) -> usize {
        self.ris_elements
    }

    pub fn edge_count(&self) -> usize {
        self.users * self.ris
    }

    /// Edges as `(j, k)` in feature-row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ris).flat_map(move |j| (0..self.users).map(move |k| (j, k)))
    }

    pub fn edge_index(&self, ris: usize, user: usize) -> usize {
        ris * self.users + user
    }

    pub fn user_features(&self) -> &Array2<T> {
        &self.user_features
    }

    pub fn edge_features(&self) -> &Array2<T> {
        &self.edge_features
    }

    pub fn user_feature(&self, k: usize) -> ArrayView1<'_, T> {
        self.user_features.row(k)
    }

    pub fn edge_feature(&self, j: usize, k: usize) -> ArrayView1<'_, T> {
        self.edge_features.row(self.edge_index(j, k))
    }

    /// Layer-0 user representations `d_k⁽⁰⁾ = 0`, `K × 2N`.
    pub fn initial_user_repr(&self) -> Array2<T> {
        Array2::zeros((self.users, 2 * self.bs_antennas))
    }

    /// Layer-0 RIS representations `c_j⁽⁰⁾ = 0`, `J × M`.
    pub fn initial_ris_repr(&self) -> Array2<T> {
        Array2::zeros((self.ris, self.ris_elements))
    }
}
