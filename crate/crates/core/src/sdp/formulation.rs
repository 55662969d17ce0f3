//! Translation of the relaxation into engine form and back.

use nalgebra::{DMatrix, DVector};

use super::engine::{BlockSdp, Entry, Iterate};
use super::{MomentBlock, SdpData, SdpDual, SdpPrimal};
use crate::error::{CqrError, Result};
use crate::linalg;

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(m)
}

pub(super) struct Dense {
    pub sdp: BlockSdp,
}

impl Dense {
    pub fn new(data: &SdpData) -> Self {
        let n = data.dim();
        let index = |b: MomentBlock| match b {
            MomentBlock::Y => 0,
            MomentBlock::Z1 => 1,
            MomentBlock::Z2 => 2,
        };
        let constraints = data
            .kept
            .iter()
            .map(|&k| {
                data.functionals[k]
                    .terms
                    .iter()
                    .map(|&(b, p, q, c)| Entry::new(index(b), p, q, c))
                    .collect()
            })
            .collect();
        let rhs = DVector::from_iterator(data.kept.len(), data.kept.iter().map(|&k| data.functionals[k].rhs));
        Dense {
            sdp: BlockSdp {
                sizes: vec![n + 1, 3, 2],
                cost: vec![data.cost_y.clone(), data.cost_z1.clone(), data.cost_z2.clone()],
                offset: 0.0,
                constraints,
                rhs,
                decoupled: 0,
            },
        }
    }

    pub fn recover(&self, data: &SdpData, it: &Iterate) -> (SdpPrimal, SdpDual) {
        let (y, z1, z2) = (sym(&it.x[0]), sym(&it.x[1]), sym(&it.x[2]));
        let theta = data.moment_objective(&y, &z1, &z2);
        let dual = SdpDual {
            gamma: self.sdp.dual_objective(&it.y),
            x0: sym(&it.s[0]),
            x1: sym(&it.s[1]),
            x2: sym(&it.s[2]),
        };
        (SdpPrimal { y, z1, z2, theta }, dual)
    }
}

/// Rotated formulation. With `H = QΛQᵀ` and `ŝ = Qᵀs`, the cost and every
/// functional see `Y` only through `Y₀₀`, the first row and the diagonal.
/// By chordal completion on the star graph, `Y ⪰ 0` then reduces to the
/// 2×2 blocks `[[Y₀₀, Y₀ᵢ], [Y₀ᵢ, Yᵢᵢ]] ⪰ 0`, and `Y₀₀ = 1` turns into one
/// decoupled constraint per block.
pub(super) struct Eigen {
    pub sdp: BlockSdp,
    q: DMatrix<f64>,
}

impl Eigen {
    pub fn new(data: &SdpData) -> Result<Self> {
        let p = &data.problem;
        let n = p.dim();
        let eig = linalg::sym_eigen(&p.h)?;
        let ghat = eig.vectors.transpose() * &p.g;
        let (z1, z2) = (n, n + 1);

        let mut sizes = vec![2; n];
        sizes.extend([3, 2]);
        let mut cost: Vec<DMatrix<f64>> = (0..n)
            .map(|i| DMatrix::from_row_slice(2, 2, &[0.0, 0.5 * ghat[i], 0.5 * ghat[i], 0.5 * eig.values[i]]))
            .collect();
        cost.push(data.cost_z1.clone());
        cost.push(data.cost_z2.clone());

        let unsupported = || CqrError::InvalidInput("functional is not invariant under rotation".into());
        let mut constraints: Vec<Vec<Entry>> = (0..n).map(|i| vec![Entry::new(i, 0, 0, 1.0)]).collect();
        let mut rhs: Vec<f64> = vec![1.0; n];
        match data.kept.first() {
            Some(&0) if data.functionals[0].terms == [(MomentBlock::Y, 0, 0, 1.0)] => {}
            _ => return Err(unsupported()),
        }
        for &k in &data.kept[1..] {
            let f = &data.functionals[k];
            let mut entries = Vec::new();
            let mut b = f.rhs;
            let mut diag = vec![None; n];
            for &(blk, pp, qq, c) in &f.terms {
                match blk {
                    MomentBlock::Z1 => entries.push(Entry::new(z1, pp, qq, c)),
                    MomentBlock::Z2 => entries.push(Entry::new(z2, pp, qq, c)),
                    MomentBlock::Y if pp == 0 && qq == 0 => b -= c,
                    MomentBlock::Y if pp == qq => diag[pp - 1] = Some(c),
                    MomentBlock::Y => return Err(unsupported()),
                }
            }
            match diag[0] {
                Some(c) => {
                    if diag.iter().any(|d| *d != Some(c)) {
                        return Err(unsupported());
                    }
                    entries.extend((0..n).map(|i| Entry::new(i, 1, 1, c)));
                }
                None if diag.iter().any(Option::is_some) => return Err(unsupported()),
                None => {}
            }
            constraints.push(entries);
            rhs.push(b);
        }
        let sdp = BlockSdp {
            sizes,
            cost,
            offset: p.f0,
            rhs: DVector::from_vec(rhs),
            constraints,
            decoupled: n,
        };
        Ok(Eigen { sdp, q: eig.vectors })
    }

    pub fn recover(&self, data: &SdpData, it: &Iterate) -> (SdpPrimal, SdpDual) {
        let n = self.q.nrows();
        let q = &self.q;

        // Maximum-determinant completion of the star pattern.
        let u = DVector::from_fn(n, |i, _| it.x[i][(0, 1)]);
        let resid = DVector::from_fn(n, |i, _| it.x[i][(1, 1)] - u[i] * u[i]);
        let qu = q * &u;
        let mut y = DMatrix::zeros(n + 1, n + 1);
        y[(0, 0)] = 1.0;
        let ss = &qu * qu.transpose() + scaled_congruence(q, &resid);
        y.view_mut((1, 1), (n, n)).copy_from(&ss);
        for i in 0..n {
            y[(0, i + 1)] = qu[i];
            y[(i + 1, 0)] = qu[i];
        }
        let y = sym(&y);
        let (z1, z2) = (sym(&it.x[n]), sym(&it.x[n + 1]));
        let theta = data.moment_objective(&y, &z1, &z2);

        let b = DVector::from_fn(n, |i, _| 0.5 * (it.s[i][(0, 1)] + it.s[i][(1, 0)]));
        let c = DVector::from_fn(n, |i, _| it.s[i][(1, 1)]);
        let qb = q * &b;
        let mut x0 = DMatrix::zeros(n + 1, n + 1);
        x0[(0, 0)] = (0..n).map(|i| it.s[i][(0, 0)]).sum();
        x0.view_mut((1, 1), (n, n)).copy_from(&scaled_congruence(q, &c));
        for i in 0..n {
            x0[(0, i + 1)] = qb[i];
            x0[(i + 1, 0)] = qb[i];
        }
        let dual = SdpDual {
            gamma: self.sdp.dual_objective(&it.y),
            x0: sym(&x0),
            x1: sym(&it.s[n]),
            x2: sym(&it.s[n + 1]),
        };
        (SdpPrimal { y, z1, z2, theta }, dual)
    }
}

/// `Q diag(d) Qᵀ`.
fn scaled_congruence(q: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut qd = q.clone();
    for (j, mut col) in qd.column_iter_mut().enumerate() {
        col *= d[j];
    }
    qd * q.transpose()
}
