//! Dynamic adjacency tensor memory: an `n x n` edge-probability matrix `A`
//! stacked with an `n x n x m` tensor `H` of per-edge hidden states.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Datm {
    n: usize,
    m: usize,
    adjacency: Vec<f64>,
    hidden: Vec<f64>,
}

impl Datm {
    /// All-zero memory for `n` nodes and hidden width `m`.
    pub fn new(n: usize, m: usize) -> Self {
        Datm {
            n,
            m,
            adjacency: vec![0.0; n * n],
            hidden: vec![0.0; n * n * m],
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn hidden_dim(&self) -> usize {
        self.m
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        for idx in [i, j] {
            if idx >= self.n {
                return Err(Error::Bounds {
                    index: idx,
                    len: self.n,
                });
            }
        }
        Ok(())
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    pub fn h(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.n + j) * self.m;
        &self.hidden[off..off + self.m]
    }

    /// Writes `[a, h]` into cell `(i, j)`.
    pub fn update(&mut self, i: usize, j: usize, a: f64, h: &[f64]) -> Result<()> {
        self.check(i, j)?;
        if h.len() != self.m {
            return Err(Error::Dimension {
                op: "datm update",
                lhs: vec![self.m],
                rhs: vec![h.len()],
            });
        }
        self.adjacency[i * self.n + j] = a;
        let off = (i * self.n + j) * self.m;
        self.hidden[off..off + self.m].copy_from_slice(h);
        Ok(())
    }

    /// Cells `(k, i)` for every `k`, then `(k, j)`: the incoming edges of
    /// both endpoints, in retrieval order.
    pub fn incoming(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).map(move |k| (k, i)).chain((0..self.n).map(move |k| (k, j)))
    }

    /// Previous hidden state for candidate `(i, j)`.
    ///
    /// Weighted: `sum_k A[k,i] H[k,i] + sum_k A[k,j] H[k,j] + g`.
    /// Unweighted: the plain mean of the written (`A > 0`) cells among the
    /// same incoming edges, plus `g`; zero mean when none are written.
    pub fn retrieve(&self, i: usize, j: usize, global: &[f64], weighted: bool) -> Result<Vec<f64>> {
        self.check(i, j)?;
        if global.len() != self.m {
            return Err(Error::Dimension {
                op: "datm retrieve",
                lhs: vec![self.m],
                rhs: vec![global.len()],
            });
        }
        let mut acc = vec![0.0; self.m];
        let mut count = 0usize;
        for (r, c) in self.incoming(i, j) {
            let a = self.a(r, c);
            if weighted {
                if a != 0.0 {
                    for (o, h) in acc.iter_mut().zip(self.h(r, c)) {
                        *o += a * h;
                    }
                }
            } else if a > 0.0 {
                count += 1;
                for (o, h) in acc.iter_mut().zip(self.h(r, c)) {
                    *o += h;
                }
            }
        }
        if !weighted && count > 0 {
            let inv = 1.0 / count as f64;
            acc.iter_mut().for_each(|v| *v *= inv);
        }
        for (o, g) in acc.iter_mut().zip(global) {
            *o += g;
        }
        Ok(acc)
    }
}
