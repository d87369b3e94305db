//! Block-arrowhead solve of the Newton–KKT system
//!
//! ```text
//! [ M   J_eᵀ ] [dx]   [r_x]
//! [ J_e  0   ] [dλ] = [r_e]
//! ```
//!
//! Each block's local variables and equalities are eliminated onto the
//! linking variables (and linking equalities) with a dense Schur complement.

use std::ops::Range;

use stvs_core::linalg::DenseMatrix;
use stvs_core::Scalar;

use crate::problem::{NlpProblem, Owner};

#[derive(Debug, Clone)]
pub struct BlockKkt<T> {
    n_global: usize,
    blocks: Vec<Range<usize>>,
    var_block: Vec<Option<usize>>,
    /// Equalities owned by each block, and by the linking part.
    block_eqs: Vec<Vec<usize>>,
    global_eqs: Vec<usize>,
    m_gg: DenseMatrix<T>,
    m_bb: Vec<DenseMatrix<T>>,
    m_bg: Vec<DenseMatrix<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktFailure {
    Block(usize),
    Schur,
}

impl<T: Scalar> BlockKkt<T> {
    pub fn new(problem: &NlpProblem<T>) -> Self {
        let n = problem.n();
        let ng = problem.n_global;
        let mut var_block = vec![None; n];
        for (b, r) in problem.blocks.iter().enumerate() {
            for v in r.clone() {
                var_block[v] = Some(b);
            }
        }
        let mut block_eqs = vec![Vec::new(); problem.blocks.len()];
        let mut global_eqs = Vec::new();
        for (k, e) in problem.eq.iter().enumerate() {
            match problem.owner(e).expect("structure checked before solve") {
                Owner::Global => global_eqs.push(k),
                Owner::Block(b) => block_eqs[b].push(k),
            }
        }
        Self {
            n_global: ng,
            m_gg: DenseMatrix::zeros(ng, ng),
            m_bb: problem.blocks.iter().map(|r| DenseMatrix::zeros(r.len(), r.len())).collect(),
            m_bg: problem.blocks.iter().map(|r| DenseMatrix::zeros(r.len(), ng)).collect(),
            blocks: problem.blocks.clone(),
            var_block,
            block_eqs,
            global_eqs,
        }
    }

    pub fn clear(&mut self) {
        self.m_gg.fill(T::zero());
        for m in self.m_bb.iter_mut().chain(self.m_bg.iter_mut()) {
            m.fill(T::zero());
        }
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn add_sym(&mut self, i: usize, j: usize, v: T) {
        match (self.var_block[i], self.var_block[j]) {
            (None, None) => {
                self.m_gg[(i, j)] += v;
                if i != j {
                    self.m_gg[(j, i)] += v;
                }
            }
            (Some(b), None) => self.m_bg[b][(i - self.blocks[b].start, j)] += v,
            (None, Some(b)) => self.m_bg[b][(j - self.blocks[b].start, i)] += v,
            (Some(a), Some(b)) => {
                debug_assert_eq!(a, b, "coupling between distinct blocks");
                let s = self.blocks[a].start;
                self.m_bb[a][(i - s, j - s)] += v;
                if i != j {
                    self.m_bb[a][(j - s, i - s)] += v;
                }
            }
        }
    }

    pub fn max_abs_m(&self) -> T {
        self.m_bb
            .iter()
            .chain(self.m_bg.iter())
            .map(|m| m.max_abs())
            .fold(self.m_gg.max_abs(), T::max)
    }

    /// Solves with primal regularisation `reg_x` on the diagonal of `M` and
    /// dual regularisation `−reg_e` on the equality block.
    pub fn solve(
        &self,
        jac_eq: &[Vec<(usize, T)>],
        rhs_x: &[T],
        rhs_e: &[T],
        reg_x: T,
        reg_e: T,
    ) -> Result<(Vec<T>, Vec<T>), KktFailure> {
        let ng = self.n_global;
        let ge = self.global_eqs.len();
        let dim_g = ng + ge;

        let mut s = DenseMatrix::zeros(dim_g, dim_g);
        for i in 0..ng {
            for j in 0..ng {
                s[(i, j)] = self.m_gg[(i, j)];
            }
            s[(i, i)] += reg_x;
        }
        for (p, &k) in self.global_eqs.iter().enumerate() {
            for &(v, g) in &jac_eq[k] {
                s[(ng + p, v)] += g;
                s[(v, ng + p)] += g;
            }
            s[(ng + p, ng + p)] -= reg_e;
        }
        let mut r_g: Vec<T> = rhs_x[..ng].to_vec();
        r_g.extend(self.global_eqs.iter().map(|&k| rhs_e[k]));

        struct Elim<T> {
            x: DenseMatrix<T>,
            y: Vec<T>,
        }
        let mut elims = Vec::with_capacity(self.blocks.len());
        for (b, r) in self.blocks.iter().enumerate() {
            let nb = r.len();
            let eqs = &self.block_eqs[b];
            let dim = nb + eqs.len();
            let mut k = DenseMatrix::zeros(dim, dim);
            let mut c = DenseMatrix::zeros(dim, dim_g);
            for i in 0..nb {
                for j in 0..nb {
                    k[(i, j)] = self.m_bb[b][(i, j)];
                }
                k[(i, i)] += reg_x;
                for j in 0..ng {
                    c[(i, j)] = self.m_bg[b][(i, j)];
                }
            }
            for (p, &e) in eqs.iter().enumerate() {
                for &(v, g) in &jac_eq[e] {
                    if v < ng {
                        c[(nb + p, v)] += g;
                    } else {
                        let l = v - r.start;
                        k[(nb + p, l)] += g;
                        k[(l, nb + p)] += g;
                    }
                }
                k[(nb + p, nb + p)] -= reg_e;
            }
            let mut rb: Vec<T> = rhs_x[r.clone()].to_vec();
            rb.extend(eqs.iter().map(|&e| rhs_e[e]));

            let lu = k.lu_with_tolerance(pivot_floor()).map_err(|_| KktFailure::Block(b))?;
            let x = lu.solve_matrix(&c);
            let y = lu.solve(&rb);
            // S −= Cᵀ X, r_g −= Cᵀ y
            let ctx = c.tr_matmul(&x);
            for i in 0..dim_g {
                for j in 0..dim_g {
                    s[(i, j)] -= ctx[(i, j)];
                }
            }
            let cty = c.tr_mul_vec(&y);
            for i in 0..dim_g {
                r_g[i] -= cty[i];
            }
            elims.push(Elim { x, y });
        }

        let u_g = s.lu_with_tolerance(pivot_floor()).map_err(|_| KktFailure::Schur)?.solve(&r_g);

        let n = self.var_block.len();
        let mut dx = vec![T::zero(); n];
        let mut dl = vec![T::zero(); jac_eq.len()];
        dx[..ng].copy_from_slice(&u_g[..ng]);
        for (p, &k) in self.global_eqs.iter().enumerate() {
            dl[k] = u_g[ng + p];
        }
        for (b, r) in self.blocks.iter().enumerate() {
            let el = &elims[b];
            let xu = el.x.mul_vec(&u_g);
            let nb = r.len();
            for i in 0..nb {
                dx[r.start + i] = el.y[i] - xu[i];
            }
            for (p, &k) in self.block_eqs[b].iter().enumerate() {
                dl[k] = el.y[nb + p] - xu[nb + p];
            }
        }
        Ok((dx, dl))
    }
}

fn pivot_floor<T: Scalar>() -> T {
    T::epsilon() * T::epsilon()
}
