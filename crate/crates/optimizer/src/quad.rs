//! Polynomials of degree at most two in the decision variables.

use stvs_core::Scalar;

/// `constant + Σ a_k·x_k + Σ c_ij·x_i·x_j` with `i ≤ j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadExpr<T> {
    pub constant: T,
    pub linear: Vec<(usize, T)>,
    pub quad: Vec<(usize, usize, T)>,
}

impl<T: Scalar> QuadExpr<T> {
    pub fn new() -> Self {
        Self {
            constant: T::zero(),
            linear: Vec::new(),
            quad: Vec::new(),
        }
    }

    pub fn with_constant(mut self, c: T) -> Self {
        self.constant += c;
        self
    }

    pub fn lin(mut self, i: usize, a: T) -> Self {
        self.add_lin(i, a);
        self
    }

    pub fn bilin(mut self, i: usize, j: usize, c: T) -> Self {
        self.add_quad(i, j, c);
        self
    }

    pub fn add_lin(&mut self, i: usize, a: T) {
        if a != T::zero() {
            self.linear.push((i, a));
        }
    }

    pub fn add_quad(&mut self, i: usize, j: usize, c: T) {
        if c != T::zero() {
            self.quad.push((i.min(j), i.max(j), c));
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        let mut v = self.constant;
        for &(i, a) in &self.linear {
            v += a * x[i];
        }
        for &(i, j, c) in &self.quad {
            v += c * x[i] * x[j];
        }
        v
    }

    /// Sparse gradient with duplicate indices merged, sorted by index.
    pub fn gradient(&self, x: &[T]) -> Vec<(usize, T)> {
        let mut g: Vec<(usize, T)> = Vec::with_capacity(self.linear.len() + 2 * self.quad.len());
        let mut add = |i: usize, v: T| match g.iter_mut().find(|e| e.0 == i) {
            Some(e) => e.1 += v,
            None => g.push((i, v)),
        };
        for &(i, a) in &self.linear {
            add(i, a);
        }
        for &(i, j, c) in &self.quad {
            if i == j {
                add(i, (c + c) * x[i]);
            } else {
                add(i, c * x[j]);
                add(j, c * x[i]);
            }
        }
        g.sort_unstable_by_key(|e| e.0);
        g
    }

    /// Constant Hessian as upper-triangle entries `(i, j, ∂²/∂x_i∂x_j)`.
    pub fn hessian(&self) -> Vec<(usize, usize, T)> {
        let mut h: Vec<(usize, usize, T)> = Vec::new();
        for &(i, j, c) in &self.quad {
            let v = if i == j { c + c } else { c };
            match h.iter_mut().find(|e| e.0 == i && e.1 == j) {
                Some(e) => e.2 += v,
                None => h.push((i, j, v)),
            }
        }
        h
    }

    /// Every variable the expression touches, sorted and unique.
    pub fn vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .linear
            .iter()
            .map(|e| e.0)
            .chain(self.quad.iter().flat_map(|e| [e.0, e.1]))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn is_linear(&self) -> bool {
        self.quad.is_empty()
    }
}
