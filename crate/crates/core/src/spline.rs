//! Uniform B-spline grids and local Cox–de Boor evaluation.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform knot vector over `[lo, hi]` with `intervals` cells, padded by
/// `degree` knots on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    knots: Vec<f64>,
    degree: usize,
    intervals: usize,
    lo: f64,
    hi: f64,
}

impl SplineGrid {
    pub fn uniform(lo: f64, hi: f64, intervals: usize, degree: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("bad spline range [{lo}, {hi}]")));
        }
        if intervals == 0 {
            return Err(Error::Argument("spline grid needs at least one interval".into()));
        }
        if degree + 1 > MAX_ORDER {
            return Err(Error::Argument(format!(
                "spline degree {degree} exceeds the supported maximum {}",
                MAX_ORDER - 1
            )));
        }
        let h = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * degree + 1)
            .map(|j| lo + (j as f64 - degree as f64) * h)
            .collect();
        Ok(Self {
            knots,
            degree,
            intervals,
            lo,
            hi,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Number of basis functions, `intervals + degree`.
    pub fn num_basis(&self) -> usize {
        self.intervals + self.degree
    }

    /// Knot span containing `x`, or `None` outside `[lo, hi]`.
    /// The last interval is closed on the right.
    pub fn span<T: Real>(&self, x: T) -> Option<usize> {
        let xf = x.as_f64();
        if !(xf >= self.lo && xf <= self.hi) {
            return None;
        }
        let h = (self.hi - self.lo) / self.intervals as f64;
        let mut cell = (((xf - self.lo) / h).floor() as usize).min(self.intervals - 1);
        // floor can land one cell off near knots; fix up against the stored knots.
        let k = |c: usize| self.knots[c + self.degree];
        while cell > 0 && xf < k(cell) {
            cell -= 1;
        }
        while cell + 1 < self.intervals && xf >= k(cell + 1) {
            cell += 1;
        }
        Some(cell + self.degree)
    }

    /// Evaluates the `degree + 1` nonzero bases at `x` and their derivatives.
    ///
    /// Returns the index of the first nonzero basis; `values[r]` and
    /// `derivs[r]` belong to basis `first + r`. Outside the grid range
    /// returns `None` and leaves the buffers untouched.
    pub fn eval_local<T: Real>(&self, x: T, values: &mut [T], derivs: &mut [T]) -> Option<usize> {
        let p = self.degree;
        let lo = T::c(self.lo);
        let hi = T::c(self.hi);
        if !(x >= lo && x <= hi) {
            return None;
        }
        // Knots are equally spaced, so the recursion runs in cell units.
        let inv_h = T::c(self.intervals as f64 / (self.hi - self.lo));
        let pos = (x - lo) * inv_h;
        let cell = pos.to_usize().unwrap_or(0).min(self.intervals - 1);
        let u = pos - T::c(cell as f64);
        if p == 3 {
            let w = T::one() - u;
            let (u2, w2) = (u * u, w * w);
            let sixth = T::c(1.0 / 6.0);
            let half = T::c(0.5) * inv_h;
            values[0] = w2 * w * sixth;
            values[3] = u2 * u * sixth;
            values[1] = T::c(2.0 / 3.0) - u2 + T::c(0.5) * u2 * u;
            values[2] = (T::one() + T::c(3.0) * (u + u2 - u2 * u)) * sixth;
            derivs[0] = -w2 * half;
            derivs[1] = (T::c(3.0) * u2 - T::c(4.0) * u) * half;
            derivs[3] = u2 * half;
            derivs[2] = (T::one() + T::c(2.0) * u - T::c(3.0) * u2) * half;
            return Some(cell);
        }
        let mut left = [T::zero(); MAX_ORDER];
        let mut right = [T::zero(); MAX_ORDER];
        let mut n = [T::zero(); MAX_ORDER];
        let mut lower = [T::zero(); MAX_ORDER];
        n[0] = T::one();
        for j in 1..=p {
            if j == p {
                lower[..p].copy_from_slice(&n[..p]);
            }
            left[j] = u + T::c((j - 1) as f64);
            right[j] = T::c(j as f64) - u;
            let inv_j = T::c(1.0 / j as f64);
            let mut saved = T::zero();
            for r in 0..j {
                let temp = n[r] * inv_j;
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        values[..=p].copy_from_slice(&n[..=p]);
        if p == 0 {
            derivs[0] = T::zero();
        } else {
            // lower[q] is the degree p-1 basis starting one knot after the first.
            for r in 0..=p {
                let mut d = T::zero();
                if r >= 1 {
                    d += lower[r - 1];
                }
                if r < p {
                    d -= lower[r];
                }
                derivs[r] = d * inv_h;
            }
        }
        Some(cell)
    }
}

/// Largest supported spline order (degree + 1).
pub const MAX_ORDER: usize = 8;

/// Dense basis matrix: `out[i * nb + k] = B_k(xs[i])`, plus derivatives.
/// Returns the number of points that fell outside the grid.
pub(crate) fn dense_basis<T: Real>(
    grid: &SplineGrid,
    xs: &[T],
    out: &mut [T],
    dout: Option<&mut [T]>,
) -> usize {
    let nb = grid.num_basis();
    let p = grid.degree();
    let mut vals = [T::zero(); MAX_ORDER];
    let mut ders = [T::zero(); MAX_ORDER];
    let mut missed = 0;
    let mut dout = dout;
    for (i, &x) in xs.iter().enumerate() {
        match grid.eval_local(x, &mut vals, &mut ders) {
            Some(first) => {
                out[i * nb + first..i * nb + first + p + 1].copy_from_slice(&vals[..=p]);
                if let Some(d) = dout.as_deref_mut() {
                    d[i * nb + first..i * nb + first + p + 1].copy_from_slice(&ders[..=p]);
                }
            }
            None => missed += 1,
        }
    }
    missed
}
