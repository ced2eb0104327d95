//! Uniform B-spline bases on `[0, T]`.
//!
//! The knot grid `tau_j = j * T / L` is extended uniformly past both ends so
//! that the basis index runs over `l = -d, ..., L-1` (`L + d` functions). The
//! degree-0 function is the indicator of `[tau_l, tau_{l+1})`, except that
//! `t = T` is assigned to the last interval so every point of the closed
//! domain is covered (left limit at the right end).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    intervals: usize,
    end: f64,
}

impl SplineBasis {
    pub fn new(degree: usize, intervals: usize, end: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidArgument("spline needs L >= 1 intervals".into()));
        }
        if !(end > 0.0 && end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spline end time must be positive, got {end}"
            )));
        }
        Ok(SplineBasis {
            degree,
            intervals,
            end,
        })
    }

    /// Basis on the reference domain `[0, 1]`.
    pub fn reference(degree: usize, intervals: usize) -> Result<Self> {
        SplineBasis::new(degree, intervals, 1.0)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Number of basis functions, `L + d`.
    pub fn len(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_index(&self) -> i64 {
        -(self.degree as i64)
    }

    pub fn max_index(&self) -> i64 {
        self.intervals as i64 - 1
    }

    /// Position of basis index `l` in a coefficient list (`l + d`).
    pub fn storage_index(&self, l: i64) -> usize {
        (l + self.degree as i64) as usize
    }

    /// Knot `tau_j` of the extended grid, `j` in `[-d, L + d]`.
    pub fn knot(&self, j: i64) -> f64 {
        j as f64 * self.end / self.intervals as f64
    }

    pub fn spacing(&self) -> f64 {
        self.end / self.intervals as f64
    }

    /// Interval `k0` in `0..L` with `tau_{k0} <= t < tau_{k0+1}`; `t = T` maps to `L - 1`.
    pub fn find_interval(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.end).contains(&t) {
            return Err(Error::TimeOutOfRange { t, end: self.end });
        }
        let last = self.intervals - 1;
        let mut k = ((t * self.intervals as f64 / self.end).floor() as usize).min(last);
        // the floor can land one off when t sits on a knot
        while k < last && self.knot(k as i64 + 1) <= t {
            k += 1;
        }
        while k > 0 && self.knot(k as i64) > t {
            k -= 1;
        }
        Ok(k)
    }

    /// `B^d_l(t)` by the Cox-de Boor recursion.
    pub fn eval(&self, l: i64, t: f64) -> Result<f64> {
        if l < self.min_index() || l > self.max_index() {
            return Err(Error::BasisIndex {
                index: l,
                min: self.min_index(),
                max: self.max_index(),
            });
        }
        let k0 = self.find_interval(t)? as i64;
        Ok(self.cox_de_boor(l, self.degree, t, k0))
    }

    /// The `d + 1` basis functions that can be non-zero at `t`, as `(l, value)`
    /// for `l = k0 - d, ..., k0`.
    pub fn active(&self, t: f64) -> Result<Vec<(i64, f64)>> {
        let k0 = self.find_interval(t)? as i64;
        Ok((k0 - self.degree as i64..=k0)
            .map(|l| (l, self.cox_de_boor(l, self.degree, t, k0)))
            .collect())
    }

    /// Active basis values for every time in `times`, keyed by storage index.
    pub fn table(&self, times: &[f64]) -> Result<Vec<Vec<(usize, f64)>>> {
        times
            .iter()
            .map(|&t| {
                Ok(self
                    .active(t)?
                    .into_iter()
                    .map(|(l, v)| (self.storage_index(l), v))
                    .collect())
            })
            .collect()
    }

    fn cox_de_boor(&self, l: i64, degree: usize, t: f64, k0: i64) -> f64 {
        if degree == 0 {
            return if l == k0 { 1.0 } else { 0.0 };
        }
        if k0 < l || k0 > l + degree as i64 {
            return 0.0;
        }
        let d = degree as i64;
        let left = self.cox_de_boor(l, degree - 1, t, k0);
        let right = self.cox_de_boor(l + 1, degree - 1, t, k0);
        let mut value = 0.0;
        if left != 0.0 {
            value += (t - self.knot(l)) / (self.knot(l + d) - self.knot(l)) * left;
        }
        if right != 0.0 {
            value += (self.knot(l + d + 1) - t) / (self.knot(l + d + 1) - self.knot(l + 1)) * right;
        }
        value
    }
}
