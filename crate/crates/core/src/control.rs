//! Network controls `theta(t) = (W(t), b(t))` and the time grids they are
//! evaluated on.
//!
//! A spline control stores `L + d` coefficient pairs `(omega_l, beta_l)` and
//! evaluates `W(t) = sum_l omega_l B^d_l(t)`. A per-layer control stores one
//! pair per time step (ODEnet with `h = 1/N`, ResNet with `h = 1`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::SplineBasis;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlKind {
    Spline { degree: usize, intervals: usize },
    PerLayer { layers: usize },
}

impl ControlKind {
    pub fn coefficient_count(&self) -> usize {
        match *self {
            ControlKind::Spline { degree, intervals } => intervals + degree,
            ControlKind::PerLayer { layers } => layers,
        }
    }

    pub fn basis(&self) -> Option<SplineBasis> {
        match *self {
            ControlKind::Spline { degree, intervals } => SplineBasis::reference(degree, intervals).ok(),
            ControlKind::PerLayer { .. } => None,
        }
    }
}

/// The scalar `lambda` multiplying the right-hand side on the reference domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub value: f64,
    pub learnable: bool,
}

impl TimeScale {
    pub fn frozen(value: f64) -> Self {
        TimeScale {
            value,
            learnable: false,
        }
    }

    pub fn learnable(value: f64) -> Self {
        TimeScale {
            value,
            learnable: true,
        }
    }
}

impl Default for TimeScale {
    fn default() -> Self {
        TimeScale::frozen(1.0)
    }
}

/// Uniform time stepping: `N` steps of size `h`. Controls are looked up at the
/// reference times `i / N` in `[0, 1]`, independent of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    h: f64,
}

impl TimeGrid {
    /// `h = 1/N` on the reference domain (ODEnet, SpliNet).
    pub fn reference(steps: usize) -> Result<Self> {
        TimeGrid::with_step(steps, 1.0 / steps as f64)
    }

    /// `h = 1` (ResNet).
    pub fn unit(steps: usize) -> Result<Self> {
        TimeGrid::with_step(steps, 1.0)
    }

    pub fn with_step(steps: usize, h: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs N >= 1 steps".into()));
        }
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid step size {h}")));
        }
        Ok(TimeGrid { steps, h })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Reference time of grid point `i`, `0 <= i <= N`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * 1.0 / self.steps as f64
    }

    /// Reference times of the `N` steps (the last grid point is excluded).
    pub fn step_times(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.time(i)).collect()
    }
}

/// For each step, the coefficient slots that contribute and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

/// Trainable control parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub kind: ControlKind,
    pub width: usize,
    pub omega: Vec<Matrix>,
    pub beta: Vec<Vector>,
    pub lambda: TimeScale,
    pub antisymmetric: bool,
    pub gamma_shift: f64,
}

impl ControlParams {
    pub fn zeros(kind: ControlKind, width: usize) -> Result<Self> {
        validate_kind(&kind)?;
        if width == 0 {
            return Err(Error::InvalidArgument("network width must be >= 1".into()));
        }
        let n = kind.coefficient_count();
        Ok(ControlParams {
            kind,
            width,
            omega: vec![Matrix::zeros(width, width); n],
            beta: vec![Vector::zeros(width); n],
            lambda: TimeScale::default(),
            antisymmetric: false,
            gamma_shift: 0.0,
        })
    }

    /// Every coefficient entry drawn uniformly from `[-amplitude, amplitude]`.
    pub fn init_random(
        kind: ControlKind,
        width: usize,
        seed: u64,
        amplitude: f64,
        lambda: TimeScale,
    ) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "initialization amplitude must be positive, got {amplitude}"
            )));
        }
        validate_lambda(lambda.value)?;
        let mut params = ControlParams::zeros(kind, width)?;
        params.lambda = lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut params.omega {
            for v in w.as_mut_slice() {
                *v = rng.gen_range(-amplitude..=amplitude);
            }
        }
        for b in &mut params.beta {
            for v in b.as_mut_slice() {
                *v = rng.gen_range(-amplitude..=amplitude);
            }
        }
        Ok(params)
    }

    pub fn with_antisymmetric(mut self, gamma_shift: f64) -> Self {
        self.antisymmetric = true;
        self.gamma_shift = gamma_shift;
        self
    }

    pub fn basis(&self) -> Option<SplineBasis> {
        self.kind.basis()
    }

    /// Trainable scalar count: `(L + d)(m^2 + m)` or `N (m^2 + m)`, plus one for a learnable `lambda`.
    pub fn param_count(&self) -> usize {
        let m = self.width;
        self.kind.coefficient_count() * (m * m + m) + usize::from(self.lambda.learnable)
    }

    pub fn validate(&self) -> Result<()> {
        validate_kind(&self.kind)?;
        validate_lambda(self.lambda.value)?;
        let n = self.kind.coefficient_count();
        if self.omega.len() != n || self.beta.len() != n {
            return Err(Error::DimensionMismatch {
                op: "ControlParams",
                expected: n,
                got: self.omega.len().min(self.beta.len()),
            });
        }
        for w in &self.omega {
            if w.rows() != self.width || w.cols() != self.width {
                return Err(Error::DimensionMismatch {
                    op: "ControlParams omega",
                    expected: self.width,
                    got: w.rows().max(w.cols()),
                });
            }
        }
        for b in &self.beta {
            if b.len() != self.width {
                return Err(Error::DimensionMismatch {
                    op: "ControlParams beta",
                    expected: self.width,
                    got: b.len(),
                });
            }
        }
        if !(self.gamma_shift >= 0.0) {
            return Err(Error::InvalidArgument("gamma_shift must be >= 0".into()));
        }
        Ok(())
    }

    /// Precomputed coefficient weights for each step of `grid`.
    pub fn schedule(&self, grid: &TimeGrid) -> Result<Schedule> {
        match self.kind {
            ControlKind::Spline { degree, intervals } => {
                let basis = SplineBasis::reference(degree, intervals)?;
                Ok(Schedule {
                    rows: basis.table(&grid.step_times())?,
                })
            }
            ControlKind::PerLayer { layers } => {
                if layers != grid.steps() {
                    return Err(Error::DimensionMismatch {
                        op: "per-layer schedule",
                        expected: layers,
                        got: grid.steps(),
                    });
                }
                Ok(Schedule {
                    rows: (0..layers).map(|i| vec![(i, 1.0)]).collect(),
                })
            }
        }
    }

    /// `(W(t), b(t))` at reference time `t`.
    pub fn materialize(&self, t: f64) -> Result<(Matrix, Vector)> {
        let weights: Vec<(usize, f64)> = match self.kind {
            ControlKind::Spline { degree, intervals } => {
                let basis = SplineBasis::reference(degree, intervals)?;
                basis
                    .active(t)?
                    .into_iter()
                    .map(|(l, v)| (basis.storage_index(l), v))
                    .collect()
            }
            ControlKind::PerLayer { layers } => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::TimeOutOfRange { t, end: 1.0 });
                }
                let pos = t * layers as f64;
                let i = pos.round();
                if (pos - i).abs() > 1e-9 || i as usize >= layers {
                    return Err(Error::OffGrid { t });
                }
                vec![(i as usize, 1.0)]
            }
        };
        Ok(self.combine(&weights))
    }

    /// Weighted coefficient sum for one schedule row, with the antisymmetric
    /// transform applied when enabled.
    pub fn combine(&self, weights: &[(usize, f64)]) -> (Matrix, Vector) {
        let m = self.width;
        let mut w = Matrix::zeros(m, m);
        let mut b = Vector::zeros(m);
        for &(p, coef) in weights {
            // shapes are fixed at construction
            w.axpy(coef, &self.omega[p]).expect("omega shape");
            b.axpy(coef, &self.beta[p]).expect("beta shape");
        }
        if self.antisymmetric {
            w = antisymmetrize(&w, self.gamma_shift);
        }
        (w, b)
    }

    /// Materialized `(W_i, b_i)` for every step.
    pub fn layers(&self, schedule: &Schedule) -> Vec<(Matrix, Vector)> {
        schedule.rows.iter().map(|row| self.combine(row)).collect()
    }

    /// Trainable scalars in a fixed order: all `omega`, all `beta`, then `lambda` if learnable.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.omega {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.beta {
            out.extend_from_slice(b.as_slice());
        }
        if self.lambda.learnable {
            out.push(self.lambda.value);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                op: "set_flat",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for w in &mut self.omega {
            for v in w.as_mut_slice() {
                *v = *it.next().unwrap();
            }
        }
        for b in &mut self.beta {
            for v in b.as_mut_slice() {
                *v = *it.next().unwrap();
            }
        }
        if self.lambda.learnable {
            self.lambda.value = *it.next().unwrap();
        }
        Ok(())
    }

    /// Squared Euclidean norm of all coefficients (`lambda` excluded).
    pub fn coefficient_norm_sq(&self) -> f64 {
        self.omega.iter().map(Matrix::frobenius_sq).sum::<f64>()
            + self.beta.iter().map(Vector::norm_sq).sum::<f64>()
    }

    pub fn to_document(&self) -> ParamsDocument {
        let (kind, degree, intervals) = match self.kind {
            ControlKind::Spline { degree, intervals } => ("splinet", Some(degree), intervals),
            ControlKind::PerLayer { layers } => ("per_layer", None, layers),
        };
        ParamsDocument {
            kind: kind.to_string(),
            degree,
            intervals,
            m: self.width,
            lambda: self.lambda.value,
            lambda_learnable: self.lambda.learnable,
            antisymmetric: self.antisymmetric,
            gamma_shift: self.gamma_shift,
            omega: self.omega.iter().map(|w| w.as_slice().to_vec()).collect(),
            beta: self.beta.iter().map(|b| b.as_slice().to_vec()).collect(),
        }
    }

    pub fn from_document(doc: &ParamsDocument) -> Result<Self> {
        let kind = match (doc.kind.as_str(), doc.degree) {
            ("splinet", Some(degree)) => ControlKind::Spline {
                degree,
                intervals: doc.intervals,
            },
            ("splinet", None) => {
                return Err(Error::config("degree", "splinet parameters need a degree"))
            }
            ("per_layer", _) => ControlKind::PerLayer {
                layers: doc.intervals,
            },
            (other, _) => {
                return Err(Error::config(
                    "kind",
                    format!("unknown control kind `{other}`"),
                ))
            }
        };
        let m = doc.m;
        let omega = doc
            .omega
            .iter()
            .map(|w| Matrix::new(m, m, w.clone()))
            .collect::<Result<Vec<_>>>()?;
        let beta = doc
            .beta
            .iter()
            .map(|b| Vector::new(b.clone()))
            .collect::<Result<Vec<_>>>()?;
        let params = ControlParams {
            kind,
            width: m,
            omega,
            beta,
            lambda: TimeScale {
                value: doc.lambda,
                learnable: doc.lambda_learnable,
            },
            antisymmetric: doc.antisymmetric,
            gamma_shift: doc.gamma_shift,
        };
        params.validate()?;
        Ok(params)
    }
}

/// `W - W^T - gamma I`
pub fn antisymmetrize(w: &Matrix, gamma_shift: f64) -> Matrix {
    let mut out = w.sub(&w.transpose()).expect("square matrix");
    for i in 0..out.rows() {
        out[(i, i)] -= gamma_shift;
    }
    out
}

fn validate_kind(kind: &ControlKind) -> Result<()> {
    match *kind {
        ControlKind::Spline { intervals: 0, .. } => Err(Error::InvalidArgument(
            "spline control needs L >= 1".into(),
        )),
        ControlKind::PerLayer { layers: 0 } => Err(Error::InvalidArgument(
            "per-layer control needs N >= 1".into(),
        )),
        _ => Ok(()),
    }
}

fn validate_lambda(value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time scale must be positive, got {value}"
        )));
    }
    Ok(())
}

/// On-disk form of [`ControlParams`]; `omega` entries are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub kind: String,
    pub degree: Option<usize>,
    #[serde(rename = "L")]
    pub intervals: usize,
    pub m: usize,
    pub lambda: f64,
    #[serde(default)]
    pub lambda_learnable: bool,
    pub antisymmetric: bool,
    pub gamma_shift: f64,
    pub omega: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigenvalues;

    fn spline(degree: usize, intervals: usize) -> ControlKind {
        ControlKind::Spline { degree, intervals }
    }

    #[test]
    fn aligned_degree_one_picks_coefficient() {
        let n = 10;
        let p = ControlParams::init_random(spline(1, n), 3, 7, 1.0, TimeScale::default()).unwrap();
        let grid = TimeGrid::reference(n).unwrap();
        for i in 0..n {
            let (w, b) = p.materialize(grid.time(i)).unwrap();
            assert_eq!(w, p.omega[i]);
            assert_eq!(b, p.beta[i]);
        }
    }

    #[test]
    fn zero_coefficients_give_zero_control() {
        let p = ControlParams::zeros(spline(2, 4), 3).unwrap();
        for t in [0.0, 0.3, 0.999, 1.0] {
            let (w, b) = p.materialize(t).unwrap();
            assert_eq!(w, Matrix::zeros(3, 3));
            assert_eq!(b, Vector::zeros(3));
        }
    }

    #[test]
    fn antisymmetric_single_coefficient() {
        let mut p = ControlParams::zeros(spline(1, 4), 2)
            .unwrap()
            .with_antisymmetric(0.5);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![5.0, 3.0]]).unwrap();
        // storage slot 2 peaks at tau_2 = 0.5
        p.omega[2] = m.clone();
        let (w, _) = p.materialize(0.5).unwrap();
        let expected = Matrix::from_rows(&[vec![-0.5, -3.0], vec![3.0, -0.5]]).unwrap();
        assert_eq!(w, expected);
    }

    #[test]
    fn per_layer_lookup() {
        let p = ControlParams::init_random(ControlKind::PerLayer { layers: 4 }, 2, 1, 1.0, TimeScale::default())
            .unwrap();
        assert_eq!(p.materialize(0.5).unwrap().0, p.omega[2]);
        assert!(matches!(p.materialize(0.3), Err(Error::OffGrid { .. })));
        assert!(matches!(p.materialize(1.0), Err(Error::OffGrid { .. })));
    }

    #[test]
    fn init_random_contract() {
        let a = ControlParams::init_random(spline(2, 3), 4, 42, 1e-3, TimeScale::default()).unwrap();
        let b = ControlParams::init_random(spline(2, 3), 4, 42, 1e-3, TimeScale::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.to_flat().iter().all(|v| v.abs() <= 1e-3));
        let c = ControlParams::init_random(spline(2, 3), 4, 43, 1e-3, TimeScale::default()).unwrap();
        assert_ne!(a, c);
        assert!(ControlParams::init_random(spline(2, 3), 4, 42, 0.0, TimeScale::default()).is_err());
    }

    #[test]
    fn param_counts() {
        let p = ControlParams::zeros(spline(2, 3), 4).unwrap();
        assert_eq!(p.param_count(), 100);
        let q = ControlParams::zeros(ControlKind::PerLayer { layers: 100 }, 4).unwrap();
        assert_eq!(q.param_count(), 2000);
        let mut r = p.clone();
        r.lambda = TimeScale::learnable(1.0);
        assert_eq!(r.param_count(), 101);
        assert_eq!(r.to_flat().len(), 101);
    }

    #[test]
    fn flat_roundtrip_and_document() {
        let mut p = ControlParams::init_random(spline(3, 5), 3, 9, 0.7, TimeScale::learnable(2.5))
            .unwrap()
            .with_antisymmetric(0.1);
        let flat = p.to_flat();
        let mut q = ControlParams::zeros(p.kind, 3).unwrap();
        q.lambda = TimeScale::learnable(1.0);
        q.antisymmetric = true;
        q.gamma_shift = 0.1;
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);

        let json = serde_json::to_string(&p.to_document()).unwrap();
        let back = ControlParams::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(p, back);

        p.omega.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn linear_in_coefficients() {
        let kind = spline(2, 5);
        let a = ControlParams::init_random(kind, 3, 1, 1.0, TimeScale::default()).unwrap();
        let b = ControlParams::init_random(kind, 3, 2, 1.0, TimeScale::default()).unwrap();
        let alpha = -1.7;
        let mut c = a.clone();
        let combined: Vec<f64> = a
            .to_flat()
            .iter()
            .zip(b.to_flat())
            .map(|(x, y)| alpha * x + y)
            .collect();
        c.set_flat(&combined).unwrap();
        for k in 0..=40 {
            let t = k as f64 / 40.0;
            let (wa, ba) = a.materialize(t).unwrap();
            let (wb, bb) = b.materialize(t).unwrap();
            let (wc, bc) = c.materialize(t).unwrap();
            for ((x, y), z) in wa.as_slice().iter().zip(wb.as_slice()).zip(wc.as_slice()) {
                assert!((alpha * x + y - z).abs() < 1e-12);
            }
            for ((x, y), z) in ba.iter().zip(bb.iter()).zip(bc.iter()) {
                assert!((alpha * x + y - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degree_one_entries_are_piecewise_linear() {
        let p = ControlParams::init_random(spline(1, 4), 2, 5, 1.0, TimeScale::default()).unwrap();
        for k in 0..4 {
            let (t0, t1) = (k as f64 / 4.0 + 0.01, (k + 1) as f64 / 4.0 - 0.01);
            let tm = 0.5 * (t0 + t1);
            let (w0, _) = p.materialize(t0).unwrap();
            let (w1, _) = p.materialize(t1).unwrap();
            let (wm, _) = p.materialize(tm).unwrap();
            for j in 0..4 {
                let mid = 0.5 * (w0.as_slice()[j] + w1.as_slice()[j]);
                assert!((mid - wm.as_slice()[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn antisymmetric_shift_sets_real_parts() {
        let gamma = 0.3;
        let p = ControlParams::init_random(spline(2, 6), 5, 3, 1.0, TimeScale::default())
            .unwrap()
            .with_antisymmetric(gamma);
        for k in 0..=20 {
            let (w, _) = p.materialize(k as f64 / 20.0).unwrap();
            for z in eigenvalues(&w).unwrap() {
                assert!((z.re + gamma).abs() < 1e-9, "{z:?}");
            }
        }
    }

    #[test]
    fn schedule_matches_materialize() {
        let p = ControlParams::init_random(spline(3, 7), 3, 11, 1.0, TimeScale::default()).unwrap();
        let grid = TimeGrid::reference(50).unwrap();
        let layers = p.layers(&p.schedule(&grid).unwrap());
        for (i, (w, b)) in layers.iter().enumerate() {
            let (w2, b2) = p.materialize(grid.time(i)).unwrap();
            assert_eq!(w, &w2);
            assert_eq!(b, &b2);
        }
        let per = ControlParams::zeros(ControlKind::PerLayer { layers: 5 }, 2).unwrap();
        assert!(per.schedule(&grid).is_err());
    }
}
