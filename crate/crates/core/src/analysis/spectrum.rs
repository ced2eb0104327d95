//! Eigenvalues of the layer Jacobians `h * lambda * diag(sigma'(W_i x_i + b_i)) W_i`
//! along a probe trajectory, and their position relative to the forward-Euler
//! stability disk `|1 + z| <= 1`.

use serde::{Deserialize, Serialize};

use crate::control::{ControlParams, TimeGrid};
use crate::dynamics::{propagate_layers, Activation};
use crate::error::Result;
use crate::linalg::{eigenvalues, Complex, Vector};

const DISK_SLACK: f64 = 1e-12;

pub fn inside_stability_disk(z: Complex) -> bool {
    (1.0 + z.re).hypot(z.im) <= 1.0 + DISK_SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    pub time: f64,
    /// Eigenvalues of `diag(sigma') W_i`, before scaling by `h * lambda`.
    pub eigenvalues: Vec<Complex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub probe: Vec<f64>,
    pub h: f64,
    pub lambda: f64,
    pub layers: Vec<LayerSpectrum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub layer: usize,
    pub re: f64,
    pub im: f64,
    pub inside_disk: bool,
}

impl SpectrumReport {
    /// `h * lambda`, the factor taking unscaled eigenvalues to the Euler disk.
    pub fn scale(&self) -> f64 {
        self.h * self.lambda
    }

    /// Scaled eigenvalues with their disk flags, using step size `h`.
    pub fn rows_with_step(&self, h: f64) -> Vec<SpectrumRow> {
        let s = h * self.lambda;
        self.layers
            .iter()
            .flat_map(|l| {
                l.eigenvalues.iter().map(move |&z| {
                    let z = z.scale(s);
                    SpectrumRow {
                        layer: l.layer,
                        re: z.re,
                        im: z.im,
                        inside_disk: inside_stability_disk(z),
                    }
                })
            })
            .collect()
    }

    pub fn rows(&self) -> Vec<SpectrumRow> {
        self.rows_with_step(self.h)
    }

    pub fn all_inside_with_step(&self, h: f64) -> bool {
        self.rows_with_step(h).iter().all(|r| r.inside_disk)
    }

    pub fn fraction_inside(&self) -> f64 {
        let rows = self.rows();
        rows.iter().filter(|r| r.inside_disk).count() as f64 / rows.len() as f64
    }
}

/// Propagates `x0` and collects the spectrum at every applied layer `i = 0..N-1`.
pub fn stability_spectrum(
    params: &ControlParams,
    grid: &TimeGrid,
    act: Activation,
    x0: &Vector,
) -> Result<SpectrumReport> {
    let layers = params.layers(&params.schedule(grid)?);
    let traj = propagate_layers(x0.clone(), &layers, grid, params.lambda.value, act)?;
    let mut out = Vec::with_capacity(layers.len());
    for (i, ((w, _), pre)) in layers.iter().zip(&traj.pre_activations).enumerate() {
        let jac = w.scale_rows(&act.apply_deriv(pre))?;
        out.push(LayerSpectrum {
            layer: i,
            time: grid.time(i),
            eigenvalues: eigenvalues(&jac)?,
        });
    }
    Ok(SpectrumReport {
        probe: x0.as_slice().to_vec(),
        h: grid.h(),
        lambda: params.lambda.value,
        layers: out,
    })
}
