//! Classical fixed-step fourth-order Runge-Kutta.
//!
//! Works on flat `f64` state vectors so the same stepper drives the
//! two-state aggregated model and the multi-machine fleet.

use crate::error::Result;

/// Scratch buffers for [`rk4_step`], reused across steps to avoid allocation.
#[derive(Debug, Clone, Default)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn resize(&mut self, n: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(n, 0.0);
        }
    }
}

/// Advance `y` in place from `t` to `t + h`.
///
/// `f(t, y, dydt)` writes the derivative into `dydt`; an error from any
/// stage aborts the step and leaves `y` untouched.
pub fn rk4_step<F>(y: &mut [f64], t: f64, h: f64, ws: &mut Rk4Workspace, mut f: F) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    ws.resize(n);
    let Rk4Workspace { k1, k2, k3, k4, tmp } = ws;

    f(t, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, tmp, k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}
