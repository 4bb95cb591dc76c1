//! Streaming scalar LTI operators used to build the regression.
//!
//! The first-order low-pass `alpha/(p + alpha)` is discretized exactly for
//! the assumed input shape over each step: held constant ([`LowPass::step`])
//! or varying linearly between consecutive samples ([`LowPass::step_linear`]).
//! The dirty derivative `alpha p/(p + alpha)` is `alpha (u - lowpass(u))`
//! with the linear-hold low-pass, so it is exact on ramps.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Coeffs {
    dt: f64,
    /// `exp(-alpha dt)`
    decay: f64,
    /// `(1 - decay) / (alpha dt)`
    ramp: f64,
}

impl Coeffs {
    fn new(alpha: f64, dt: f64) -> Self {
        let x = alpha * dt;
        let one_minus = -(-x).exp_m1();
        Self { dt, decay: 1.0 - one_minus, ramp: one_minus / x }
    }
}

/// First-order low-pass `alpha/(p + alpha)` with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPass {
    alpha: f64,
    y: f64,
    u_prev: f64,
    primed: bool,
    coeffs: Option<Coeffs>,
}

impl LowPass {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParams(format!("filter pole alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, y: 0.0, u_prev: 0.0, primed: false, coeffs: None })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Last output.
    pub fn output(&self) -> f64 {
        self.y
    }

    /// Put the filter in steady state for a constant input `u0`.
    pub fn prime(&mut self, u0: f64) {
        self.y = u0;
        self.u_prev = u0;
        self.primed = true;
    }

    fn coeffs(&mut self, dt: f64) -> Coeffs {
        match self.coeffs {
            Some(c) if c.dt == dt => c,
            _ => {
                let c = Coeffs::new(self.alpha, dt);
                self.coeffs = Some(c);
                c
            }
        }
    }

    /// Advance by `dt` with `u` held over the step; returns the output at the
    /// end of the step. An unprimed filter starts from zero.
    pub fn step(&mut self, u: f64, dt: f64) -> f64 {
        let c = self.coeffs(dt);
        if !self.primed {
            self.y = 0.0;
            self.primed = true;
        }
        self.y = c.decay * self.y + (1.0 - c.decay) * u;
        self.u_prev = u;
        self.y
    }

    /// Advance by `dt` with the input ramping linearly from the previous
    /// input to `u`. On the first call of an unprimed filter the input is
    /// taken as constant over the step and the output starts from zero.
    pub fn step_linear(&mut self, u: f64, dt: f64) -> f64 {
        let c = self.coeffs(dt);
        if !self.primed {
            self.y = 0.0;
            self.u_prev = u;
            self.primed = true;
        }
        self.y = c.decay * self.y + (1.0 - c.ramp) * u + (c.ramp - c.decay) * self.u_prev;
        self.u_prev = u;
        self.y
    }
}

/// Realizable derivative `alpha p/(p + alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirtyDerivative {
    lp: LowPass,
}

impl DirtyDerivative {
    pub fn new(alpha: f64) -> Result<Self> {
        Ok(Self { lp: LowPass::new(alpha)? })
    }

    /// Steady state for a constant input (output zero).
    pub fn prime(&mut self, u0: f64) {
        self.lp.prime(u0);
    }

    pub fn step(&mut self, u: f64, dt: f64) -> f64 {
        let lp = self.lp.step_linear(u, dt);
        self.lp.alpha * (u - lp)
    }
}

/// Pure sample delay of `d = n dt` with `n >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    delay: f64,
    dt: f64,
    buffer: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(delay: f64, dt: f64) -> Result<Self> {
        let n = delay_samples(delay, dt)?;
        Ok(Self { delay, dt, buffer: std::iter::repeat_n(0.0, n).collect() })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Push `u` and return the input from exactly `len()` calls ago (zero
    /// before the line has filled).
    pub fn step(&mut self, u: f64) -> f64 {
        let out = self.buffer.pop_front().unwrap_or(0.0);
        self.buffer.push_back(u);
        out
    }
}

/// Integer number of samples in `delay`, rejecting non-aligned delays.
pub fn delay_samples(delay: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(delay > 0.0) || !delay.is_finite() {
        return Err(Error::DelayAlignment { delay, dt });
    }
    let ratio = delay / dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::DelayAlignment { delay, dt });
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_pole() {
        assert!(LowPass::new(0.0).is_err());
        assert!(LowPass::new(-1.0).is_err());
        assert!(LowPass::new(f64::NAN).is_err());
    }

    #[test]
    fn step_response_after_one_sample() {
        let mut lp = LowPass::new(1000.0).unwrap();
        let y = lp.step(1.0, 1e-3);
        assert!((y - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((y - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn constant_input_settles() {
        let alpha = 50.0;
        let dt = 1e-3;
        let mut lp = LowPass::new(alpha).unwrap();
        let mut y = 0.0;
        let n = (10.0 / alpha / dt).ceil() as usize + 1;
        for _ in 0..n {
            y = lp.step(3.5, dt);
        }
        // the residual after 10/alpha is 3.5 e^-10
        assert!((y - 3.5).abs() <= 3.5 * (-10.0f64).exp());
        for _ in 0..n {
            y = lp.step(3.5, dt);
        }
        assert!((y - 3.5).abs() < 1e-8);
    }

    #[test]
    fn held_input_matches_continuous_solution() {
        // piecewise-constant input, analytic solution stepped interval by interval
        let alpha = 7.0;
        let dt = 0.01;
        let levels = [1.0, -2.0, 0.5, 0.5, 3.0, -1.0];
        let mut lp = LowPass::new(alpha).unwrap();
        let mut exact = 0.0f64;
        for (i, &u) in levels.iter().cycle().take(600).enumerate() {
            let y = lp.step(u, dt);
            let t_end = (i + 1) as f64 * dt;
            let t_start = i as f64 * dt;
            exact = u + (exact - u) * (-alpha * (t_end - t_start)).exp();
            assert!((y - exact).abs() < 1e-14 * exact.abs().max(1.0) * 4.0, "i = {i}");
        }
    }

    #[test]
    fn sine_at_corner_frequency_is_attenuated_by_sqrt2() {
        let alpha = 20.0;
        let dt = 1e-4;
        let mut lp = LowPass::new(alpha).unwrap();
        // oracle: the continuous filter integrated with RK4 at dt/10
        let mut fine = 0.0f64;
        let h = dt / 10.0;
        let u = |t: f64| (alpha * t).sin();
        let f = |t: f64, y: f64| alpha * (u(t) - y);
        let total = (2.0 / dt) as usize;
        let mut peak = 0.0f64;
        let mut peak_fine = 0.0f64;
        for k in 0..total {
            let t = k as f64 * dt;
            let y = lp.step_linear(u(t), dt);
            if k > 0 {
                for j in 0..10 {
                    let s = t - dt + j as f64 * h;
                    let k1 = f(s, fine);
                    let k2 = f(s + h / 2.0, fine + h / 2.0 * k1);
                    let k3 = f(s + h / 2.0, fine + h / 2.0 * k2);
                    let k4 = f(s + h, fine + h * k3);
                    fine += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
            }
            if t > 1.0 {
                peak = peak.max(y.abs());
                peak_fine = peak_fine.max(fine.abs());
            }
        }
        let expected = 1.0 / 2f64.sqrt();
        assert!((peak - expected).abs() < 1e-4, "{peak}");
        assert!((peak - peak_fine).abs() < 1e-6, "{peak} vs {peak_fine}");
    }

    #[test]
    fn dirty_derivative_of_constant_vanishes() {
        let mut dd = DirtyDerivative::new(100.0).unwrap();
        let mut z = f64::MAX;
        for _ in 0..2000 {
            z = dd.step(0.73, 1e-3);
        }
        assert!(z.abs() < 1e-9);

        let mut primed = DirtyDerivative::new(100.0).unwrap();
        primed.prime(0.73);
        assert_eq!(primed.step(0.73, 1e-3), 0.0);
    }

    #[test]
    fn dirty_derivative_of_ramp_is_slope() {
        for &(alpha, dt, m) in &[(1000.0, 1e-3, 2.5e-4), (10.0, 1e-3, -3.0), (1.0, 0.01, 1.0)] {
            let mut dd = DirtyDerivative::new(alpha).unwrap();
            dd.prime(1.0);
            let n = ((20.0 / alpha) / dt).ceil() as usize + 1;
            let mut z = 0.0;
            for k in 0..n {
                z = dd.step(1.0 + m * k as f64 * dt, dt);
            }
            assert!((z - m).abs() <= 1e-6 * m.abs(), "alpha {alpha}: {z} vs {m}");
        }
    }

    #[test]
    fn dirty_derivative_step_transient_decays() {
        let mut dd = DirtyDerivative::new(1000.0).unwrap();
        dd.prime(0.0);
        let first = dd.step(1.0, 1e-3);
        assert!(first > 0.0);
        let mut last = first;
        // 1 - lowpass = e^{-k} is representable for k up to about 36
        for _ in 0..30 {
            let z = dd.step(1.0, 1e-3);
            assert!(z < last);
            last = z;
        }
        assert!(last.abs() < 1e-9);
    }

    #[test]
    fn dirty_derivative_equals_lowpass_of_difference_quotient() {
        // alpha (u - L_lin(u)) is the held low-pass of (u_k - u_{k-1})/dt
        let alpha = 300.0;
        let dt = 1e-3;
        let mut dd = DirtyDerivative::new(alpha).unwrap();
        let mut lp = LowPass::new(alpha).unwrap();
        let u = |k: usize| (0.37 * k as f64).sin() + 0.01 * k as f64;
        dd.prime(u(0));
        lp.prime(0.0);
        for k in 1..500 {
            let z = dd.step(u(k), dt);
            let q = lp.step((u(k) - u(k - 1)) / dt, dt);
            assert!((z - q).abs() < 1e-9 * (1.0 + q.abs()), "k = {k}");
        }
    }

    #[test]
    fn delay_rejects_misaligned() {
        assert!(DelayLine::new(2.0, 1e-3).is_ok());
        assert_eq!(DelayLine::new(2.0, 1e-3).unwrap().len(), 2000);
        assert!(matches!(DelayLine::new(2.0005, 1e-3), Err(Error::DelayAlignment { .. })));
        assert!(DelayLine::new(0.0, 1e-3).is_err());
        assert!(DelayLine::new(1e-4, 1e-3).is_err());
        assert!(DelayLine::new(1.0, 0.0).is_err());
    }

    #[test]
    fn delay_constant_and_impulse() {
        let mut line = DelayLine::new(0.005, 0.001).unwrap();
        let out: Vec<f64> = (0..12).map(|_| line.step(2.0)).collect();
        assert_eq!(&out[..5], &[0.0; 5]);
        assert!(out[5..].iter().all(|&v| v == 2.0));

        let mut line = DelayLine::new(0.005, 0.001).unwrap();
        let out: Vec<f64> = (0..20).map(|k| line.step(if k == 3 { 1.0 } else { 0.0 })).collect();
        for (k, v) in out.iter().enumerate() {
            assert_eq!(*v, if k == 8 { 1.0 } else { 0.0 });
        }
    }

    proptest! {
        #[test]
        fn delay_is_bit_exact(stream in prop::collection::vec(-1e6f64..1e6, 1..400), n in 1usize..50) {
            let dt = 0.002;
            let mut line = DelayLine::new(n as f64 * dt, dt).unwrap();
            for (k, &u) in stream.iter().enumerate() {
                let out = line.step(u);
                let expected = if k >= n { stream[k - n] } else { 0.0 };
                prop_assert_eq!(out.to_bits(), expected.to_bits());
            }
        }

        #[test]
        fn lowpass_is_linear(
            u in prop::collection::vec(-10.0f64..10.0, 1..200),
            v in prop::collection::vec(-10.0f64..10.0, 200),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            alpha in 0.5f64..2000.0,
        ) {
            let dt = 1e-3;
            let mut fu = LowPass::new(alpha).unwrap();
            let mut fv = LowPass::new(alpha).unwrap();
            let mut fw = LowPass::new(alpha).unwrap();
            let mut du = DirtyDerivative::new(alpha).unwrap();
            let mut dv = DirtyDerivative::new(alpha).unwrap();
            let mut dw = DirtyDerivative::new(alpha).unwrap();
            for (&x, &y) in u.iter().zip(&v) {
                let w = a * x + b * y;
                let (yu, yv) = (fu.step(x, dt), fv.step(y, dt));
                let lhs = fw.step(w, dt);
                let rhs = a * yu + b * yv;
                let scale = (a * yu).abs() + (b * yv).abs() + f64::MIN_POSITIVE;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
                let lhs = dw.step(w, dt);
                let rhs = a * du.step(x, dt) + b * dv.step(y, dt);
                // the derivative subtracts two O(|u|) terms scaled by alpha
                let scale = alpha * ((a * x).abs() + (b * y).abs()) + f64::MIN_POSITIVE;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
