//! Multi-dimensional DFT over the torus, acting on fields in flat-index order.
//!
//! Forward: `f̂(w) = n^{-d} Σ_x f(x) e^{-2πi x·w/n}`.
//! Inverse: `f(x) = Σ_w f̂(w) e^{2πi x·w/n}`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::torus::LatticeSpec;

pub struct TorusFft {
    spec: LatticeSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    order: Vec<usize>,
}

impl std::fmt::Debug for TorusFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusFft").field("spec", &self.spec).finish()
    }
}

impl TorusFft {
    pub fn new(spec: LatticeSpec) -> Self {
        let mut planner = FftPlanner::new();
        let n = spec.side();
        Self {
            spec,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            order: spec.modular_order(),
        }
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); f.len()];
        for (i, &v) in f.iter().enumerate() {
            buf[self.order[i]] = Complex64::new(v, 0.0);
        }
        self.run(&mut buf, true);
        let scale = 1.0 / self.spec.site_count() as f64;
        self.order.iter().map(|&m| buf[m] * scale).collect()
    }

    pub fn forward(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); f.len()];
        for (i, &v) in f.iter().enumerate() {
            buf[self.order[i]] = v;
        }
        self.run(&mut buf, true);
        let scale = 1.0 / self.spec.site_count() as f64;
        self.order.iter().map(|&m| buf[m] * scale).collect()
    }

    pub fn inverse(&self, fh: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); fh.len()];
        for (i, &v) in fh.iter().enumerate() {
            buf[self.order[i]] = v;
        }
        self.run(&mut buf, false);
        self.order.iter().map(|&m| buf[m]).collect()
    }

    /// Inverse transform keeping real parts; also returns the largest discarded imaginary part.
    pub fn inverse_real(&self, fh: &[Complex64]) -> (Vec<f64>, f64) {
        let full = self.inverse(fh);
        let max_im = full.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        (full.into_iter().map(|c| c.re).collect(), max_im)
    }

    fn run(&self, buf: &mut [Complex64], forward: bool) {
        let plan = if forward { &self.forward } else { &self.inverse };
        let n = self.spec.side();
        let d = self.spec.dim();
        let total = buf.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // last axis is contiguous
        plan.process_with_scratch(buf, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in (0..d.saturating_sub(1)).rev() {
            let stride = n.pow((d - 1 - axis) as u32);
            let block = stride * n;
            for base_block in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = base_block + inner;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        buf[base + j * stride] = *v;
                    }
                }
            }
        }
    }
}
