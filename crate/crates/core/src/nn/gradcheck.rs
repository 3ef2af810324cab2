//! Central finite-difference check of the analytic gradients.
//!
//! The numerical side only calls `model_forward` and the loss, so it is an
//! independent route to every parameter derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::targets::{LossTerms, TargetKind};

use super::model::{model_backward, model_forward};
use super::params::{Arch, ModelParameters};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, for derivatives that are zero or
/// nearly so.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub target: TargetKind,
    pub bidirectional: bool,
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Random problem instance: parameters, input frames, target frames.
pub struct Problem {
    pub params: ModelParameters<f64>,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub steps: usize,
    pub lambda: f64,
}

impl Problem {
    pub fn random(arch: Arch, steps: usize, seed: u64) -> Result<Self> {
        let mut params = ModelParameters::<f64>::init(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        // Non-trivial biases so no gate sits at a symmetric point.
        for v in params.data_mut().iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let input = (0..steps * arch.input_dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let target = (0..steps * arch.target.target_dim())
            .map(|_| match arch.target {
                TargetKind::Mrm => rng.gen_range(0.0..1.0),
                _ => rng.gen_range(-1.0..1.0),
            })
            .collect();
        Ok(Self { params, input, target, steps, lambda: 1.0 })
    }

    fn terms<'a>(&'a self, kind: TargetKind, prediction: &'a [f64]) -> LossTerms<'a, f64> {
        LossTerms {
            kind,
            prediction,
            target: &self.target,
            input: &self.input,
            num_channels: self.params.arch().num_channels,
            valid_len: self.steps,
            lambda: self.lambda,
        }
    }

    pub fn loss_with(&self, params: &ModelParameters<f64>, kind: TargetKind) -> Result<f64> {
        let out = model_forward(params, &self.input, self.steps)?;
        self.terms(kind, out.output()).loss()
    }

    pub fn analytic_gradient(&self, kind: TargetKind) -> Result<Vec<f64>> {
        let cache = model_forward(&self.params, &self.input, self.steps)?;
        let (_, d_out) = self.terms(kind, cache.output()).loss_and_grad()?;
        model_backward(&self.params, &cache, &d_out)
    }

    /// Central differences of `loss` with respect to every parameter.
    pub fn numeric_gradient(
        &self,
        loss: impl Fn(&ModelParameters<f64>) -> Result<f64>,
    ) -> Result<Vec<f64>> {
        let mut p = self.params.clone();
        let mut out = vec![0.0; p.len()];
        for (i, g) in out.iter_mut().enumerate() {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + FD_STEP;
            let up = loss(&p)?;
            p.data_mut()[i] = orig - FD_STEP;
            let down = loss(&p)?;
            p.data_mut()[i] = orig;
            *g = (up - down) / (2.0 * FD_STEP);
        }
        Ok(out)
    }
}

/// Compare analytic and numerical gradients for one configuration.
pub fn check(
    kind: TargetKind,
    bidirectional: bool,
    num_channels: usize,
    hidden: [usize; 2],
    steps: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    let arch = Arch::new(num_channels, kind, bidirectional, hidden);
    let prob = Problem::random(arch, steps, seed)?;
    let analytic = prob.analytic_gradient(kind)?;
    let numeric = prob.numeric_gradient(|p| prob.loss_with(p, kind))?;
    let blocks = prob
        .params
        .blocks()
        .iter()
        .map(|b| {
            let mut rel: f64 = 0.0;
            let mut abs: f64 = 0.0;
            for i in b.range() {
                rel = rel.max(relative_error(analytic[i], numeric[i]));
                abs = abs.max((analytic[i] - numeric[i]).abs());
            }
            BlockError { block: b.name.clone(), max_rel_error: rel, max_abs_error: abs }
        })
        .collect();
    Ok(GradcheckReport { target: kind, bidirectional, blocks })
}

/// Every target kind in both directions on the reference configuration:
/// hidden (5, 4), two channels, seven frames.
pub fn check_all(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut out = Vec::new();
    for bidirectional in [false, true] {
        for kind in TargetKind::ALL {
            out.push(check(kind, bidirectional, 2, [5, 4], 7, seed)?);
        }
    }
    Ok(out)
}
