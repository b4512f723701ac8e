//! Central finite-difference checking of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};

mod suite;

pub use suite::{check_block, check_layers, run_suite};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Number of entries of the block that were perturbed.
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub tol: f64,
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is zero are judged on absolute error.
    pub denom_floor: f64,
    /// Check at most this many randomly chosen entries per block.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { tol: 1e-4, step: 1e-5, denom_floor: 1e-6, max_entries: None, seed: 0 }
    }
}

/// A scalar objective over named parameter blocks that can be perturbed in place.
pub trait GradProbe {
    fn block_names(&self) -> Vec<String>;
    fn block_len(&self, block: usize) -> usize;
    fn get(&self, block: usize, index: usize) -> f64;
    fn set(&mut self, block: usize, index: usize, value: f64);
    fn loss(&mut self) -> Result<f64>;
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = f64::max(f64::max(analytic.abs(), numeric.abs()), floor);
    (analytic - numeric).abs() / denom
}

/// Compare `analytic[i]` against central differences for block `blocks[i]`.
pub fn finite_diff_check<P: GradProbe + ?Sized>(
    probe: &mut P,
    blocks: &[usize],
    analytic: &[Vec<f64>],
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>> {
    if !(cfg.step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    if blocks.len() != analytic.len() {
        return Err(shape_err("finite_diff_check blocks", blocks.len(), analytic.len()));
    }
    let names = probe.block_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(blocks.len());
    for (&b, grad) in blocks.iter().zip(analytic) {
        let len = probe.block_len(b);
        if grad.len() != len {
            return Err(shape_err("finite_diff_check gradient length", len, grad.len()));
        }
        let indices: Vec<usize> = match cfg.max_entries {
            Some(m) if m < len => {
                let mut v = sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for &i in &indices {
            let orig = probe.get(b, i);
            probe.set(b, i, orig + cfg.step);
            let plus = probe.loss()?;
            probe.set(b, i, orig - cfg.step);
            let minus = probe.loss()?;
            probe.set(b, i, orig);
            if !plus.is_finite() || !minus.is_finite() || !grad[i].is_finite() {
                return Err(Error::NonFinite("finite-difference objective"));
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            max_abs = max_abs.max((grad[i] - numeric).abs());
            max_rel = max_rel.max(relative_error(grad[i], numeric, cfg.denom_floor));
        }
        reports.push(GradCheckReport {
            name: names[b].clone(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            checked: indices.len(),
            passed: max_rel < cfg.tol,
        });
    }
    Ok(reports)
}

/// Probe over owned parameter vectors and a closure objective.
pub struct FnProbe<F> {
    pub names: Vec<String>,
    pub params: Vec<Vec<f64>>,
    pub objective: F,
}

impl<F: FnMut(&[Vec<f64>]) -> Result<f64>> GradProbe for FnProbe<F> {
    fn block_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn block_len(&self, block: usize) -> usize {
        self.params[block].len()
    }

    fn get(&self, block: usize, index: usize) -> f64 {
        self.params[block][index]
    }

    fn set(&mut self, block: usize, index: usize, value: f64) {
        self.params[block][index] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        (self.objective)(&self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn linear_probe() -> FnProbe<impl FnMut(&[Vec<f64>]) -> Result<f64>> {
        FnProbe {
            names: vec!["theta".into()],
            params: vec![vec![0.0, 0.5, -1.25]],
            objective: |p: &[Vec<f64>]| Ok(p[0].iter().map(|t| 3.0 * t).sum()),
        }
    }

    #[test]
    fn linear_map_is_exact() {
        // dyadic point and step so that theta +- step is representable
        let mut probe = linear_probe();
        let cfg = GradCheckConfig { step: 1.0 / 131072.0, ..Default::default() };
        let r = finite_diff_check(&mut probe, &[0], &[vec![3.0; 3]], &cfg).unwrap();
        assert!(r[0].passed);
        assert!(r[0].max_rel_error <= 1e-12, "{}", r[0].max_rel_error);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut probe = linear_probe();
        let r = finite_diff_check(&mut probe, &[0], &[vec![3.0 * 1.01; 3]], &GradCheckConfig::default()).unwrap();
        assert!(!r[0].passed);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut probe = FnProbe {
            names: vec!["x".into()],
            params: vec![vec![0.0]],
            objective: |p: &[Vec<f64>]| Ok(1.0 / p[0][0]),
        };
        let err = finite_diff_check(
            &mut probe,
            &[0],
            &[vec![0.0]],
            &GradCheckConfig { step: 0.0, ..Default::default() },
        );
        assert!(err.is_err());
        let mut probe = FnProbe {
            names: vec!["x".into()],
            params: vec![vec![0.0]],
            objective: |p: &[Vec<f64>]| Ok(if p[0][0] > 0.0 { f64::INFINITY } else { 0.0 }),
        };
        assert_eq!(
            finite_diff_check(&mut probe, &[0], &[vec![0.0]], &GradCheckConfig::default()),
            Err(Error::NonFinite("finite-difference objective"))
        );
    }

    #[test]
    fn parameters_restored_after_check() {
        let mut probe = linear_probe();
        let cfg = GradCheckConfig { max_entries: Some(2), ..Default::default() };
        let r = finite_diff_check(&mut probe, &[0], &[vec![3.0; 3]], &cfg).unwrap();
        assert_eq!(r[0].checked, 2);
        assert_eq!(probe.params[0], vec![0.0, 0.5, -1.25]);
    }
}

/// Cross-entropy of a network's clip logits, perturbing its learned parameters.
///
/// BN runs in train mode with batch statistics and dropout is disabled, so
/// the objective is a deterministic function of the parameters.
pub struct NetworkProbe<'a> {
    pub net: &'a mut crate::blocks::Network,
    pub input: &'a crate::tensor::Tensor5,
    pub labels: &'a [usize],
}

impl NetworkProbe<'_> {
    /// Analytic gradient of every parameter block, in `params()` order.
    pub fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        self.net.zero_grad();
        let (out, tape) = self.net.forward(self.input, crate::ops::Mode::Train, None)?;
        let (_, g) = crate::ops::softmax_cross_entropy(&out.logits, self.labels)?;
        self.net.backward(&tape, &g)?;
        Ok(self.net.params().iter().map(|p| p.grad.to_vec()).collect())
    }
}

impl GradProbe for NetworkProbe<'_> {
    fn block_names(&self) -> Vec<String> {
        self.net.params().into_iter().map(|p| p.name).collect()
    }

    fn block_len(&self, block: usize) -> usize {
        self.net.params()[block].value.len()
    }

    fn get(&self, block: usize, index: usize) -> f64 {
        self.net.params()[block].value[index]
    }

    fn set(&mut self, block: usize, index: usize, value: f64) {
        self.net.params_mut()[block].value[index] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        let (out, _) = self.net.forward(self.input, crate::ops::Mode::Train, None)?;
        Ok(crate::ops::softmax_cross_entropy(&out.logits, self.labels)?.0)
    }
}

/// Finite-difference check of the parameter blocks `blocks` of `net`.
pub fn check_network(
    net: &mut crate::blocks::Network,
    input: &crate::tensor::Tensor5,
    labels: &[usize],
    blocks: &[usize],
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>> {
    let mut probe = NetworkProbe { net, input, labels };
    let all = probe.analytic()?;
    let analytic: Vec<Vec<f64>> = blocks.iter().map(|&b| all[b].clone()).collect();
    finite_diff_check(&mut probe, blocks, &analytic, cfg)
}
