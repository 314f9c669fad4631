//! Finite-difference verification of every backward pass.
//!
//! Each check draws random parameters, inputs and targets in 64-bit
//! precision, then compares analytic gradients against central differences
//! `(L(θ+ε) - L(θ-ε)) / 2ε` at randomly chosen coordinates. The relative
//! error is `|a - n| / max(|a|, |n|, 1e-8)`.
//!
//! ReLU and max pooling make the loss piecewise smooth. A coordinate whose
//! `±ε` probes land in a different linear region than the unperturbed
//! point (a ReLU mask or pooling switch changes) does not have a
//! meaningful finite difference; such coordinates are skipped and counted.
//!
//! ```
//! use attrgen::gradcheck::{check_layer, GradcheckConfig, TOLERANCE};
//! use attrgen::nn::Layer;
//!
//! let cfg = GradcheckConfig { trials: 3, ..GradcheckConfig::default() };
//! let conv = Layer::Conv3x3 { in_channels: 2, out_channels: 3 };
//! let report = check_layer(&conv, &[6, 6, 2], &cfg).unwrap();
//! assert!(report.max_rel_error < TOLERANCE);
//! ```

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{build_stage1_with, build_stage2_at, Network, NetworkSpec, Stage1Options};
use crate::nn::{concat_channels, split_channels, Layer, LayerCache, LayerParams};
use crate::tensor::Tensor;
use crate::training::mse;

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub epsilon: f64,
    /// Coordinates probed per tensor per trial.
    pub coords: usize,
    pub seed: u64,
    /// Input side length of the whole-network checks.
    pub network_size: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            trials: 20,
            epsilon: 1e-3,
            coords: 4,
            seed: 0,
            network_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < TOLERANCE
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} trials={:>3} checked={:>5} skipped={:>3} max_rel_error={:.3e} {}",
            self.name,
            self.trials,
            self.checked,
            self.skipped,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct Tally {
    report: CheckReport,
}

impl Tally {
    fn new(name: &str, trials: usize) -> Self {
        Tally {
            report: CheckReport {
                name: name.to_string(),
                trials,
                checked: 0,
                skipped: 0,
                max_rel_error: 0.0,
            },
        }
    }

    /// `eval(delta)` returns the loss and activation signature with the
    /// probed coordinate shifted by `delta`.
    fn probe<S: PartialEq>(
        &mut self,
        analytic: f64,
        eps: f64,
        mut eval: impl FnMut(f64) -> Result<(f64, S)>,
    ) -> Result<()> {
        let (_, s0) = eval(0.0)?;
        let (lp, sp) = eval(eps)?;
        let (lm, sm) = eval(-eps)?;
        if sp != s0 || sm != s0 {
            self.report.skipped += 1;
            return Ok(());
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let r = relative_error(analytic, numeric);
        self.report.checked += 1;
        if r > self.report.max_rel_error || r.is_nan() {
            self.report.max_rel_error = if r.is_nan() { f64::INFINITY } else { r };
        }
        Ok(())
    }
}

fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng)).expect("valid shape")
}

fn randomize_bias(p: &mut LayerParams<f64>, rng: &mut ChaCha8Rng) {
    for b in &mut p.bias {
        let z: f64 = StandardNormal.sample(rng);
        *b = 0.1 * z;
    }
}

fn pick(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, len, n.min(len)).into_vec()
}

fn trial_rng(cfg: &GradcheckConfig, salt: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(trial as u64 + 1);
    rng
}

fn salt(name: &str) -> u64 {
    name.bytes().fold(1469598103934665603u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211))
}

fn layer_signature(cache: Option<LayerCache<f64>>) -> Option<LayerCache<f64>> {
    cache.filter(|c| matches!(c, LayerCache::ReluMask { .. } | LayerCache::Switches(_)))
}

/// Checks one layer under the linear probe loss `L = <r, layer(x)>`.
pub fn check_layer(layer: &Layer, input_shape: &[usize], cfg: &GradcheckConfig) -> Result<CheckReport> {
    let mut tally = Tally::new(layer.name(), cfg.trials);
    let out_shape = layer.output_shape(input_shape)?;
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg, salt(layer.name()), t);
        let mut params: Option<LayerParams<f64>> = layer.init_params(&mut rng);
        if let Some(p) = params.as_mut() {
            randomize_bias(p, &mut rng);
        }
        let x = normal_tensor(input_shape, &mut rng);
        let r = normal_tensor(&out_shape, &mut rng);
        let (_, cache) = layer.forward(params.as_ref(), &x, true)?;
        let (gx, gp) = layer.backward(params.as_ref(), cache.as_ref(), &r)?;
        let eval = |p: Option<&LayerParams<f64>>, x: &Tensor<f64>| -> Result<(f64, Option<LayerCache<f64>>)> {
            let (y, c) = layer.forward(p, x, true)?;
            Ok((y.dot(&r)?, layer_signature(c)))
        };
        for i in pick(x.len(), cfg.coords, &mut rng) {
            tally.probe(gx.data()[i], cfg.epsilon, |d| {
                let mut xp = x.clone();
                xp.data_mut()[i] += d;
                eval(params.as_ref(), &xp)
            })?;
        }
        if let (Some(p), Some(g)) = (params.as_ref(), gp.as_ref()) {
            for i in pick(p.weights.len(), cfg.coords, &mut rng) {
                tally.probe(g.weights.data()[i], cfg.epsilon, |d| {
                    let mut pp = p.clone();
                    pp.weights.data_mut()[i] += d;
                    eval(Some(&pp), &x)
                })?;
            }
            for i in pick(p.bias.len(), cfg.coords, &mut rng) {
                tally.probe(g.bias[i], cfg.epsilon, |d| {
                    let mut pp = p.clone();
                    pp.bias[i] += d;
                    eval(Some(&pp), &x)
                })?;
            }
        }
    }
    Ok(tally.report)
}

/// Channel concatenation, whose backward pass is [`split_channels`].
pub fn check_concat(cfg: &GradcheckConfig) -> Result<CheckReport> {
    let mut tally = Tally::new("concat", cfg.trials);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg, salt("concat"), t);
        let a = normal_tensor(&[4, 4, 3], &mut rng);
        let b = normal_tensor(&[4, 4, 2], &mut rng);
        let r = normal_tensor(&[4, 4, 5], &mut rng);
        let (ga, gb) = split_channels(&r, 3)?;
        let loss = |a: &Tensor<f64>, b: &Tensor<f64>| Ok((concat_channels(a, b)?.dot(&r)?, ()));
        for i in pick(a.len(), cfg.coords, &mut rng) {
            tally.probe(ga.data()[i], cfg.epsilon, |d| {
                let mut ap = a.clone();
                ap.data_mut()[i] += d;
                loss(&ap, &b)
            })?;
        }
        for i in pick(b.len(), cfg.coords, &mut rng) {
            tally.probe(gb.data()[i], cfg.epsilon, |d| {
                let mut bp = b.clone();
                bp.data_mut()[i] += d;
                loss(&a, &bp)
            })?;
        }
    }
    Ok(tally.report)
}

/// Whole-network check under the MSE loss against a random target.
pub fn check_network(name: &str, spec: &NetworkSpec, cfg: &GradcheckConfig) -> Result<CheckReport> {
    let mut tally = Tally::new(name, cfg.trials);
    let out_shape = spec.trace()?.output().to_vec();
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cfg, salt(name), t);
        let mut net: Network<f64> = Network::init(spec.clone(), &mut rng)?;
        for p in net.params_mut() {
            randomize_bias(p, &mut rng);
        }
        let x = normal_tensor(&spec.primary_shape(), &mut rng);
        let s = match spec.attribute_count() {
            Some(n) => {
                let hot = rng.random_range(0..n);
                Some(Tensor::from_fn(&[n], |i| if i == hot { 1.0 } else { 0.0 })?)
            }
            None => spec.secondary_shape().map(|sh| normal_tensor(&sh, &mut rng)),
        };
        let y = normal_tensor(&out_shape, &mut rng);
        let (out, tape) = net.forward_train(&x, s.as_ref())?;
        let (_, g) = mse(&out, &y)?;
        let grads = net.backward(&tape, &g)?;
        let loss = |net: &Network<f64>, x: &Tensor<f64>, s: Option<&Tensor<f64>>| -> Result<(f64, Vec<LayerCache<f64>>)> {
            let (o, tape) = net.forward_train(x, s)?;
            let sig = tape.activation_signature().into_iter().cloned().collect();
            Ok((mse(&o, &y)?.0, sig))
        };
        for li in 0..net.params().len() {
            let (wn, bn) = (net.params()[li].weights.len(), net.params()[li].bias.len());
            for i in pick(wn, cfg.coords, &mut rng) {
                let orig = net.params()[li].weights.data()[i];
                tally.probe(grads.params[li].weights.data()[i], cfg.epsilon, |d| {
                    net.params_mut()[li].weights.data_mut()[i] = orig + d;
                    let r = loss(&net, &x, s.as_ref());
                    net.params_mut()[li].weights.data_mut()[i] = orig;
                    r
                })?;
            }
            for i in pick(bn, cfg.coords.div_ceil(2), &mut rng) {
                let orig = net.params()[li].bias[i];
                tally.probe(grads.params[li].bias[i], cfg.epsilon, |d| {
                    net.params_mut()[li].bias[i] = orig + d;
                    let r = loss(&net, &x, s.as_ref());
                    net.params_mut()[li].bias[i] = orig;
                    r
                })?;
            }
        }
        for i in pick(x.len(), cfg.coords, &mut rng) {
            tally.probe(grads.primary.data()[i], cfg.epsilon, |d| {
                let mut xp = x.clone();
                xp.data_mut()[i] += d;
                loss(&net, &xp, s.as_ref())
            })?;
        }
        if let (Some(s), Some(gs)) = (s.as_ref(), grads.secondary.as_ref()) {
            for i in pick(s.len(), cfg.coords, &mut rng) {
                tally.probe(gs.data()[i], cfg.epsilon, |d| {
                    let mut sp = s.clone();
                    sp.data_mut()[i] += d;
                    loss(&net, &x, Some(&sp))
                })?;
            }
        }
    }
    Ok(tally.report)
}

/// Every layer kind, then both networks at `cfg.network_size`.
pub fn run_suite(cfg: &GradcheckConfig) -> Result<Vec<CheckReport>> {
    if cfg.trials == 0 || cfg.coords == 0 || !(cfg.epsilon > 0.0) {
        return Err(Error::invalid("gradcheck needs trials, coordinates and a positive epsilon"));
    }
    let layers: [(Layer, Vec<usize>); 6] = [
        (Layer::Conv3x3 { in_channels: 2, out_channels: 3 }, vec![6, 6, 2]),
        (Layer::FullyConnected { inputs: 12, outputs: 5 }, vec![2, 2, 3]),
        (Layer::Relu, vec![4, 4, 3]),
        (Layer::MaxPool2x2, vec![6, 6, 2]),
        (Layer::Unpool2x2, vec![3, 3, 2]),
        (Layer::Reshape { height: 2, width: 3, channels: 2 }, vec![12]),
    ];
    let mut reports = Vec::new();
    for (layer, shape) in &layers {
        reports.push(check_layer(layer, shape, cfg)?);
    }
    reports.push(check_concat(cfg)?);
    let n = cfg.network_size;
    let s1 = build_stage1_with(Stage1Options {
        input_size: n,
        ..Stage1Options::default()
    })?;
    reports.push(check_network("stage1", &s1, cfg)?);
    reports.push(check_network("stage2", &build_stage2_at(n)?, cfg)?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(1e-12, 2e-12) < 1e-3);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut tally = Tally::new("bad", 1);
        // f(x) = x^2 at x = 1 has derivative 2, not 3
        tally.probe(3.0, 1e-3, |d| Ok(((1.0 + d) * (1.0 + d), ()))).unwrap();
        assert!(!tally.report.passed());
    }

    #[test]
    fn kinks_are_skipped() {
        let mut tally = Tally::new("kink", 1);
        tally.probe(1.0, 1e-3, |d: f64| Ok((d.max(0.0), d > 0.0))).unwrap();
        assert_eq!((tally.report.checked, tally.report.skipped), (0, 1));
    }

    #[test]
    fn layer_kinds_pass() {
        let cfg = GradcheckConfig { trials: 4, ..GradcheckConfig::default() };
        for (layer, shape) in [
            (Layer::Conv3x3 { in_channels: 2, out_channels: 3 }, vec![6, 6, 2]),
            (Layer::MaxPool2x2, vec![4, 4, 1]),
            (Layer::FullyConnected { inputs: 6, outputs: 2 }, vec![6]),
        ] {
            let r = check_layer(&layer, &shape, &cfg).unwrap();
            assert!(r.passed(), "{r}");
        }
        assert!(check_concat(&cfg).unwrap().passed());
    }
}
