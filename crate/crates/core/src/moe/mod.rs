//! The multi-task mixture-of-experts re-ranker.
//!
//! Data flow for one feature vector `v`:
//!
//! ```text
//! x      = relu(B2 relu(B1 v))                    shared bottom
//! e_i    = relu(E_i2 relu(E_i1 x))                expert i, i = 1..E
//! g_k    = softmax over kept experts of (W_k x)   gate of task k
//! z_k    = T_k (sum_i g_k[i] e_i)                 tower k, scalar logit
//! p_k    = sigmoid(z_k)
//! ```
//!
//! Task `k` is tied to the `k`-th metric of the model's metric order. During
//! training a random subset of experts is dropped and each gate renormalizes
//! over the survivors; inference keeps every expert.

mod backward;
mod io;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::TrainItem;
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use optim::{optimizer_step, AdamState, Schedule, BETA1, BETA2, EPSILON};

/// Probability clamp used by [`bce_loss`].
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub bottom_hidden: [usize; 2],
    pub expert_hidden: [usize; 2],
    pub num_tasks: usize,
    pub num_experts: usize,
    pub expert_dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Default sizes: bottom and experts 64-64, twice as many experts as
    /// tasks, half of them dropped during training.
    pub fn new(input_dim: usize, num_tasks: usize) -> Self {
        ModelConfig {
            input_dim,
            bottom_hidden: [64, 64],
            expert_hidden: [64, 64],
            num_tasks,
            num_experts: 2 * num_tasks,
            expert_dropout: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.input_dim,
            self.bottom_hidden[0],
            self.bottom_hidden[1],
            self.expert_hidden[0],
            self.expert_hidden[1],
            self.num_tasks,
            self.num_experts,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("model sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.expert_dropout) {
            return Err(Error::InvalidArgument(format!(
                "expert dropout must lie in [0, 1), got {}",
                self.expert_dropout
            )));
        }
        Ok(())
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }
}

/// Fully connected layer `y = W x + b`, `W` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weight.mul_vec_into(x, &mut y);
        y
    }

    fn forward_relu(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.forward(x);
        relu_in_place(&mut y);
        y
    }
}

/// Every learnable tensor. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub bottom: [Dense; 2],
    pub experts: Vec<[Dense; 2]>,
    /// `gates[k]` is the `E x bottom_out` matrix of task `k`.
    pub gates: Vec<Matrix>,
    /// `towers[k]` maps the mixed expert output to one logit.
    pub towers: Vec<Dense>,
}

/// Name and shape of one tensor in [`Params::tensors`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let [b1, b2] = config.bottom_hidden;
        let [e1, e2] = config.expert_hidden;
        Params {
            bottom: [Dense::zeros(config.input_dim, b1), Dense::zeros(b1, b2)],
            experts: (0..config.num_experts)
                .map(|_| [Dense::zeros(b2, e1), Dense::zeros(e1, e2)])
                .collect(),
            gates: (0..config.num_tasks).map(|_| Matrix::zeros(config.num_experts, b2)).collect(),
            towers: (0..config.num_tasks).map(|_| Dense::zeros(e2, 1)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|t| t.fill(0.0));
        z
    }

    /// Tensor layout in canonical order.
    pub fn specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        let mut dense = |prefix: String, d: &Dense| {
            out.push(TensorSpec {
                name: format!("{prefix}.weight"),
                shape: vec![d.weight.rows, d.weight.cols],
            });
            out.push(TensorSpec {
                name: format!("{prefix}.bias"),
                shape: vec![d.bias.len()],
            });
        };
        for (l, d) in self.bottom.iter().enumerate() {
            dense(format!("bottom.{l}"), d);
        }
        for (i, ex) in self.experts.iter().enumerate() {
            for (l, d) in ex.iter().enumerate() {
                dense(format!("expert.{i}.{l}"), d);
            }
        }
        for (k, t) in self.towers.iter().enumerate() {
            dense(format!("tower.{k}"), t);
        }
        for (k, g) in self.gates.iter().enumerate() {
            out.push(TensorSpec {
                name: format!("gate.{k}.weight"),
                shape: vec![g.rows, g.cols],
            });
        }
        out
    }

    /// Flat views of every tensor, in the same order as [`Params::specs`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for d in self.bottom.iter().chain(self.experts.iter().flatten()).chain(&self.towers) {
            out.push(&d.weight.data);
            out.push(&d.bias);
        }
        out.extend(self.gates.iter().map(|g| g.data.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for d in self
            .bottom
            .iter_mut()
            .chain(self.experts.iter_mut().flatten())
            .chain(self.towers.iter_mut())
        {
            out.push(&mut d.weight.data);
            out.push(&mut d.bias);
        }
        out.extend(self.gates.iter_mut().map(|g| g.data.as_mut_slice()));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for t in self.tensors_mut() {
            f(t);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankerModel {
    pub config: ModelConfig,
    /// Metric order; task `k` predicts metric `metrics[k]`.
    pub metrics: Vec<String>,
    /// Decoding methods the model was trained on. Inference may only use a
    /// subset of these.
    pub train_methods: Vec<String>,
    pub params: Params,
}

/// Per-task logits and gate weights of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    /// `gates[k][i]`: weight of expert `i` for task `k`.
    pub gates: Vec<Vec<f64>>,
}

impl Forward {
    pub fn probs(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

pub fn init_model(config: ModelConfig, metrics: Vec<String>, train_methods: Vec<String>) -> Result<RerankerModel> {
    config.validate()?;
    if metrics.len() != config.num_tasks {
        return Err(Error::InvalidArgument(format!(
            "{} metrics given for {} tasks",
            metrics.len(),
            config.num_tasks
        )));
    }
    let mut params = Params::zeros(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let specs = params.specs();
    for (spec, tensor) in specs.iter().zip(params.tensors_mut()) {
        if spec.shape.len() == 2 {
            let (fan_out, fan_in) = (spec.shape[0], spec.shape[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in tensor.iter_mut() {
                *w = rng.random_range(-a..a);
            }
        }
    }
    Ok(RerankerModel {
        config,
        metrics,
        train_methods,
        params,
    })
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub(crate) h1: Vec<f64>,
    pub(crate) x: Vec<f64>,
    /// Hidden and output activation of each kept expert.
    pub(crate) experts: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    pub(crate) mixed: Vec<Vec<f64>>,
    pub(crate) out: Forward,
}

impl RerankerModel {
    pub fn num_tasks(&self) -> usize {
        self.config.num_tasks
    }

    pub fn num_experts(&self) -> usize {
        self.config.num_experts
    }

    pub fn forward(&self, v: &[f64], mask: Option<&[bool]>) -> Result<Forward> {
        Ok(self.trace(v, mask)?.out)
    }

    pub fn predict_probs(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(v, None)?.probs())
    }

    /// Fails unless the model's metric order is exactly `expected`.
    pub fn check_metrics<S: AsRef<str>>(&self, expected: &[S]) -> Result<()> {
        let expected: Vec<String> = expected.iter().map(|s| s.as_ref().to_string()).collect();
        if expected != self.metrics {
            return Err(Error::MetricOrderMismatch {
                expected,
                found: self.metrics.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, v: &[f64], mask: Option<&[bool]>) -> Result<Trace> {
        let cfg = &self.config;
        if v.len() != cfg.input_dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.input_dim,
                found: v.len(),
            });
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        if let Some(m) = mask {
            if m.len() != cfg.num_experts {
                return Err(Error::DimensionMismatch {
                    expected: cfg.num_experts,
                    found: m.len(),
                });
            }
            if !m.iter().any(|&k| k) {
                return Err(Error::AllExpertsMasked);
            }
        }
        let p = &self.params;
        let h1 = p.bottom[0].forward_relu(v);
        let x = p.bottom[1].forward_relu(&h1);
        let experts: Vec<Option<(Vec<f64>, Vec<f64>)>> = p
            .experts
            .iter()
            .enumerate()
            .map(|(i, [l1, l2])| {
                keep(i).then(|| {
                    let h = l1.forward_relu(&x);
                    let o = l2.forward_relu(&h);
                    (h, o)
                })
            })
            .collect();
        let out_dim = cfg.expert_hidden[1];
        let mut gates = Vec::with_capacity(cfg.num_tasks);
        let mut mixed = Vec::with_capacity(cfg.num_tasks);
        let mut logits = Vec::with_capacity(cfg.num_tasks);
        for (gate, tower) in p.gates.iter().zip(&p.towers) {
            let scores: Vec<Option<f64>> = (0..cfg.num_experts)
                .map(|i| keep(i).then(|| dot(gate.row(i), &x)))
                .collect();
            let g = masked_softmax(&scores);
            let mut m = vec![0.0; out_dim];
            for (gi, e) in g.iter().zip(&experts) {
                if let Some((_, o)) = e {
                    for (mj, oj) in m.iter_mut().zip(o) {
                        *mj += gi * oj;
                    }
                }
            }
            logits.push(tower.forward(&m)[0]);
            gates.push(g);
            mixed.push(m);
        }
        Ok(Trace {
            h1,
            x,
            experts,
            mixed,
            out: Forward { logits, gates },
        })
    }
}

/// Softmax over the `Some` entries; `None` entries get exactly zero.
fn masked_softmax(scores: &[Option<f64>]) -> Vec<f64> {
    let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce_loss(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    -label * p.ln() - (1.0 - label) * (1.0 - p).ln()
}

/// Uniform average of the per-metric losses.
pub fn multi_task_loss(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Drops each expert independently with probability `p`, redrawing the whole
/// mask whenever nothing survives.
pub fn sample_expert_mask<R: Rng + ?Sized>(num_experts: usize, p: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    if num_experts == 0 {
        return Err(Error::InvalidArgument("no experts".into()));
    }
    loop {
        let mask: Vec<bool> = (0..num_experts).map(|_| !rng.random_bool(p)).collect();
        if mask.iter().any(|&k| k) {
            return Ok(mask);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> RerankerModel {
        let mut cfg = ModelConfig::new(4, 2);
        cfg.bottom_hidden = [8, 8];
        cfg.expert_hidden = [5, 3];
        cfg.seed = seed;
        init_model(cfg, vec!["a".into(), "b".into()], vec!["beam".into()]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = small_model(7);
        let b = small_model(7);
        let bits = |m: &RerankerModel| {
            m.params.tensors().iter().flat_map(|t| t.iter().map(|x| x.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&small_model(8)));
        assert_eq!(a.params.experts.len(), 4);
        assert_eq!((a.params.bottom[0].in_dim(), a.params.bottom[0].out_dim()), (4, 8));
        assert_eq!((a.params.bottom[1].in_dim(), a.params.bottom[1].out_dim()), (8, 8));
        assert!(a.params.bottom[0].bias.iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.params.bottom[0].weight.data.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::new(4, 2);
        cfg.expert_dropout = 1.0;
        assert!(init_model(cfg, vec!["a".into(), "b".into()], vec![]).is_err());
        let mut cfg = ModelConfig::new(4, 2);
        cfg.num_experts = 0;
        assert!(init_model(cfg, vec!["a".into(), "b".into()], vec![]).is_err());
        assert!(init_model(ModelConfig::new(4, 2), vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn single_expert_gate_is_one() {
        let mut cfg = ModelConfig::new(3, 2);
        cfg.num_experts = 1;
        cfg.bottom_hidden = [4, 4];
        cfg.expert_hidden = [4, 4];
        let m = init_model(cfg, vec!["a".into(), "b".into()], vec![]).unwrap();
        let f = m.forward(&[0.3, -0.2, 0.9], None).unwrap();
        assert_eq!(f.gates, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn zero_gate_weights_are_uniform() {
        let mut m = small_model(1);
        for g in &mut m.params.gates {
            g.data.fill(0.0);
        }
        let f = m.forward(&[0.5, 0.1, -0.4, 2.0], None).unwrap();
        for row in &f.gates {
            assert_eq!(row, &vec![0.25; 4]);
        }
    }

    #[test]
    fn hand_built_identity_network() {
        let cfg = ModelConfig {
            input_dim: 1,
            bottom_hidden: [1, 1],
            expert_hidden: [1, 1],
            num_tasks: 1,
            num_experts: 1,
            expert_dropout: 0.0,
            seed: 0,
        };
        let mut m = init_model(cfg, vec!["a".into()], vec![]).unwrap();
        m.params.for_each_mut(|t| t.fill(0.0));
        m.params.bottom[0].weight.data[0] = 1.0;
        m.params.bottom[1].weight.data[0] = 1.0;
        m.params.experts[0][0].weight.data[0] = 1.0;
        m.params.experts[0][1].weight.data[0] = 1.0;
        m.params.towers[0].weight.data[0] = 1.0;
        let f = m.forward(&[1.0], None).unwrap();
        assert_eq!(f.logits, vec![1.0]);
        assert!((m.predict_probs(&[1.0]).unwrap()[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn masked_experts_get_zero_weight() {
        let m = small_model(3);
        let mask = [true, false, true, false];
        let f = m.forward(&[0.5, 0.1, -0.4, 2.0], Some(&mask)).unwrap();
        for row in &f.gates {
            assert_eq!(row[1], 0.0);
            assert_eq!(row[3], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            m.forward(&[0.0; 4], Some(&[false; 4])),
            Err(Error::AllExpertsMasked)
        ));
        assert!(matches!(m.forward(&[0.0; 3], None), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sigmoid_and_loss_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.73106).abs() < 1e-5);
        assert!((sigmoid(-1.0) - 0.26894).abs() < 1e-5);
        assert!((sigmoid(-1.0) - (1.0 - sigmoid(1.0))).abs() < 1e-15);
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0, 1.0) < 1e-6);
        assert!((bce_loss(0.9, 0.0) - 2.302585).abs() < 1e-6);
        assert_eq!(multi_task_loss(&[0.7]), 0.7);
        assert!((multi_task_loss(&[0.2, 0.4]) - 0.3).abs() < 1e-15);
        assert_eq!(multi_task_loss(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn mask_sampler_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_expert_mask(6, 0.0, &mut rng).unwrap(), vec![true; 6]);
        for _ in 0..100 {
            assert_eq!(sample_expert_mask(1, 0.9, &mut rng).unwrap(), vec![true]);
        }
        assert!(sample_expert_mask(3, 1.0, &mut rng).is_err());
        let trials = 100_000;
        let kept: usize = (0..trials)
            .map(|_| sample_expert_mask(10, 0.5, &mut rng).unwrap().iter().filter(|&&k| k).count())
            .sum();
        let frac = kept as f64 / (10 * trials) as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }
}
