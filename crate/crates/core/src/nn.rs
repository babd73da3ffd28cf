//! From-scratch multilayer perceptron: two affine layers with a hidden
//! activation and a softmax head, trained by mini-batch SGD on cross-entropy.
//!
//! Everything is `f64` and seeded, so training is bit-reproducible and the
//! finite-difference oracles in the tests can be held to tight tolerances.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 8] = b"TMPSTMLP";
const MODEL_VERSION: u32 = 1;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Activation> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// Index of the largest entry; ties break to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Training hyper-parameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; datasets smaller than this train full-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Training targets: class indices (hard) or probability vectors (soft,
/// the distillation form).
#[derive(Debug, Clone)]
pub enum Targets {
    Hard(Vec<usize>),
    Soft(Vec<Vec<f64>>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(v) => v.len(),
            Targets::Soft(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, out_dim: usize) -> Result<()> {
        match self {
            Targets::Hard(labels) => {
                for &label in labels {
                    if label >= out_dim {
                        return Err(Error::invalid(format!(
                            "label {label} out of range for {out_dim} classes"
                        )));
                    }
                }
            }
            Targets::Soft(rows) => {
                for row in rows {
                    if row.len() != out_dim {
                        return Err(Error::invalid(format!(
                            "soft target has {} entries, expected {out_dim}",
                            row.len()
                        )));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invalid("soft target has non-finite entries"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes target `i` as a probability vector into `buf`.
    fn write(&self, i: usize, buf: &mut [f64]) {
        match self {
            Targets::Hard(labels) => {
                buf.fill(0.0);
                buf[labels[i]] = 1.0;
            }
            Targets::Soft(rows) => buf.copy_from_slice(&rows[i]),
        }
    }
}

/// Three-layer fully connected network producing probability vectors.
///
/// Weights are row-major: `w1[j * hidden_dim + i]` connects input `j` to
/// hidden unit `i`, `w2[i * out_dim + k]` connects hidden `i` to class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    activation: Activation,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl MlpModel {
    /// Seeded initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero. The same seed always produces bit-identical weights.
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<MlpModel> {
        if in_dim == 0 || hidden_dim == 0 || out_dim == 0 {
            return Err(Error::invalid(format!(
                "all dimensions must be at least 1, got {in_dim}x{hidden_dim}x{out_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect()
        };
        let w1 = layer(in_dim, hidden_dim);
        let w2 = layer(hidden_dim, out_dim);
        Ok(MlpModel {
            in_dim,
            hidden_dim,
            out_dim,
            activation: Activation::Relu,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; out_dim],
        })
    }

    /// Builds a model from explicit parameters, validating shapes.
    pub fn from_parts(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        activation: Activation,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<MlpModel> {
        if in_dim == 0 || hidden_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("all dimensions must be at least 1"));
        }
        if w1.len() != in_dim * hidden_dim
            || b1.len() != hidden_dim
            || w2.len() != hidden_dim * out_dim
            || b2.len() != out_dim
        {
            return Err(Error::invalid("parameter shapes do not match dimensions"));
        }
        Ok(MlpModel {
            in_dim,
            hidden_dim,
            out_dim,
            activation,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::invalid(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.in_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input has non-finite entries"));
        }
        Ok(())
    }

    fn pre_activations(&self, x: &[f64], z1: &mut [f64]) {
        z1.copy_from_slice(&self.b1);
        for (j, &xj) in x.iter().enumerate() {
            let row = &self.w1[j * self.hidden_dim..(j + 1) * self.hidden_dim];
            for (i, &w) in row.iter().enumerate() {
                z1[i] += xj * w;
            }
        }
    }

    fn logits_from_hidden(&self, h: &[f64], z2: &mut [f64]) {
        z2.copy_from_slice(&self.b2);
        for (i, &hi) in h.iter().enumerate() {
            let row = &self.w2[i * self.out_dim..(i + 1) * self.out_dim];
            for (k, &w) in row.iter().enumerate() {
                z2[k] += hi * w;
            }
        }
    }

    /// Raw logits for an input; used internally and by the gradient oracle.
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z1 = vec![0.0; self.hidden_dim];
        self.pre_activations(x, &mut z1);
        let h: Vec<f64> = z1.iter().map(|&z| self.activation.apply(z)).collect();
        let mut z2 = vec![0.0; self.out_dim];
        self.logits_from_hidden(&h, &mut z2);
        z2
    }

    /// Forward pass to a probability vector (softmax output).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z2 = self.logits(x);
        Ok(softmax(&z2))
    }

    /// Class prediction; softmax argmax with lowest-index tie-break.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Mean cross-entropy of the model on a batch.
    fn batch_loss(&self, inputs: &[Vec<f64>], targets: &Targets) -> f64 {
        let mut target = vec![0.0; self.out_dim];
        let mut total = 0.0;
        for (i, x) in inputs.iter().enumerate() {
            targets.write(i, &mut target);
            let z2 = self.logits(x);
            let log_p = log_softmax(&z2);
            total -= target.iter().zip(&log_p).map(|(t, lp)| t * lp).sum::<f64>();
        }
        total / inputs.len() as f64
    }

    /// Mini-batch SGD on cross-entropy. Returns the per-epoch mean training
    /// loss. Identical seed, data, and config reproduce the exact weights.
    pub fn train(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &Targets,
        config: &TrainConfig,
    ) -> Result<Vec<f64>> {
        config.validate()?;
        if inputs.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if targets.len() != inputs.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        targets.validate(self.out_dim)?;
        for x in inputs {
            self.check_input(x)?;
        }

        let n = inputs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut grads = Gradients::zeros(self);
        let mut scratch = Scratch::zeros(self);
        let mut epoch_losses = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            shuffle(&mut order, &mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                grads.zero();
                for &idx in batch {
                    epoch_loss +=
                        self.accumulate_sample(&inputs[idx], targets, idx, &mut grads, &mut scratch);
                }
                let scale = config.learning_rate / batch.len() as f64;
                self.apply_step(&grads, scale);
            }
            let mean_loss = epoch_loss / n as f64;
            if !mean_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_losses.push(mean_loss);
        }
        Ok(epoch_losses)
    }

    /// Forward + backward for one sample; adds gradients into `grads` and
    /// returns the sample loss.
    fn accumulate_sample(
        &self,
        x: &[f64],
        targets: &Targets,
        idx: usize,
        grads: &mut Gradients,
        s: &mut Scratch,
    ) -> f64 {
        targets.write(idx, &mut s.target);
        self.pre_activations(x, &mut s.z1);
        for (i, &z) in s.z1.iter().enumerate() {
            s.h[i] = self.activation.apply(z);
        }
        self.logits_from_hidden(&s.h, &mut s.z2);
        let log_p = log_softmax(&s.z2);
        let loss = -s
            .target
            .iter()
            .zip(&log_p)
            .map(|(t, lp)| t * lp)
            .sum::<f64>();

        // dL/dlogits = softmax - target
        for (k, lp) in log_p.iter().enumerate() {
            s.dz2[k] = lp.exp() - s.target[k];
        }
        for (k, &d) in s.dz2.iter().enumerate() {
            grads.b2[k] += d;
        }
        for (i, &hi) in s.h.iter().enumerate() {
            let row = &mut grads.w2[i * self.out_dim..(i + 1) * self.out_dim];
            for (k, &d) in s.dz2.iter().enumerate() {
                row[k] += hi * d;
            }
        }
        for i in 0..self.hidden_dim {
            let row = &self.w2[i * self.out_dim..(i + 1) * self.out_dim];
            let dh: f64 = row.iter().zip(&s.dz2).map(|(w, d)| w * d).sum();
            s.dz1[i] = dh * self.activation.derivative(s.z1[i]);
        }
        for (i, &d) in s.dz1.iter().enumerate() {
            grads.b1[i] += d;
        }
        for (j, &xj) in x.iter().enumerate() {
            let row = &mut grads.w1[j * self.hidden_dim..(j + 1) * self.hidden_dim];
            for (i, &d) in s.dz1.iter().enumerate() {
                row[i] += xj * d;
            }
        }
        loss
    }

    fn apply_step(&mut self, grads: &Gradients, scale: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grads.w1) {
            *w -= scale * g;
        }
        for (b, g) in self.b1.iter_mut().zip(&grads.b1) {
            *b -= scale * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grads.w2) {
            *w -= scale * g;
        }
        for (b, g) in self.b2.iter_mut().zip(&grads.b2) {
            *b -= scale * g;
        }
    }

    /// Gradient of the cross-entropy loss with respect to the input vector,
    /// for a given target distribution.
    pub fn input_gradient(&self, x: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if target.len() != self.out_dim {
            return Err(Error::invalid(format!(
                "target has {} entries, expected {}",
                target.len(),
                self.out_dim
            )));
        }
        let mut z1 = vec![0.0; self.hidden_dim];
        self.pre_activations(x, &mut z1);
        let h: Vec<f64> = z1.iter().map(|&z| self.activation.apply(z)).collect();
        let mut z2 = vec![0.0; self.out_dim];
        self.logits_from_hidden(&h, &mut z2);
        let log_p = log_softmax(&z2);
        let dz2: Vec<f64> = log_p
            .iter()
            .zip(target)
            .map(|(lp, t)| lp.exp() - t)
            .collect();
        let dz1: Vec<f64> = (0..self.hidden_dim)
            .map(|i| {
                let row = &self.w2[i * self.out_dim..(i + 1) * self.out_dim];
                let dh: f64 = row.iter().zip(&dz2).map(|(w, d)| w * d).sum();
                dh * self.activation.derivative(z1[i])
            })
            .collect();
        Ok((0..self.in_dim)
            .map(|j| {
                let row = &self.w1[j * self.hidden_dim..(j + 1) * self.hidden_dim];
                row.iter().zip(&dz1).map(|(w, d)| w * d).sum()
            })
            .collect())
    }

    /// Compares analytic batch gradients against central finite differences
    /// and returns the maximum relative error over all parameters.
    pub fn gradient_check(
        &self,
        inputs: &[Vec<f64>],
        targets: &Targets,
        epsilon: f64,
    ) -> Result<f64> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if inputs.is_empty() || inputs.len() > 8 {
            return Err(Error::invalid(
                "gradient check batch must have between 1 and 8 samples",
            ));
        }
        if targets.len() != inputs.len() {
            return Err(Error::invalid("inputs and targets differ in length"));
        }
        targets.validate(self.out_dim)?;

        let mut grads = Gradients::zeros(self);
        let mut scratch = Scratch::zeros(self);
        for (i, x) in inputs.iter().enumerate() {
            self.check_input(x)?;
            self.accumulate_sample(x, targets, i, &mut grads, &mut scratch);
        }
        let scale = 1.0 / inputs.len() as f64;
        let analytic: Vec<f64> = grads
            .w1
            .iter()
            .chain(&grads.b1)
            .chain(&grads.w2)
            .chain(&grads.b2)
            .map(|g| g * scale)
            .collect();

        let mut probe = self.clone();
        let n_params = analytic.len();
        let mut max_err = 0.0f64;
        for p in 0..n_params {
            let original = *probe.param(p);
            *probe.param(p) = original + epsilon;
            let plus = probe.batch_loss(inputs, targets);
            *probe.param(p) = original - epsilon;
            let minus = probe.batch_loss(inputs, targets);
            *probe.param(p) = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let denom = analytic[p].abs().max(numeric.abs()).max(1e-8);
            max_err = max_err.max((analytic[p] - numeric).abs() / denom);
        }
        Ok(max_err)
    }

    /// Flat parameter access in (w1, b1, w2, b2) order.
    fn param(&mut self, p: usize) -> &mut f64 {
        let n1 = self.w1.len();
        let n2 = n1 + self.b1.len();
        let n3 = n2 + self.w2.len();
        if p < n1 {
            &mut self.w1[p]
        } else if p < n2 {
            &mut self.b1[p - n1]
        } else if p < n3 {
            &mut self.w2[p - n2]
        } else {
            &mut self.b2[p - n3]
        }
    }

    /// Writes the versioned flat format: magic, version, dims, activation,
    /// then w1, b1, w2, b2 as little-endian 64-bit floats.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        for dim in [self.in_dim, self.hidden_dim, self.out_dim] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        w.write_all(&[self.activation.tag()])?;
        for block in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for v in block.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<MlpModel> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let mut buf8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut buf8)?;
            *d = u64::from_le_bytes(buf8) as usize;
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])?;
        let [in_dim, hidden_dim, out_dim] = dims;
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf8)?;
                out.push(f64::from_le_bytes(buf8));
            }
            Ok(out)
        };
        let w1 = read_block(in_dim * hidden_dim)?;
        let b1 = read_block(hidden_dim)?;
        let w2 = read_block(hidden_dim * out_dim)?;
        let b2 = read_block(out_dim)?;
        MlpModel::from_parts(in_dim, hidden_dim, out_dim, activation, w1, b1, w2, b2)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
        let mut file = std::fs::File::open(path)?;
        MlpModel::read_from(&mut file)
    }
}

struct Gradients {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Gradients {
    fn zeros(m: &MlpModel) -> Gradients {
        Gradients {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    fn zero(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }
}

struct Scratch {
    z1: Vec<f64>,
    h: Vec<f64>,
    z2: Vec<f64>,
    dz2: Vec<f64>,
    dz1: Vec<f64>,
    target: Vec<f64>,
}

impl Scratch {
    fn zeros(m: &MlpModel) -> Scratch {
        Scratch {
            z1: vec![0.0; m.hidden_dim],
            h: vec![0.0; m.hidden_dim],
            z2: vec![0.0; m.out_dim],
            dz2: vec![0.0; m.out_dim],
            dz1: vec![0.0; m.hidden_dim],
            target: vec![0.0; m.out_dim],
        }
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).iter().map(|lp| lp.exp()).collect()
}

/// Fisher–Yates with our seeded RNG; used instead of `SliceRandom::shuffle`
/// so the permutation stream is pinned by this crate, not the rand version.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_shapes() {
        let m = MlpModel::init(4, 90, 2, 7).unwrap();
        assert_eq!(m.w1.len(), 4 * 90);
        assert_eq!(m.b1.len(), 90);
        assert_eq!(m.w2.len(), 90 * 2);
        assert_eq!(m.b2.len(), 2);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpModel::init(5, 9, 3, 42).unwrap();
        let b = MlpModel::init(5, 9, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::init(5, 9, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_accepts_arrhythmia_dimensionality() {
        let m = MlpModel::init(279, 90, 16, 1).unwrap();
        assert_eq!((m.in_dim(), m.hidden_dim(), m.out_dim()), (279, 90, 16));
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(MlpModel::init(0, 5, 2, 0).is_err());
        assert!(MlpModel::init(5, 0, 2, 0).is_err());
        assert!(MlpModel::init(5, 5, 0, 0).is_err());
    }

    #[test]
    fn zero_model_outputs_uniform() {
        let m = MlpModel::from_parts(
            3,
            4,
            5,
            Activation::Relu,
            vec![0.0; 12],
            vec![0.0; 4],
            vec![0.0; 20],
            vec![0.0; 5],
        )
        .unwrap();
        let p = m.forward(&[1.0, -2.0, 3.0]).unwrap();
        for v in &p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 1 feature, 1 hidden, 2 classes:
        //   z1 = 0.5*2 + 0.25 = 1.25, relu -> 1.25
        //   z2 = (1.25*0.7 + 0.1, 1.25*(-0.3) - 0.2) = (0.975, -0.575)
        //   p0 = e^0.975 / (e^0.975 + e^-0.575)
        let m = MlpModel::from_parts(
            1,
            1,
            2,
            Activation::Relu,
            vec![0.5],
            vec![0.25],
            vec![0.7, -0.3],
            vec![0.1, -0.2],
        )
        .unwrap();
        let p = m.forward(&[2.0]).unwrap();
        let e0 = 0.975f64.exp();
        let e1 = (-0.575f64).exp();
        assert!((p[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((p[1] - e1 / (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = MlpModel::init(3, 4, 2, 0).unwrap();
        assert!(m.forward(&[1.0, 2.0]).is_err());
        assert!(m.forward(&[1.0, f64::NAN, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_output_is_a_distribution(
            seed in 0u64..1000,
            in_dim in 1usize..6,
            out_dim in 2usize..6,
            xs in proptest::collection::vec(-50.0f64..50.0, 6),
        ) {
            let m = MlpModel::init(in_dim, 5, out_dim, seed).unwrap();
            let x = &xs[..in_dim];
            let p = m.forward(x).unwrap();
            prop_assert_eq!(p.len(), out_dim);
            for &v in &p {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    fn interior_batch(
        model: &MlpModel,
        seed: u64,
        batch: usize,
    ) -> (Vec<Vec<f64>>, Targets) {
        // Finite differences are only meaningful away from the relu kink,
        // so resample until all pre-activations are comfortably nonzero.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        'outer: loop {
            let inputs: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..model.in_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            for x in &inputs {
                let mut z1 = vec![0.0; model.hidden_dim()];
                model.pre_activations(x, &mut z1);
                if z1.iter().any(|z| z.abs() < 1e-3) {
                    continue 'outer;
                }
            }
            let labels = (0..batch).map(|i| i % model.out_dim()).collect();
            return (inputs, Targets::Hard(labels));
        }
    }

    #[test]
    fn gradient_check_small_model() {
        let m = MlpModel::init(3, 5, 2, 11).unwrap();
        let (inputs, targets) = interior_batch(&m, 5, 4);
        let err = m.gradient_check(&inputs, &targets, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_identity_activation() {
        let m = MlpModel::from_parts(
            2,
            3,
            2,
            Activation::Identity,
            vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4],
            vec![0.05, -0.03, 0.2],
            vec![0.6, -0.1, 0.2, 0.4, -0.5, 0.3],
            vec![0.01, -0.02],
        )
        .unwrap();
        let inputs = vec![vec![0.7, -1.1], vec![0.2, 0.9]];
        let targets = Targets::Soft(vec![vec![0.3, 0.7], vec![0.9, 0.1]]);
        let err = m.gradient_check(&inputs, &targets, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_zero_point_bias_symmetry() {
        // All-zero weights with uniform targets: every gradient is zero and
        // so is every finite difference.
        let m = MlpModel::from_parts(
            2,
            3,
            2,
            Activation::Relu,
            vec![0.0; 6],
            vec![0.0; 3],
            vec![0.0; 6],
            vec![0.0; 2],
        )
        .unwrap();
        let inputs = vec![vec![1.0, -1.0]];
        let targets = Targets::Soft(vec![vec![0.5, 0.5]]);
        let err = m.gradient_check(&inputs, &targets, 1e-5).unwrap();
        assert!(err < 1e-9, "symmetric construction should have zero error, got {err}");
    }

    #[test]
    fn gradient_check_rejects_bad_epsilon() {
        let m = MlpModel::init(2, 3, 2, 0).unwrap();
        let inputs = vec![vec![1.0, 2.0]];
        let targets = Targets::Hard(vec![0]);
        assert!(m.gradient_check(&inputs, &targets, 0.0).is_err());
        assert!(m.gradient_check(&inputs, &targets, -1e-5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradients_match_finite_differences(seed in 0u64..500) {
            let m = MlpModel::init(3, 4, 3, seed).unwrap();
            let (inputs, targets) = interior_batch(&m, seed.wrapping_add(999), 3);
            let err = m.gradient_check(&inputs, &targets, 1e-5).unwrap();
            prop_assert!(err < 1e-4, "seed {} error {}", seed, err);
        }
    }

    fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            inputs.push(vec![
                center + rng.gen_range(-0.5..0.5),
                center + rng.gen_range(-0.5..0.5),
            ]);
            labels.push(class);
        }
        (inputs, labels)
    }

    #[test]
    fn training_separates_gaussian_blobs() {
        let (inputs, labels) = blobs(100, 17);
        let mut m = MlpModel::init(2, 8, 2, 3).unwrap();
        m.train(&inputs, &Targets::Hard(labels.clone()), &TrainConfig::default())
            .unwrap();
        let correct = inputs
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| m.predict_class(x).unwrap() == y)
            .count();
        let accuracy = correct as f64 / inputs.len() as f64;
        assert!(accuracy >= 0.95, "training accuracy {accuracy}");
    }

    #[test]
    fn training_memorizes_single_sample() {
        let inputs = vec![vec![0.3, -0.7, 1.1]; 4];
        let labels = vec![1usize; 4];
        let mut m = MlpModel::init(3, 6, 3, 5).unwrap();
        m.train(&inputs, &Targets::Hard(labels), &TrainConfig::default())
            .unwrap();
        assert_eq!(m.predict_class(&[0.3, -0.7, 1.1]).unwrap(), 1);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (inputs, labels) = blobs(30, 23);
        let config = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = MlpModel::init(2, 6, 2, 1).unwrap();
        let la = a.train(&inputs, &Targets::Hard(labels.clone()), &config).unwrap();
        let mut b = MlpModel::init(2, 6, 2, 1).unwrap();
        let lb = b.train(&inputs, &Targets::Hard(labels), &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            la.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            lb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn training_rejects_empty_dataset() {
        let mut m = MlpModel::init(2, 3, 2, 0).unwrap();
        let err = m
            .train(&[], &Targets::Hard(vec![]), &TrainConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn training_divergence_names_epoch() {
        let (inputs, labels) = blobs(20, 2);
        let mut m = MlpModel::init(2, 6, 2, 1).unwrap();
        let config = TrainConfig {
            learning_rate: 1e12,
            epochs: 12,
            ..TrainConfig::default()
        };
        match m.train(&inputs, &Targets::Hard(labels), &config) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn tiny_sgd_step_does_not_increase_batch_loss(seed in 0u64..200) {
            let mut m = MlpModel::init(3, 5, 2, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let inputs: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect();
            let labels: Vec<usize> = (0..6).map(|i| i % 2).collect();
            let targets = Targets::Hard(labels);
            let before = m.batch_loss(&inputs, &targets);
            let config = TrainConfig {
                learning_rate: 1e-4,
                epochs: 1,
                batch_size: inputs.len(),
                seed: 0,
            };
            m.train(&inputs, &targets, &config).unwrap();
            let after = m.batch_loss(&inputs, &targets);
            prop_assert!(after <= before + 1e-12, "{} -> {}", before, after);
        }
    }

    #[test]
    fn model_file_round_trip_is_byte_exact() {
        let m = MlpModel::init(4, 7, 3, 99).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let restored = MlpModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(m, restored);
        let mut bytes2 = Vec::new();
        restored.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn model_file_rejects_garbage() {
        let mut junk: &[u8] = b"NOTAMODELFILE";
        assert!(matches!(
            MlpModel::read_from(&mut junk),
            Err(Error::Format(_)) | Err(Error::Io(_))
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
