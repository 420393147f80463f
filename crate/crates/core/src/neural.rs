//! Fully connected Q-network with hand-written backpropagation.
//!
//! Hidden layers use ReLU, the output layer is linear. Weights are stored
//! row-major as `out × in`. The training loss is the masked squared error
//! `(1/B) Σ (Q(s_i, a_i) − y_i)²`, where only the chosen action's output of
//! each sample contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::NeuralError;

/// `c = a · b` for row-major `a: m×k` and `b: k×n`, or with `b` read as the
/// transpose of an `n×k` matrix when `b_transposed` is set.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_transposed: bool, b: &[f64], b_transposed: bool, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe the bounds-checked slices above; `c` does not
    // alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Gradients (or optimizer moments) shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    fn same_shape(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

impl Mlp {
    /// He-uniform initialisation (`±sqrt(6 / fan_in)`), zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in net.weights.iter_mut().enumerate() {
            let limit = (6.0 / sizes[l] as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NeuralError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NeuralError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn from_parameters(
        sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(sizes)?;
        let grads = Gradients { weights, biases };
        if !grads.same_shape(&net) || grads.biases.len() != net.biases.len() {
            return Err(NeuralError::Shape("parameters do not match layer sizes".into()));
        }
        if grads.values().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite("parameter"));
        }
        net.weights = grads.weights;
        net.biases = grads.biases;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Mutable view of every parameter in checkpoint order.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().count()
    }

    /// Q-values for one observation.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.forward_batch(input, 1)
    }

    /// Q-values for `batch` row-major observations; returns `batch × n_out`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>, NeuralError> {
        self.check_input(inputs, batch)?;
        Ok(self.activations(inputs, batch).pop().unwrap())
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<(), NeuralError> {
        if inputs.len() != batch * self.input_dim() {
            return Err(NeuralError::Shape(format!(
                "expected {} inputs of dimension {}, got {} values",
                batch,
                self.input_dim(),
                inputs.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite("input"));
        }
        Ok(())
    }

    /// Layer outputs, input first; hidden entries are post-ReLU.
    fn activations(&self, inputs: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(inputs.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = vec![0.0; batch * n_out];
            gemm(batch, n_in, n_out, &acts[l], false, &self.weights[l], true, &mut z);
            let hidden = l + 1 < layers;
            for row in z.chunks_mut(n_out) {
                for (v, b) in row.iter_mut().zip(&self.biases[l]) {
                    *v += b;
                    if hidden && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Masked squared-error loss over a batch.
    pub fn loss(&self, inputs: &[f64], actions: &[usize], targets: &[f64]) -> Result<f64, NeuralError> {
        let batch = self.check_batch(inputs, actions, targets)?;
        let q = self.forward_batch(inputs, batch)?;
        let n_out = self.output_dim();
        Ok(actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&a, &y))| (q[i * n_out + a] - y).powi(2))
            .sum::<f64>()
            / batch as f64)
    }

    fn check_batch(&self, inputs: &[f64], actions: &[usize], targets: &[f64]) -> Result<usize, NeuralError> {
        let batch = actions.len();
        if targets.len() != batch || batch == 0 {
            return Err(NeuralError::Shape(format!(
                "{} actions but {} targets",
                batch,
                targets.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.output_dim()) {
            return Err(NeuralError::Shape(format!(
                "action {a} outside {} outputs",
                self.output_dim()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(NeuralError::NonFinite("target"));
        }
        self.check_input(inputs, batch)?;
        Ok(batch)
    }

    /// Gradients of the masked squared-error loss and the loss itself.
    pub fn backward(
        &self,
        inputs: &[f64],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(Gradients, f64), NeuralError> {
        let batch = self.check_batch(inputs, actions, targets)?;
        let acts = self.activations(inputs, batch);
        let layers = self.weights.len();
        let n_out = self.output_dim();

        let q = &acts[layers];
        let mut delta = vec![0.0; batch * n_out];
        let mut loss = 0.0;
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = q[i * n_out + a] - y;
            loss += err * err;
            delta[i * n_out + a] = 2.0 * err / batch as f64;
        }
        loss /= batch as f64;

        let mut grads = Gradients::zeros_like(self);
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            gemm(n_out, batch, n_in, &delta, true, &acts[l], false, &mut grads.weights[l]);
            for row in delta.chunks(n_out) {
                for (g, d) in grads.biases[l].iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; batch * n_in];
                gemm(batch, n_out, n_in, &delta, false, &self.weights[l], false, &mut prev);
                for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((grads, loss))
    }

    /// Overwrite this network's parameters with `source`'s.
    pub fn copy_from(&mut self, source: &Mlp) -> Result<(), NeuralError> {
        if self.sizes != source.sizes {
            return Err(NeuralError::Architecture(source.sizes.clone(), self.sizes.clone()));
        }
        for (dst, src) in self.weights.iter_mut().zip(&source.weights) {
            dst.copy_from_slice(src);
        }
        for (dst, src) in self.biases.iter_mut().zip(&source.biases) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Copy `source`'s parameters into `target`; both must share an architecture.
pub fn copy_parameters(source: &Mlp, target: &mut Mlp) -> Result<(), NeuralError> {
    target.copy_from(source)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub method: Method,
    pub step_size: f64,
    pub m: Gradients,
    pub v: Gradients,
    pub timestep: u64,
}

impl OptimizerState {
    pub fn new(net: &Mlp, method: Method, step_size: f64) -> Self {
        Self {
            method,
            step_size,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            timestep: 0,
        }
    }
}

/// One optimizer step on `net`.
pub fn apply_update(net: &mut Mlp, grads: &Gradients, opt: &mut OptimizerState) -> Result<(), NeuralError> {
    if !grads.same_shape(net) || !opt.m.same_shape(net) || !opt.v.same_shape(net) {
        return Err(NeuralError::Shape("gradient shape differs from network".into()));
    }
    opt.timestep += 1;
    let lr = opt.step_size;
    match opt.method {
        Method::Sgd => {
            for (p, g) in net.parameters_mut().zip(grads.values()) {
                *p -= lr * g;
            }
        }
        Method::Adam { beta1, beta2, eps } => {
            let t = opt.timestep as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let params = net.parameters_mut();
            let moments = opt.m.values_mut().zip(opt.v.values_mut());
            for ((p, g), (m, v)) in params.zip(grads.values()).zip(moments) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"DQNCKPT1";
const OPT_TAG: &[u8; 8] = b"OPTSTATE";

/// Serialize a network (and optionally its optimizer) to the checkpoint
/// format: magic, layer count, layer sizes (u64), then each layer's weights
/// and biases as little-endian f64, then an optional `OPTSTATE` section.
pub fn encode_checkpoint(net: &Mlp, opt: Option<&OptimizerState>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (net.sizes.len() + net.parameter_count() * 3));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(net.sizes.len() as u64).to_le_bytes());
    for &s in &net.sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for v in net.parameters() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(opt) = opt {
        out.extend_from_slice(OPT_TAG);
        let (code, b1, b2, eps) = match opt.method {
            Method::Adam { beta1, beta2, eps } => (0u64, beta1, beta2, eps),
            Method::Sgd => (1u64, 0.0, 0.0, 0.0),
        };
        out.extend_from_slice(&code.to_le_bytes());
        for v in [opt.step_size, b1, b2, eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&opt.timestep.to_le_bytes());
        for v in opt.m.values().chain(opt.v.values()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NeuralError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NeuralError::Checkpoint("truncated".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NeuralError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Mlp, Option<OptimizerState>), NeuralError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let count = r.u64()? as usize;
    if !(2..=64).contains(&count) {
        return Err(NeuralError::Checkpoint(format!("implausible layer count {count}")));
    }
    let mut sizes = Vec::with_capacity(count);
    for _ in 0..count {
        sizes.push(r.u64()? as usize);
    }
    if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
        return Err(NeuralError::Checkpoint(format!("implausible layer sizes {sizes:?}")));
    }
    let mut net = Mlp::zeros(&sizes)?;
    for p in net.parameters_mut() {
        *p = r.f64()?;
    }
    if r.pos == bytes.len() {
        return Ok((net, None));
    }
    if r.take(8)? != OPT_TAG {
        return Err(NeuralError::Checkpoint("unknown trailing section".into()));
    }
    let code = r.u64()?;
    let step_size = r.f64()?;
    let (b1, b2, eps) = (r.f64()?, r.f64()?, r.f64()?);
    let method = match code {
        0 => Method::Adam { beta1: b1, beta2: b2, eps },
        1 => Method::Sgd,
        other => return Err(NeuralError::Checkpoint(format!("unknown optimizer {other}"))),
    };
    let mut opt = OptimizerState::new(&net, method, step_size);
    opt.timestep = r.u64()?;
    for v in opt.m.values_mut() {
        *v = r.f64()?;
    }
    for v in opt.v.values_mut() {
        *v = r.f64()?;
    }
    if r.pos != bytes.len() {
        return Err(NeuralError::Checkpoint("trailing bytes".into()));
    }
    Ok((net, Some(opt)))
}

pub fn save_checkpoint(
    path: &std::path::Path,
    net: &Mlp,
    opt: Option<&OptimizerState>,
) -> Result<(), NeuralError> {
    std::fs::write(path, encode_checkpoint(net, opt))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(Mlp, Option<OptimizerState>), NeuralError> {
    decode_checkpoint(&std::fs::read(path)?)
}
