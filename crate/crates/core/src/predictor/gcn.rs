//! Graph convolutional scorer with hand-written backpropagation.
//!
//! `H0 = X`, `H(l+1) = act(Â H(l) W(l))`, `ŷ = logistic(H(L) h + b)`.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PredictError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Identity => z.clone(),
        }
    }

    /// Derivative given the pre-activation `z` and activation `h`.
    fn derivative(self, z: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => h.mapv(|v| 1.0 - v * v),
            Activation::Identity => Array2::ones(z.raw_dim()),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    Raw,
    #[default]
    SelfLoopSymNorm,
}

impl AdjacencyMode {
    pub fn token(self) -> &'static str {
        match self {
            AdjacencyMode::Raw => "raw",
            AdjacencyMode::SelfLoopSymNorm => "self_loop_sym_norm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(AdjacencyMode::Raw),
            "self_loop_sym_norm" => Some(AdjacencyMode::SelfLoopSymNorm),
            _ => None,
        }
    }

    /// The propagation matrix for a symmetric 0/1 adjacency.
    pub fn propagation(self, a: &Array2<f64>) -> Array2<f64> {
        match self {
            AdjacencyMode::Raw => a.clone(),
            AdjacencyMode::SelfLoopSymNorm => {
                let n = a.nrows();
                let with_loops = a + &Array2::<f64>::eye(n);
                let inv_sqrt: Array1<f64> = with_loops.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
                let mut out = with_loops;
                for i in 0..n {
                    for j in 0..n {
                        out[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Bce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub weights: Vec<Array2<f64>>,
    pub head: Array1<f64>,
    pub bias: f64,
    pub activation: Activation,
    pub adjacency: AdjacencyMode,
    pub seed: u64,
}

impl GcnModel {
    /// `dims` lists the input width then each layer's output width.
    /// Weights are uniform in `±1/sqrt(fan_in)`.
    pub fn new(dims: &[usize], activation: Activation, adjacency: AdjacencyMode, seed: u64) -> Result<Self, PredictError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(PredictError::InvalidConfig(format!(
                "need an input width and at least one positive layer width, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
        };
        let weights = dims.windows(2).map(|w| uniform(w[0], w[1], w[0])).collect();
        let last = *dims.last().expect("checked length");
        let head = uniform(last, 1, last).column(0).to_owned();
        Ok(Self {
            weights,
            head,
            bias: 0.0,
            activation,
            adjacency,
            seed,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].nrows()];
        d.extend(self.weights.iter().map(|w| w.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Sum of squared entries over every layer and the head.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            + self.head.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.head.len() + 1
    }

    /// Every parameter in a fixed order: layers row-major, head, bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        out.extend(self.head.iter().copied());
        out.push(self.bias);
        out
    }

    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        let mut it = values.iter().copied();
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        self.head.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        self.bias = it.next().expect("length checked");
    }

    fn check(&self, a: &Array2<f64>, x: &Array2<f64>) -> Result<(), PredictError> {
        let n = x.nrows();
        if a.nrows() != n || a.ncols() != n {
            return Err(PredictError::ShapeMismatch(format!(
                "adjacency is {}x{}, features have {n} rows",
                a.nrows(),
                a.ncols()
            )));
        }
        if x.ncols() != self.input_dim() {
            return Err(PredictError::ShapeMismatch(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, a_hat: &Array2<f64>, x: &Array2<f64>) -> Cache {
        let mut hs = vec![x.clone()];
        let mut zs = Vec::with_capacity(self.weights.len());
        let mut ahs = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let ah = a_hat.dot(hs.last().expect("non-empty"));
            let z = ah.dot(w);
            hs.push(self.activation.apply(&z));
            zs.push(z);
            ahs.push(ah);
        }
        let s = hs.last().expect("non-empty").dot(&self.head) + self.bias;
        let y = s.mapv(logistic);
        Cache { hs, zs, ahs, y }
    }

    /// Scores in `(0, 1)` for each row of `x`. `a` is the raw symmetric
    /// adjacency; the propagation matrix follows `self.adjacency`.
    pub fn forward(&self, a: &Array2<f64>, x: &Array2<f64>) -> Result<Array1<f64>, PredictError> {
        self.check(a, x)?;
        let a_hat = self.adjacency.propagation(a);
        Ok(self.forward_cached(&a_hat, x).y)
    }
}

pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

struct Cache {
    hs: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    /// `Â H(l)` per layer.
    ahs: Vec<Array2<f64>>,
    y: Array1<f64>,
}

/// One graph with supervision on the nodes where `mask` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub mask: Vec<bool>,
}

impl GraphSample {
    pub fn supervised(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub head: Array1<f64>,
    pub bias: f64,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        out.extend(self.head.iter().copied());
        out.push(self.bias);
        out
    }
}

fn supervised_total(batch: &[GraphSample]) -> Result<usize, PredictError> {
    let n: usize = batch.iter().map(GraphSample::supervised).sum();
    if n == 0 {
        Err(PredictError::EmptyBatch)
    } else {
        Ok(n)
    }
}

fn point_loss(kind: LossKind, y: f64, p: f64) -> f64 {
    match kind {
        LossKind::Mse => (y - p) * (y - p),
        LossKind::Bce => {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

/// Mean loss over supervised nodes plus `lambda` times the squared norm of
/// all layer weights and the head.
pub fn loss(model: &GcnModel, batch: &[GraphSample], lambda: f64, kind: LossKind) -> Result<f64, PredictError> {
    let n = supervised_total(batch)? as f64;
    let mut total = 0.0;
    for s in batch {
        let y = model.forward(&s.adjacency, &s.features)?;
        for i in 0..y.len() {
            if s.mask[i] {
                total += point_loss(kind, s.labels[i], y[i]);
            }
        }
    }
    Ok(total / n + lambda * model.weight_norm_sq())
}

/// Loss and its exact gradient with respect to every parameter.
pub fn gradients(
    model: &GcnModel,
    batch: &[GraphSample],
    lambda: f64,
    kind: LossKind,
) -> Result<(f64, Gradients), PredictError> {
    let n = supervised_total(batch)? as f64;
    let mut gw: Vec<Array2<f64>> = model.weights.iter().map(|w| w.mapv(|v| 2.0 * lambda * v)).collect();
    let mut gh = model.head.mapv(|v| 2.0 * lambda * v);
    let mut gb = 0.0;
    let mut total = 0.0;
    for s in batch {
        model.check(&s.adjacency, &s.features)?;
        let a_hat = model.adjacency.propagation(&s.adjacency);
        let c = model.forward_cached(&a_hat, &s.features);
        let rows = c.y.len();
        let mut ds = Array1::<f64>::zeros(rows);
        for i in 0..rows {
            if !s.mask[i] {
                continue;
            }
            let (y, p) = (s.labels[i], c.y[i]);
            total += point_loss(kind, y, p);
            ds[i] = match kind {
                LossKind::Mse => 2.0 * (p - y) / n * p * (1.0 - p),
                LossKind::Bce => (p - y) / n,
            };
        }
        let h_last = c.hs.last().expect("non-empty");
        gh += &h_last.t().dot(&ds);
        gb += ds.sum();
        // dL/dH(L) = ds h^T
        let mut dh = ds
            .view()
            .insert_axis(Axis(1))
            .dot(&model.head.view().insert_axis(Axis(0)));
        for l in (0..model.weights.len()).rev() {
            let dz = &dh * &model.activation.derivative(&c.zs[l], &c.hs[l + 1]);
            gw[l] += &c.ahs[l].t().dot(&dz);
            if l > 0 {
                dh = a_hat.t().dot(&dz.dot(&model.weights[l].t()));
            }
        }
    }
    let value = total / n + lambda * model.weight_norm_sq();
    Ok((
        value,
        Gradients {
            weights: gw,
            head: gh,
            bias: gb,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    #[serde(default)]
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            learning_rate: 0.5,
            epochs: 200,
            seed: 42,
            threshold: 0.5,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        if self.epochs == 0 {
            return Err(PredictError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PredictError::InvalidConfig(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(PredictError::InvalidConfig("lambda must be >= 0 and learning_rate > 0".into()));
        }
        Ok(())
    }
}

/// Full-batch gradient descent. Returns the loss before each step plus the
/// final loss.
pub fn train(model: &mut GcnModel, batch: &[GraphSample], cfg: &TrainConfig) -> Result<Vec<f64>, PredictError> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (value, g) = gradients(model, batch, cfg.lambda, cfg.loss)?;
        if !value.is_finite() {
            return Err(PredictError::Divergence { epoch });
        }
        trace.push(value);
        for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
            w.scaled_add(-cfg.learning_rate, gw);
        }
        model.head.scaled_add(-cfg.learning_rate, &g.head);
        model.bias -= cfg.learning_rate * g.bias;
    }
    let last = loss(model, batch, cfg.lambda, cfg.loss)?;
    if !last.is_finite() {
        return Err(PredictError::Divergence { epoch: cfg.epochs });
    }
    trace.push(last);
    Ok(trace)
}

const CHECKPOINT_MAGIC: &str = "gcn-checkpoint 1";

/// Plain-text checkpoint: a header then row-major weights.
pub fn save_checkpoint(model: &GcnModel) -> String {
    let mut out = String::new();
    let dims: Vec<String> = model.dims().iter().map(ToString::to_string).collect();
    writeln!(out, "{CHECKPOINT_MAGIC}").ok();
    writeln!(out, "dims {}", dims.join(" ")).ok();
    writeln!(out, "layers {}", model.layer_count()).ok();
    writeln!(out, "activation {}", model.activation.token()).ok();
    writeln!(out, "adjacency {}", model.adjacency.token()).ok();
    writeln!(out, "seed {}", model.seed).ok();
    for (l, w) in model.weights.iter().enumerate() {
        writeln!(out, "W{l} {} {}", w.nrows(), w.ncols()).ok();
        for row in w.rows() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", vals.join(" ")).ok();
        }
    }
    let head: Vec<String> = model.head.iter().map(|v| format!("{v:?}")).collect();
    writeln!(out, "head {}", head.join(" ")).ok();
    writeln!(out, "bias {:?}", model.bias).ok();
    out
}

pub fn load_checkpoint(text: &str) -> Result<GcnModel, PredictError> {
    let bad = |m: String| PredictError::Checkpoint(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what}")));
    if next("header")?.trim() != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    let field = |line: &str, key: &str| -> Result<String, PredictError> {
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(|r| r.trim().to_string())
            .ok_or_else(|| bad(format!("expected {key:?}, found {line:?}")))
    };
    let floats = |s: &str| -> Result<Vec<f64>, PredictError> {
        s.split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
            .collect()
    };
    let dims: Vec<usize> = field(next("dims")?, "dims")?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad(format!("bad dim {v:?}"))))
        .collect::<Result<_, _>>()?;
    let layers: usize = field(next("layers")?, "layers")?
        .parse()
        .map_err(|_| bad("bad layer count".into()))?;
    if dims.len() != layers + 1 {
        return Err(bad(format!("{} dims for {layers} layers", dims.len())));
    }
    let activation = Activation::parse(&field(next("activation")?, "activation")?)
        .ok_or_else(|| bad("unknown activation".into()))?;
    let adjacency = AdjacencyMode::parse(&field(next("adjacency")?, "adjacency")?)
        .ok_or_else(|| bad("unknown adjacency mode".into()))?;
    let seed: u64 = field(next("seed")?, "seed")?
        .parse()
        .map_err(|_| bad("bad seed".into()))?;
    let mut weights = Vec::with_capacity(layers);
    for l in 0..layers {
        let shape = field(next("layer header")?, &format!("W{l}"))?;
        let expect = format!("{} {}", dims[l], dims[l + 1]);
        if shape != expect {
            return Err(bad(format!("W{l} is {shape}, expected {expect}")));
        }
        let mut values = Vec::with_capacity(dims[l] * dims[l + 1]);
        for _ in 0..dims[l] {
            let row = floats(next("weight row")?)?;
            if row.len() != dims[l + 1] {
                return Err(bad(format!("W{l} row has {} values", row.len())));
            }
            values.extend(row);
        }
        weights.push(Array2::from_shape_vec((dims[l], dims[l + 1]), values).map_err(|e| bad(e.to_string()))?);
    }
    let head = floats(&field(next("head")?, "head")?)?;
    if head.len() != dims[layers] {
        return Err(bad(format!("head has {} values", head.len())));
    }
    let bias_line = next("bias")?;
    let bias = floats(&field(bias_line, "bias")?)?
        .first()
        .copied()
        .ok_or_else(|| bad("missing bias value".into()))?;
    Ok(GcnModel {
        weights,
        head: Array1::from(head),
        bias,
        activation,
        adjacency,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Array2<f64> {
        array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    }

    #[test]
    fn sym_norm_path_by_hand() {
        let a_hat = AdjacencyMode::SelfLoopSymNorm.propagation(&path3());
        // degrees with self loops: 2, 3, 2
        let e = 1.0 / 6f64.sqrt();
        let want = array![[0.5, e, 0.0], [e, 1.0 / 3.0, e], [0.0, e, 0.5]];
        for (x, y) in a_hat.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        let edgeless = AdjacencyMode::SelfLoopSymNorm.propagation(&Array2::zeros((3, 3)));
        assert_eq!(edgeless, Array2::<f64>::eye(3));
    }

    #[test]
    fn raw_edgeless_graph_gives_constant_scores() {
        let mut m = GcnModel::new(&[2, 3], Activation::Relu, AdjacencyMode::Raw, 1).unwrap();
        m.bias = 0.3;
        let x = array![[1.0, 2.0], [-1.0, 0.5], [3.0, 3.0]];
        let y = m.forward(&Array2::zeros((3, 3)), &x).unwrap();
        for v in y.iter() {
            assert_eq!(*v, logistic(0.3));
        }
    }

    #[test]
    #[allow(clippy::neg_multiply)]
    fn hand_computed_path_scores() {
        let mut m = GcnModel::new(&[2, 2], Activation::Identity, AdjacencyMode::SelfLoopSymNorm, 1).unwrap();
        m.weights[0] = array![[1.0, -0.5], [0.25, 2.0]];
        m.head = array![0.5, -1.0];
        m.bias = 0.1;
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];
        let y = m.forward(&path3(), &x).unwrap();
        // by hand: Â X, then W, then the head
        let e = 1.0 / 6f64.sqrt();
        let ax = [
            [0.5 * 1.0 + e * 0.0, 0.5 * 0.0 + e * 1.0],
            [e * 1.0 + (1.0 / 3.0) * 0.0 + e * 2.0, e * 0.0 + (1.0 / 3.0) * 1.0 + e * -1.0],
            [e * 0.0 + 0.5 * 2.0, e * 1.0 + 0.5 * -1.0],
        ];
        for i in 0..3 {
            let h0 = ax[i][0] * 1.0 + ax[i][1] * 0.25;
            let h1 = ax[i][0] * -0.5 + ax[i][1] * 2.0;
            let s = 0.5 * h0 - 1.0 * h1 + 0.1;
            assert!((y[i] - 1.0 / (1.0 + (-s).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let m = GcnModel::new(&[2, 2], Activation::Tanh, AdjacencyMode::Raw, 1).unwrap();
        assert!(matches!(m.forward(&Array2::zeros((2, 2)), &Array2::zeros((3, 2))), Err(PredictError::ShapeMismatch(_))));
        assert!(matches!(m.forward(&Array2::zeros((3, 3)), &Array2::zeros((3, 5))), Err(PredictError::ShapeMismatch(_))));
        assert!(GcnModel::new(&[2], Activation::Tanh, AdjacencyMode::Raw, 1).is_err());
    }

    fn sample(labels: &[f64]) -> GraphSample {
        let n = labels.len();
        GraphSample {
            adjacency: Array2::zeros((n, n)),
            features: Array2::from_shape_fn((n, 1), |(i, _)| labels[i]),
            labels: Array1::from(labels.to_vec()),
            mask: vec![true; n],
        }
    }

    #[test]
    fn loss_examples() {
        let mut m = GcnModel::new(&[1, 1], Activation::Identity, AdjacencyMode::Raw, 3).unwrap();
        m.set_params(&vec![0.0; m.param_count()]);
        // ŷ = 0.5 everywhere: MSE is 0.25, and with zero weights λ adds nothing
        let s = sample(&[1.0, 0.0, 1.0]);
        assert_eq!(loss(&m, std::slice::from_ref(&s), 0.0, LossKind::Mse).unwrap(), 0.25);
        assert_eq!(loss(&m, std::slice::from_ref(&s), 10.0, LossKind::Mse).unwrap(), 0.25);
        let empty = GraphSample { mask: vec![false; 3], ..s };
        assert_eq!(loss(&m, &[empty], 0.0, LossKind::Mse), Err(PredictError::EmptyBatch));
        assert_eq!(point_loss(LossKind::Mse, 1.0, 1.0), 0.0);
        assert_eq!(point_loss(LossKind::Mse, 1.0, 0.0), 1.0);
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let mut m = GcnModel::new(&[1, 2], Activation::Tanh, AdjacencyMode::Raw, 3).unwrap();
        let before = m.weight_norm_sq();
        let cfg = TrainConfig { lambda: 1e6, learning_rate: 1e-7, epochs: 20, ..Default::default() };
        train(&mut m, &[sample(&[1.0, 0.0])], &cfg).unwrap();
        assert!(m.weight_norm_sq() < before);
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = GcnModel::new(&[1, 2], Activation::Identity, AdjacencyMode::Raw, 3).unwrap();
        let cfg = TrainConfig { lambda: 1.0, learning_rate: 1e6, epochs: 50, ..Default::default() };
        assert!(matches!(train(&mut m, &[sample(&[1.0, 0.0])], &cfg), Err(PredictError::Divergence { .. })));
    }

    #[test]
    fn training_is_deterministic_and_separates_toy() {
        let cfg = TrainConfig { lambda: 0.0, learning_rate: 2.0, epochs: 500, ..Default::default() };
        let data = [sample(&[1.0, 0.0, 1.0, 0.0])];
        let run = || {
            let mut m = GcnModel::new(&[1, 4], Activation::Tanh, AdjacencyMode::SelfLoopSymNorm, 7).unwrap();
            let trace = train(&mut m, &data, &cfg).unwrap();
            (m, trace)
        };
        let (m, t1) = run();
        let (_, t2) = run();
        assert_eq!(t1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(t1.last().unwrap() <= &t1[0]);
        let y = m.forward(&data[0].adjacency, &data[0].features).unwrap();
        for (p, l) in y.iter().zip(data[0].labels.iter()) {
            assert_eq!(*p >= 0.5, *l == 1.0);
        }
    }

    #[test]
    fn bce_gradient_matches_differences() {
        let mut m = GcnModel::new(&[2, 3, 2], Activation::Tanh, AdjacencyMode::SelfLoopSymNorm, 11).unwrap();
        m.bias = 0.2;
        let s = GraphSample {
            adjacency: path3(),
            features: array![[0.3, -0.2], [0.1, 0.9], [-0.7, 0.4]],
            labels: array![1.0, 0.0, 1.0],
            mask: vec![true, false, true],
        };
        let (_, g) = gradients(&m, std::slice::from_ref(&s), 0.01, LossKind::Bce).unwrap();
        let base = m.params();
        for (k, analytic) in g.flat().into_iter().enumerate() {
            let h = 1e-6;
            let mut p = base.clone();
            p[k] += h;
            m.set_params(&p);
            let up = loss(&m, std::slice::from_ref(&s), 0.01, LossKind::Bce).unwrap();
            p[k] -= 2.0 * h;
            m.set_params(&p);
            let down = loss(&m, std::slice::from_ref(&s), 0.01, LossKind::Bce).unwrap();
            m.set_params(&base);
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()), "{k}: {numeric} vs {analytic}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = GcnModel::new(&[5, 4, 3], Activation::Relu, AdjacencyMode::Raw, 99).unwrap();
        let text = save_checkpoint(&m);
        assert!(text.starts_with("gcn-checkpoint 1\ndims 5 4 3\nlayers 2\nactivation relu\nadjacency raw\nseed 99\n"));
        let back = load_checkpoint(&text).unwrap();
        assert_eq!(back, m);
        assert!(load_checkpoint("nonsense").is_err());
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(load_checkpoint(&truncated).is_err());
    }
}
