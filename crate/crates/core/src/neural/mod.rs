//! Shared-trunk, one-head-per-site feed-forward network.
//!
//! The trunk is `h` dense layers of width `s` with a fixed hidden
//! nonlinearity. Each categorical site gets a softmax head over its `k`
//! states (cross-entropy loss); each continuous site a single linear unit
//! predicting the standardised value (squared-error loss). Gradients are
//! computed by hand-written backpropagation over whole batches.

mod adam;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, ParamBlock};

use crate::error::{Error, Result};
use crate::masking::{EncodingLayout, PriorStats};
use crate::program::{ProgramSpec, SiteKind, Value};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::InvalidConfig(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    #[serde(rename = "h")]
    pub hidden_layers: usize,
    #[serde(rename = "s")]
    pub width: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl Architecture {
    pub fn new(hidden_layers: usize, width: usize) -> Self {
        Architecture {
            hidden_layers,
            width,
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }

    /// Size presets 1, 2, 3: (2, 10), (4, 35), (8, 100).
    pub fn preset(size: u8) -> Result<Self> {
        match size {
            1 => Ok(Self::new(2, 10)),
            2 => Ok(Self::new(4, 35)),
            3 => Ok(Self::new(8, 100)),
            _ => Err(Error::InvalidConfig(format!(
                "architecture preset must be 1, 2 or 3, got {size}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 || self.width < 1 {
            return Err(Error::InvalidConfig(format!(
                "need h >= 1 and s >= 1, got h={} s={}",
                self.hidden_layers, self.width
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Either a size preset or explicit `(h, s, …)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArchSpec {
    Preset(u8),
    Explicit(Architecture),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Summed loss over all heads, one optimiser.
    Standard,
    /// Per-head loss, one optimiser per head, minimised head by head.
    Flexible,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Standard => "standard",
            TrainMode::Flexible => "flexible",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "std" => Ok(TrainMode::Standard),
            "flexible" | "flex" => Ok(TrainMode::Flexible),
            _ => Err(Error::InvalidConfig(format!("unknown training mode `{s}`"))),
        }
    }
}

/// Dense layer `y = x W + b` with `W` of shape `(inputs, outputs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-limit..limit)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.dim()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w);
        z += &self.b;
        z
    }
}

/// Per-site network output.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Probs(Vec<f64>),
    /// Standardised mean.
    Mean(f64),
}

impl Prediction {
    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            Prediction::Probs(p) => Some(p),
            Prediction::Mean(_) => None,
        }
    }
}

/// Which heads contribute to a backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSelection {
    All,
    Single(usize),
}

impl HeadSelection {
    fn includes(self, j: usize) -> bool {
        match self {
            HeadSelection::All => true,
            HeadSelection::Single(k) => k == j,
        }
    }
}

/// Per-site batch targets: state indices or standardised reals.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetColumn {
    States(Vec<usize>),
    Reals(Vec<f64>),
}

impl TargetColumn {
    fn len(&self) -> usize {
        match self {
            TargetColumn::States(v) => v.len(),
            TargetColumn::Reals(v) => v.len(),
        }
    }
}

/// Column-major view of a batch of per-site targets.
pub fn target_columns(layout: &EncodingLayout, targets: &[Vec<Value>]) -> Vec<TargetColumn> {
    layout
        .sites()
        .iter()
        .enumerate()
        .map(|(i, slots)| match slots.kind {
            SiteKind::Categorical { .. } => {
                TargetColumn::States(targets.iter().map(|t| t[i].state()).collect())
            }
            SiteKind::Continuous => {
                TargetColumn::Reals(targets.iter().map(|t| t[i].as_f64()).collect())
            }
        })
        .collect()
}

/// Gradients laid out like the model: every trunk layer, and the selected
/// heads (`None` for heads outside the selection).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<Dense>,
    pub heads: Vec<Option<Dense>>,
}

impl Gradients {
    /// Flattened in canonical parameter order, zeros for unselected heads.
    pub fn flatten(&self, model: &UmModel) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.param_count());
        for g in &self.trunk {
            out.extend(g.w.iter());
            out.extend(g.b.iter());
        }
        for (g, h) in self.heads.iter().zip(&model.heads) {
            match g {
                Some(g) => {
                    out.extend(g.w.iter());
                    out.extend(g.b.iter());
                }
                None => out.extend(std::iter::repeat_n(0.0, h.param_count())),
            }
        }
        out
    }
}

struct TrunkCache {
    /// `inputs[l]` feeds layer `l`; the last entry is the trunk output.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    dropout: Vec<Option<Array2<f64>>>,
}

/// The universal marginaliser network plus everything needed to encode
/// queries for it.
#[derive(Clone, Debug)]
pub struct UmModel {
    pub program: ProgramSpec,
    pub layout: EncodingLayout,
    pub stats: PriorStats,
    pub arch: Architecture,
    pub preset: Option<u8>,
    pub mode: TrainMode,
    pub trunk: Vec<Dense>,
    pub heads: Vec<Dense>,
    /// One optimiser (standard) or one per head (flexible).
    pub optimizers: Vec<AdamState>,
    pub rng_seed: u64,
    pub steps_trained: u64,
}

/// Build a model for `program`. Weights are Glorot-uniform from the `init`
/// stream of `seed`; biases start at zero.
pub fn build_um(
    program: &ProgramSpec,
    arch: ArchSpec,
    mode: TrainMode,
    layout: EncodingLayout,
    stats: PriorStats,
    seed: u64,
) -> Result<UmModel> {
    if layout != EncodingLayout::new(program) {
        return Err(Error::InvalidConfig(
            "layout was not built for this program".into(),
        ));
    }
    if stats.sites.len() != program.len() {
        return Err(Error::InvalidConfig(
            "prior statistics were not built for this program".into(),
        ));
    }
    let (arch, preset) = match arch {
        ArchSpec::Preset(p) => (Architecture::preset(p)?, Some(p)),
        ArchSpec::Explicit(a) => (a, None),
    };
    arch.validate()?;
    let mut rng = rng::stream(seed, "init");
    let mut trunk = Vec::with_capacity(arch.hidden_layers);
    let mut fan_in = layout.width();
    for _ in 0..arch.hidden_layers {
        trunk.push(Dense::glorot(fan_in, arch.width, &mut rng));
        fan_in = arch.width;
    }
    let heads: Vec<Dense> = layout
        .sites()
        .iter()
        .map(|s| Dense::glorot(arch.width, s.output.len(), &mut rng))
        .collect();
    let mut model = UmModel {
        program: program.clone(),
        layout,
        stats,
        arch,
        preset,
        mode,
        trunk,
        heads,
        optimizers: Vec::new(),
        rng_seed: seed,
        steps_trained: 0,
    };
    model.reset_optimizers();
    Ok(model)
}

impl UmModel {
    pub fn reset_optimizers(&mut self) {
        let trunk_sizes: Vec<usize> = self
            .trunk
            .iter()
            .flat_map(|d| [d.w.len(), d.b.len()])
            .collect();
        let head_sizes = |h: &Dense| [h.w.len(), h.b.len()];
        self.optimizers = match self.mode {
            TrainMode::Standard => {
                let mut sizes = trunk_sizes;
                sizes.extend(self.heads.iter().flat_map(head_sizes));
                vec![AdamState::new(&sizes)]
            }
            TrainMode::Flexible => self
                .heads
                .iter()
                .map(|h| {
                    let mut sizes = trunk_sizes.clone();
                    sizes.extend(head_sizes(h));
                    AdamState::new(&sizes)
                })
                .collect(),
        };
    }

    pub fn n_sites(&self) -> usize {
        self.heads.len()
    }

    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.heads)
            .map(Dense::param_count)
            .sum()
    }

    /// Mutable access to parameter `index` in canonical order (trunk layers
    /// `w` then `b`, then heads `w` then `b`).
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for d in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            if index < d.w.len() {
                return d
                    .w
                    .as_slice_mut()
                    .expect("contiguous")
                    .get_mut(index)
                    .expect("in range");
            }
            index -= d.w.len();
            if index < d.b.len() {
                return &mut d.b[index];
            }
            index -= d.b.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.layout.width() {
            return Err(Error::LengthMismatch(format!(
                "input has {cols} entries, model expects {}",
                self.layout.width()
            )));
        }
        Ok(())
    }

    fn trunk_forward<R: Rng>(
        &self,
        x: ArrayView2<f64>,
        mut dropout_rng: Option<&mut R>,
    ) -> TrunkCache {
        let act = self.arch.activation;
        let p = self.arch.dropout;
        let mut inputs = Vec::with_capacity(self.trunk.len() + 1);
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut dropout = Vec::with_capacity(self.trunk.len());
        inputs.push(x.to_owned());
        for layer in &self.trunk {
            let z = layer.affine(&inputs.last().expect("input").view());
            let mut a = z.mapv(|v| act.apply(v));
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m = Array2::from_shape_simple_fn(a.dim(), || {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            inputs.push(a);
            dropout.push(mask);
        }
        TrunkCache {
            inputs,
            pre,
            dropout,
        }
    }

    /// Batched inference: rows of `(B, D)` inputs to `(B, output_width)`
    /// predictions (softmax blocks and standardised means). Dropout is off.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let cache = self.trunk_forward::<rng::StreamRng>(inputs, None);
        let top = cache.inputs.last().expect("trunk output");
        let mut out = Array2::zeros((inputs.nrows(), self.layout.output_width()));
        for (head, slots) in self.heads.iter().zip(self.layout.sites()) {
            let mut z = head.affine(&top.view());
            if slots.kind.is_categorical() {
                for mut row in z.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("row"));
                }
            }
            out.slice_mut(s![.., slots.output.clone()]).assign(&z);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out)
    }

    /// Like [`forward_batch`](Self::forward_batch) but evaluates only site
    /// `i`'s head: `(B, k)` probabilities or `(B, 1)` standardised means.
    pub fn forward_site_batch(&self, inputs: ArrayView2<f64>, i: usize) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let cache = self.trunk_forward::<rng::StreamRng>(inputs, None);
        let top = cache.inputs.last().expect("trunk output");
        let mut z = self.heads[i].affine(&top.view());
        if self.layout.site(i).kind.is_categorical() {
            for mut row in z.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("row"));
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network output for site #{i}")));
        }
        Ok(z)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<Prediction>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::LengthMismatch(e.to_string()))?;
        let out = self.forward_batch(x)?;
        Ok(self.split_predictions(out.row(0).as_slice().expect("row")))
    }

    /// Split one row of `forward_batch` output into per-site predictions.
    pub fn split_predictions(&self, row: &[f64]) -> Vec<Prediction> {
        self.layout
            .sites()
            .iter()
            .map(|s| match s.kind {
                SiteKind::Categorical { .. } => Prediction::Probs(row[s.output.clone()].to_vec()),
                SiteKind::Continuous => Prediction::Mean(row[s.output.start]),
            })
            .collect()
    }

    /// Gradient of the mean (over rows) of the summed selected head losses,
    /// plus each selected head's mean loss.
    pub fn backward_batch<R: Rng>(
        &self,
        inputs: ArrayView2<f64>,
        targets: &[TargetColumn],
        heads: HeadSelection,
        dropout_rng: Option<&mut R>,
    ) -> Result<(Gradients, Vec<Option<f64>>)> {
        self.check_input(inputs.ncols())?;
        let batch = inputs.nrows();
        if targets.len() != self.n_sites() || targets.iter().any(|t| t.len() != batch) {
            return Err(Error::LengthMismatch("targets do not match batch".into()));
        }
        if let HeadSelection::Single(j) = heads {
            if j >= self.n_sites() {
                return Err(Error::InvalidConfig(format!("no head {j}")));
            }
        }
        let cache = self.trunk_forward(inputs, dropout_rng);
        let top = cache.inputs.last().expect("trunk output");
        let scale = 1.0 / batch as f64;

        let mut delta = Array2::<f64>::zeros(top.dim());
        let mut head_grads = vec![None; self.n_sites()];
        let mut losses = vec![None; self.n_sites()];
        for (j, (head, target)) in self.heads.iter().zip(targets).enumerate() {
            if !heads.includes(j) {
                continue;
            }
            let mut z = head.affine(&top.view());
            let mut loss = 0.0;
            match target {
                TargetColumn::States(states) => {
                    for (mut row, &t) in z.rows_mut().into_iter().zip(states) {
                        let row = row.as_slice_mut().expect("row");
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        loss += lse - row[t];
                        for v in row.iter_mut() {
                            *v = (*v - lse).exp() * scale;
                        }
                        row[t] -= scale;
                    }
                }
                TargetColumn::Reals(values) => {
                    for (mut row, &t) in z.rows_mut().into_iter().zip(values) {
                        let d = row[0] - t;
                        loss += d * d;
                        row[0] = 2.0 * d * scale;
                    }
                }
            }
            // z now holds dLoss/dlogits
            losses[j] = Some(loss * scale);
            delta += &z.dot(&head.w.t());
            head_grads[j] = Some(Dense {
                w: top.t().dot(&z),
                b: z.sum_axis(Axis(0)),
            });
        }

        let act = self.arch.activation;
        let mut trunk_grads = Vec::with_capacity(self.trunk.len());
        for l in (0..self.trunk.len()).rev() {
            if let Some(m) = &cache.dropout[l] {
                delta *= m;
            }
            ndarray::Zip::from(&mut delta)
                .and(&cache.pre[l])
                .for_each(|d, &z| *d *= act.derivative(z));
            trunk_grads.push(Dense {
                w: cache.inputs[l].t().dot(&delta),
                b: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                delta = delta.dot(&self.trunk[l].w.t());
            }
        }
        trunk_grads.reverse();
        Ok((
            Gradients {
                trunk: trunk_grads,
                heads: head_grads,
            },
            losses,
        ))
    }

    /// Single-example backward pass with dropout disabled.
    pub fn backward(
        &self,
        input: &[f64],
        target: &[Value],
        heads: HeadSelection,
    ) -> Result<Gradients> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::LengthMismatch(e.to_string()))?;
        let cols = target_columns(&self.layout, &[target.to_vec()]);
        Ok(self
            .backward_batch::<rng::StreamRng>(x, &cols, heads, None)?
            .0)
    }

    /// Apply `grads` with optimiser `which`: the single optimiser in
    /// standard mode (all parameters), or head `which`'s optimiser in
    /// flexible mode (trunk plus that head).
    pub fn apply_gradients(&mut self, grads: &Gradients, which: usize) -> Result<()> {
        let UmModel {
            trunk,
            heads,
            optimizers,
            mode,
            program,
            ..
        } = self;
        let opt = optimizers
            .get_mut(which)
            .ok_or_else(|| Error::InvalidConfig(format!("no optimiser {which}")))?;
        let mut blocks = Vec::with_capacity(opt.block_sizes().len());
        for (l, (layer, g)) in trunk.iter_mut().zip(&grads.trunk).enumerate() {
            blocks.push(ParamBlock {
                label: format!("trunk layer {l} weights"),
                params: layer.w.as_slice_mut().expect("contiguous"),
                grads: g.w.as_slice().expect("contiguous"),
            });
            blocks.push(ParamBlock {
                label: format!("trunk layer {l} biases"),
                params: layer.b.as_slice_mut().expect("contiguous"),
                grads: g.b.as_slice().expect("contiguous"),
            });
        }
        for (j, (head, g)) in heads.iter_mut().zip(&grads.heads).enumerate() {
            let selected = match mode {
                TrainMode::Standard => true,
                TrainMode::Flexible => j == which,
            };
            if !selected {
                continue;
            }
            let g = g
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig(format!("missing gradient for head {j}")))?;
            let name = &program.site(j).name;
            blocks.push(ParamBlock {
                label: format!("head `{name}` weights"),
                params: head.w.as_slice_mut().expect("contiguous"),
                grads: g.w.as_slice().expect("contiguous"),
            });
            blocks.push(ParamBlock {
                label: format!("head `{name}` biases"),
                params: head.b.as_slice_mut().expect("contiguous"),
                grads: g.b.as_slice().expect("contiguous"),
            });
        }
        opt.step(&mut blocks)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-site loss: `-ln p[target]` for categorical heads, `(pred - target)^2`
/// for continuous heads (both targets as produced by the masking step).
pub fn loss_per_head(predictions: &[Prediction], target: &[Value]) -> Vec<f64> {
    predictions
        .iter()
        .zip(target)
        .map(|(p, t)| match p {
            Prediction::Probs(p) => -p[t.state()].ln(),
            Prediction::Mean(m) => (m - t.as_f64()).powi(2),
        })
        .collect()
}

pub use checkpoint::Checkpoint;
