//! The apprentice: a hexagonal-filter CNN with two masked softmax policy
//! heads (one per player to move) and optional sigmoid value heads.
//!
//! Gradients are computed layer by layer by hand; there is no autodiff
//! machinery. All arithmetic is f64. Checkpoints store f32.

pub mod checkpoint;
pub mod loss;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encode::{encode, EncodedState, CHANNELS, PAD};
use crate::error::{ExitError, Result};
use crate::hex::{BoardState, Color};

pub use loss::{loss_cat, loss_multitask, loss_tpt, loss_value, LOG_CLAMP};
pub use train::{train, Adam, AdamConfig, EarlyStopping, StopDecision, TrainConfig, TrainReport};

/// 3x3 taps kept by a hexagonal filter: everything but the (-1,-1) and
/// (+1,+1) corners.
const HEX_TAPS: [(usize, usize); 7] = [(0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)];
const POINT_TAPS: [(usize, usize); 1] = [(0, 0)];
/// Kernel entries that must stay zero in every hex kernel.
pub const MASKED_TAPS: [(usize, usize); 2] = [(0, 0), (2, 2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    /// Zero-padded 3x3 hexagonal filter; keeps the spatial shape.
    PaddedHex,
    /// Unpadded 3x3 hexagonal filter; shrinks each side by two.
    ValidHex,
    /// 1x1 filter.
    Pointwise,
}

impl ConvKind {
    pub fn kernel(self) -> usize {
        match self {
            ConvKind::Pointwise => 1,
            _ => 3,
        }
    }

    fn pad(self) -> usize {
        match self {
            ConvKind::PaddedHex => 1,
            _ => 0,
        }
    }

    fn taps(self) -> &'static [(usize, usize)] {
        match self {
            ConvKind::Pointwise => &POINT_TAPS,
            _ => &HEX_TAPS,
        }
    }

    pub fn out_side(self, side: usize) -> usize {
        match self {
            ConvKind::ValidHex => side.saturating_sub(2),
            _ => side,
        }
    }

    fn code(self) -> u8 {
        match self {
            ConvKind::PaddedHex => 0,
            ConvKind::ValidHex => 1,
            ConvKind::Pointwise => 2,
        }
    }

    fn from_code(code: u8) -> Option<ConvKind> {
        match code {
            0 => Some(ConvKind::PaddedHex),
            1 => Some(ConvKind::ValidHex),
            2 => Some(ConvKind::Pointwise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: ConvKind,
    pub filters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    Policy,
    PolicyValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub board_size: usize,
    pub layers: Vec<LayerSpec>,
    pub heads: Heads,
    pub init_seed: u64,
    /// Run the data-dependent variance rescaling pass after initialisation.
    pub variance_rescale: bool,
}

impl NetworkConfig {
    /// The 13-layer, 64-filter schedule: layers 1-8 and 12 padded hex,
    /// 9-10 unpadded hex, 11 and 13 pointwise.
    pub fn paper(board_size: usize) -> Self {
        use ConvKind::*;
        let kinds = [
            PaddedHex, PaddedHex, PaddedHex, PaddedHex, PaddedHex, PaddedHex, PaddedHex, PaddedHex, ValidHex,
            ValidHex, Pointwise, PaddedHex, Pointwise,
        ];
        NetworkConfig {
            board_size,
            layers: kinds.iter().map(|&kind| LayerSpec { kind, filters: 64 }).collect(),
            heads: Heads::Policy,
            init_seed: 0,
            variance_rescale: true,
        }
    }

    /// A small network with the same shape progression, sized for desk runs.
    pub fn desk(board_size: usize) -> Self {
        use ConvKind::*;
        let kinds = [PaddedHex, PaddedHex, ValidHex, ValidHex, Pointwise];
        NetworkConfig {
            board_size,
            layers: kinds.iter().map(|&kind| LayerSpec { kind, filters: 16 }).collect(),
            heads: Heads::Policy,
            init_seed: 0,
            variance_rescale: true,
        }
    }

    pub fn with_heads(mut self, heads: Heads) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn input_side(&self) -> usize {
        self.board_size + 2 * PAD
    }

    /// Spatial side length after each layer.
    pub fn sides(&self) -> Vec<usize> {
        let mut side = self.input_side();
        let mut out = vec![side];
        for layer in &self.layers {
            side = layer.kind.out_side(side);
            out.push(side);
        }
        out
    }

    pub fn feature_channels(&self) -> usize {
        self.layers.last().map_or(CHANNELS, |l| l.filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ExitError::Config("network needs at least one conv layer".into()));
        }
        if self.layers.iter().any(|l| l.filters == 0) {
            return Err(ExitError::Config("conv layer with zero filters".into()));
        }
        let mut side = self.input_side();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind == ConvKind::ValidHex && side < 3 {
                return Err(ExitError::Config(format!("layer {} shrinks the map below 1x1", i + 1)));
            }
            side = layer.kind.out_side(side);
        }
        if side != self.board_size {
            return Err(ExitError::Config(format!(
                "layer schedule ends at {side}x{side}, heads need {0}x{0}",
                self.board_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { name: name.into(), shape, data: vec![0.0; len] }
    }
}

/// Named parameter tensors in a fixed order: per conv layer a weight
/// `[out, in, k, k]` and a per-position bias `[out, h, w]`; then policy
/// head 0/1 weight `[n*n, features]` and bias `[n*n]`; then, with value
/// heads, value head 0/1 weight `[features]` and bias `[1]`. Head 0 is
/// used when Black is to move.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.name.clone(), t.shape.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Rounds every value through f32, matching what a checkpoint stores.
    pub fn quantize_f32(&mut self) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Network output for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    /// Distribution over the n*n cells, zero on illegal cells.
    pub policy: Vec<f64>,
    /// Win probability for the player to move, when value heads exist.
    pub value: Option<f64>,
}

/// One training example. `policy_target` is dense over the n*n cells and
/// need not be normalised (REINFORCE uses signed, scaled one-hots).
#[derive(Debug, Clone)]
pub struct Example {
    pub input: EncodedState,
    pub to_move: Color,
    pub mask: Vec<bool>,
    pub policy_target: Vec<f64>,
    pub value_target: Option<f64>,
}

impl Example {
    pub fn from_state(state: &BoardState, policy_target: Vec<f64>, value_target: Option<f64>) -> Example {
        Example {
            input: encode(state),
            to_move: state.to_move(),
            mask: state.legal_mask(),
            policy_target,
            value_target,
        }
    }
}

struct Trace {
    /// acts[0] is the input; acts[l + 1] the output of conv layer l.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    policy: Vec<f64>,
    value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    params: Params,
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `logits / tau` restricted to `mask`; illegal cells get 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool], tau: f64) -> Result<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ExitError::Network("mask has no legal cell".into()));
    }
    let mut out: Vec<f64> =
        logits.iter().zip(mask).map(|(&l, &m)| if m { (l / tau - max).exp() } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Copies `planes` planes of side `side` into zero-bordered planes of side
/// `side + 2 pad`.
fn pad_planes(x: &[f64], planes: usize, side: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return x.to_vec();
    }
    let wide = side + 2 * pad;
    let mut out = vec![0.0; planes * wide * wide];
    for p in 0..planes {
        for y in 0..side {
            let src = &x[(p * side + y) * side..(p * side + y + 1) * side];
            let start = p * wide * wide + (y + pad) * wide + pad;
            out[start..start + side].copy_from_slice(src);
        }
    }
    out
}

// Convolutions run on padded planes flattened row-major. An output pixel
// (y, x) lives at y * wide + x of a "wide" buffer, so every tap is one
// contiguous multiply-add over the whole plane; the columns past the
// output width are scratch and get dropped.

fn conv_forward(x: &[f64], cin: usize, side_in: usize, weight: &[f64], bias: &[f64], cout: usize, kind: ConvKind) -> Vec<f64> {
    let pad = kind.pad();
    let k = kind.kernel();
    let wide = side_in + 2 * pad;
    let so = kind.out_side(side_in);
    let span = (so - 1) * wide + so;
    let xp = pad_planes(x, cin, side_in, pad);
    let mut acc = vec![0.0; span];
    let mut out = bias.to_vec();
    for o in 0..cout {
        acc.fill(0.0);
        for i in 0..cin {
            let plane = &xp[i * wide * wide..(i + 1) * wide * wide];
            for &(ky, kx) in kind.taps() {
                let w = weight[((o * cin + i) * k + ky) * k + kx];
                let off = ky * wide + kx;
                for (a, v) in acc.iter_mut().zip(&plane[off..off + span]) {
                    *a += w * v;
                }
            }
        }
        for y in 0..so {
            let dst = &mut out[(o * so + y) * so..(o * so + y + 1) * so];
            for (d, a) in dst.iter_mut().zip(&acc[y * wide..y * wide + so]) {
                *d += a;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    cin: usize,
    side_in: usize,
    weight: &[f64],
    dz: &[f64],
    cout: usize,
    kind: ConvKind,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let pad = kind.pad();
    let k = kind.kernel();
    let wide = side_in + 2 * pad;
    let so = kind.out_side(side_in);
    let span = (so - 1) * wide + so;
    for (db, g) in d_bias.iter_mut().zip(dz) {
        *db += g;
    }
    let xp = pad_planes(x, cin, side_in, pad);
    let mut d_padded = d_input.as_ref().map(|_| vec![0.0; cin * wide * wide]);
    let mut dz_wide = vec![0.0; span];
    for o in 0..cout {
        for y in 0..so {
            dz_wide[y * wide..y * wide + so].copy_from_slice(&dz[(o * so + y) * so..(o * so + y + 1) * so]);
        }
        for i in 0..cin {
            let plane = &xp[i * wide * wide..(i + 1) * wide * wide];
            for &(ky, kx) in kind.taps() {
                let widx = ((o * cin + i) * k + ky) * k + kx;
                let off = ky * wide + kx;
                d_weight[widx] += dz_wide.iter().zip(&plane[off..off + span]).map(|(g, v)| g * v).sum::<f64>();
                if let Some(dp) = d_padded.as_deref_mut() {
                    let w = weight[widx];
                    let dst = &mut dp[i * wide * wide + off..i * wide * wide + off + span];
                    for (d, g) in dst.iter_mut().zip(&dz_wide) {
                        *d += w * g;
                    }
                }
            }
        }
    }
    if let (Some(d_in), Some(dp)) = (d_input, d_padded) {
        for i in 0..cin {
            for y in 0..side_in {
                let src = i * wide * wide + (y + pad) * wide + pad;
                d_in[(i * side_in + y) * side_in..(i * side_in + y + 1) * side_in].copy_from_slice(&dp[src..src + side_in]);
            }
        }
    }
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Network> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut tensors = Vec::new();
        let mut cin = CHANNELS;
        let sides = config.sides();
        for (l, layer) in config.layers.iter().enumerate() {
            let k = layer.kind.kernel();
            let fan_in = (cin * layer.kind.taps().len()) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            let mut w = Tensor::zeros(format!("conv{l}.weight"), vec![layer.filters, cin, k, k]);
            for o in 0..layer.filters {
                for i in 0..cin {
                    for &(ky, kx) in layer.kind.taps() {
                        w.data[((o * cin + i) * k + ky) * k + kx] = normal.sample(&mut rng);
                    }
                }
            }
            tensors.push(w);
            let side = sides[l + 1];
            tensors.push(Tensor::zeros(format!("conv{l}.bias"), vec![layer.filters, side, side]));
            cin = layer.filters;
        }
        let cells = config.board_size * config.board_size;
        let features = config.feature_channels() * cells;
        let head_normal = Normal::new(0.0, (1.0 / features as f64).sqrt()).expect("finite std");
        for h in 0..2 {
            let mut w = Tensor::zeros(format!("policy{h}.weight"), vec![cells, features]);
            for x in &mut w.data {
                *x = head_normal.sample(&mut rng);
            }
            tensors.push(w);
            tensors.push(Tensor::zeros(format!("policy{h}.bias"), vec![cells]));
        }
        if config.heads == Heads::PolicyValue {
            for h in 0..2 {
                let mut w = Tensor::zeros(format!("value{h}.weight"), vec![features]);
                for x in &mut w.data {
                    *x = head_normal.sample(&mut rng);
                }
                tensors.push(w);
                tensors.push(Tensor::zeros(format!("value{h}.bias"), vec![1]));
            }
        }
        Ok(Network { config, params: Params { tensors } })
    }

    /// Builds a network around existing parameters, checking every shape.
    pub fn from_params(config: NetworkConfig, params: Params) -> Result<Network> {
        let template = Network::new(NetworkConfig { variance_rescale: false, ..config.clone() })?;
        if template.params.tensors.len() != params.tensors.len() {
            return Err(ExitError::Format(format!(
                "expected {} tensors, found {}",
                template.params.tensors.len(),
                params.tensors.len()
            )));
        }
        for (a, b) in template.params.tensors.iter().zip(&params.tensors) {
            if a.name != b.name || a.shape != b.shape || b.data.len() != a.data.len() {
                return Err(ExitError::Format(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        Ok(Network { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn has_value_heads(&self) -> bool {
        self.config.heads == Heads::PolicyValue
    }

    pub fn board_size(&self) -> usize {
        self.config.board_size
    }

    fn conv_index(l: usize) -> usize {
        2 * l
    }

    fn policy_index(&self, head: usize) -> usize {
        2 * self.config.layers.len() + 2 * head
    }

    fn value_index(&self, head: usize) -> usize {
        2 * self.config.layers.len() + 4 + 2 * head
    }

    /// Zeroes the masked corner taps of every hexagonal kernel.
    pub fn enforce_hex_mask(&mut self) {
        let mut cin = CHANNELS;
        for (l, layer) in self.config.layers.iter().enumerate() {
            if layer.kind != ConvKind::Pointwise {
                let w = &mut self.params.tensors[Self::conv_index(l)].data;
                for o in 0..layer.filters {
                    for i in 0..cin {
                        for &(ky, kx) in &MASKED_TAPS {
                            w[((o * cin + i) * 3 + ky) * 3 + kx] = 0.0;
                        }
                    }
                }
            }
            cin = layer.filters;
        }
    }

    fn check_input(&self, x: &EncodedState, mask: &[bool]) -> Result<()> {
        let cells = self.config.board_size * self.config.board_size;
        if x.board_size != self.config.board_size || x.data.len() != CHANNELS * x.side() * x.side() {
            return Err(ExitError::Network(format!(
                "input for board size {} given to a network for size {}",
                x.board_size, self.config.board_size
            )));
        }
        if mask.len() != cells {
            return Err(ExitError::Network(format!("mask has {} cells, expected {cells}", mask.len())));
        }
        Ok(())
    }

    fn forward_trace(&self, x: &EncodedState, to_move: Color, mask: &[bool], tau: f64) -> Result<Trace> {
        self.check_input(x, mask)?;
        let sides = self.config.sides();
        let mut acts = Vec::with_capacity(self.config.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.config.layers.len());
        acts.push(x.data.clone());
        let mut cin = CHANNELS;
        for (l, layer) in self.config.layers.iter().enumerate() {
            let w = &self.params.tensors[Self::conv_index(l)].data;
            let b = &self.params.tensors[Self::conv_index(l) + 1].data;
            let z = conv_forward(&acts[l], cin, sides[l], w, b, layer.filters, layer.kind);
            let a: Vec<f64> = z.iter().map(|&v| elu(v)).collect();
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ExitError::NonFinite { layer: l + 1 });
            }
            pre.push(z);
            acts.push(a);
            cin = layer.filters;
        }
        let features = acts.last().expect("at least one layer");
        let head = to_move.index();
        let pw = &self.params.tensors[self.policy_index(head)];
        let pb = &self.params.tensors[self.policy_index(head) + 1].data;
        let nf = features.len();
        let logits: Vec<f64> = (0..pb.len())
            .map(|c| {
                let row = &pw.data[c * nf..(c + 1) * nf];
                pb[c] + row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
            })
            .collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ExitError::NonFinite { layer: self.config.layers.len() + 1 });
        }
        let policy = masked_softmax(&logits, mask, tau)?;
        let value = if self.has_value_heads() {
            let vw = &self.params.tensors[self.value_index(head)].data;
            let vb = self.params.tensors[self.value_index(head) + 1].data[0];
            let u = vb + vw.iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
            if !u.is_finite() {
                return Err(ExitError::NonFinite { layer: self.config.layers.len() + 1 });
            }
            Some(sigmoid(u))
        } else {
            None
        };
        Ok(Trace { acts, pre, policy, value })
    }

    /// Evaluates one encoded position. The head matching `to_move` is used.
    pub fn forward(&self, x: &EncodedState, to_move: Color, mask: &[bool], tau: f64) -> Result<NetOutput> {
        let t = self.forward_trace(x, to_move, mask, tau)?;
        Ok(NetOutput { policy: t.policy, value: t.value })
    }

    pub fn evaluate(&self, state: &BoardState, tau: f64) -> Result<NetOutput> {
        self.forward(&encode(state), state.to_move(), &state.legal_mask(), tau)
    }

    /// Evaluates a batch; every item goes through the same arithmetic as
    /// [`Network::forward`], so results do not depend on batch composition.
    pub fn forward_batch(&self, batch: &[(EncodedState, Color, Vec<bool>)], tau: f64) -> Result<Vec<NetOutput>> {
        batch.iter().map(|(x, c, m)| self.forward(x, *c, m, tau)).collect()
    }

    /// Pre-activation outputs of every conv layer (for variance checks).
    pub fn layer_preactivations(&self, x: &EncodedState) -> Result<Vec<Vec<f64>>> {
        let cells = self.config.board_size * self.config.board_size;
        Ok(self.forward_trace(x, Color::Black, &vec![true; cells], 1.0)?.pre)
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        for (cell, (&t, &m)) in ex.policy_target.iter().zip(&ex.mask).enumerate() {
            if t != 0.0 && !m {
                return Err(ExitError::TargetSupport { cell });
            }
        }
        if ex.policy_target.len() != ex.mask.len() {
            return Err(ExitError::Network("policy target length differs from mask".into()));
        }
        if self.has_value_heads() && ex.value_target.is_none() {
            return Err(ExitError::Config("value-headed network needs a value target for every example".into()));
        }
        Ok(())
    }

    fn example_loss(&self, ex: &Example, trace: &Trace) -> f64 {
        let policy_loss: f64 = ex
            .policy_target
            .iter()
            .zip(&trace.policy)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, p)| -t * p.max(LOG_CLAMP).ln())
            .sum();
        let value_loss = match (trace.value, ex.value_target) {
            (Some(v), Some(z)) => loss_value(v, z),
            _ => 0.0,
        };
        policy_loss + value_loss
    }

    /// Mean loss over a batch (policy cross-entropy plus, with value heads,
    /// binary cross-entropy on the value).
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(ExitError::Network("empty batch".into()));
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let trace = self.forward_trace(&ex.input, ex.to_move, &ex.mask, 1.0)?;
            total += self.example_loss(ex, &trace);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[Example]) -> Result<(f64, Params)> {
        self.loss_and_gradient_tau(batch, 1.0)
    }

    pub fn loss_and_gradient_tau(&self, batch: &[Example], tau: f64) -> Result<(f64, Params)> {
        let refs: Vec<&Example> = batch.iter().collect();
        self.loss_and_gradient_refs(&refs, tau)
    }

    pub fn loss_and_gradient_refs(&self, batch: &[&Example], tau: f64) -> Result<(f64, Params)> {
        if batch.is_empty() {
            return Err(ExitError::Network("empty batch".into()));
        }
        let mut grad = self.params.zeros_like();
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &ex in batch {
            self.check_example(ex)?;
            let trace = self.forward_trace(&ex.input, ex.to_move, &ex.mask, tau)?;
            total += self.example_loss(ex, &trace);
            self.accumulate_gradient(ex, &trace, tau, scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    fn accumulate_gradient(&self, ex: &Example, trace: &Trace, tau: f64, scale: f64, grad: &mut Params) {
        let head = ex.to_move.index();
        let features = trace.acts.last().expect("at least one layer");
        let nf = features.len();
        let target_mass: f64 = ex.policy_target.iter().sum();
        let mut d_features = vec![0.0; nf];

        // Policy head: d/dlogit = (p * sum(t) - t) / tau on legal cells.
        let pi = self.policy_index(head);
        let d_logits: Vec<f64> = trace
            .policy
            .iter()
            .zip(&ex.policy_target)
            .zip(&ex.mask)
            .map(|((&p, &t), &m)| if m { scale * (p * target_mass - t) / tau } else { 0.0 })
            .collect();
        {
            let w = &self.params.tensors[pi].data;
            for (c, &g) in d_logits.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w[c * nf..(c + 1) * nf];
                for (df, wv) in d_features.iter_mut().zip(row) {
                    *df += g * wv;
                }
            }
            let dw = &mut grad.tensors[pi].data;
            for (c, &g) in d_logits.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, f) in dw[c * nf..(c + 1) * nf].iter_mut().zip(features) {
                    *d += g * f;
                }
            }
            for (d, g) in grad.tensors[pi + 1].data.iter_mut().zip(&d_logits) {
                *d += g;
            }
        }

        if let (Some(v), Some(z)) = (trace.value, ex.value_target) {
            let vi = self.value_index(head);
            let du = scale * (v - z);
            let w = &self.params.tensors[vi].data;
            for (df, wv) in d_features.iter_mut().zip(w) {
                *df += du * wv;
            }
            for (d, f) in grad.tensors[vi].data.iter_mut().zip(features) {
                *d += du * f;
            }
            grad.tensors[vi + 1].data[0] += du;
        }

        let sides = self.config.sides();
        let mut d_act = d_features;
        for l in (0..self.config.layers.len()).rev() {
            let layer = self.config.layers[l];
            let cin = if l == 0 { CHANNELS } else { self.config.layers[l - 1].filters };
            let dz: Vec<f64> = d_act.iter().zip(&trace.pre[l]).map(|(g, &z)| g * elu_grad(z)).collect();
            let mut d_input = if l > 0 { Some(vec![0.0; cin * sides[l] * sides[l]]) } else { None };
            let (wi, bi) = (Self::conv_index(l), Self::conv_index(l) + 1);
            let (left, right) = grad.tensors.split_at_mut(bi);
            conv_backward(
                &trace.acts[l],
                cin,
                sides[l],
                &self.params.tensors[wi].data,
                &dz,
                layer.filters,
                layer.kind,
                &mut left[wi].data,
                &mut right[0].data,
                d_input.as_deref_mut(),
            );
            match d_input {
                Some(d) => d_act = d,
                None => break,
            }
        }
    }

    /// Scales each conv layer's weights so its pre-activation output has
    /// unit variance over the calibration inputs. Layers are processed in
    /// order so later layers see already-normalised inputs.
    pub fn rescale_variance(&mut self, calibration: &[EncodedState]) -> Result<()> {
        if calibration.is_empty() {
            return Ok(());
        }
        for l in 0..self.config.layers.len() {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut count = 0usize;
            for x in calibration {
                let pre = self.layer_preactivations(x)?;
                for &v in &pre[l] {
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                }
            }
            let mean = sum / count as f64;
            let var = sum_sq / count as f64 - mean * mean;
            if var > 1e-12 && var.is_finite() {
                let factor = 1.0 / var.sqrt();
                for w in &mut self.params.tensors[Self::conv_index(l)].data {
                    *w *= factor;
                }
                for b in &mut self.params.tensors[Self::conv_index(l) + 1].data {
                    *b *= factor;
                }
            }
        }
        Ok(())
    }

    /// Builds the network and, when configured, rescales it on a seeded
    /// calibration batch of random positions.
    pub fn initialised(config: NetworkConfig) -> Result<Network> {
        let mut net = Network::new(config)?;
        if net.config.variance_rescale {
            let calibration = calibration_batch(net.config.board_size, 32, net.config.init_seed);
            net.rescale_variance(&calibration)?;
        }
        Ok(net)
    }
}

/// Random positions of varied length used to calibrate layer variances.
pub fn calibration_batch(board_size: usize, count: usize, seed: u64) -> Vec<EncodedState> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
    (0..count)
        .map(|_| {
            let mut s = BoardState::new(board_size).expect("validated board size");
            let mut cells: Vec<usize> = (0..board_size * board_size).collect();
            cells.shuffle(&mut rng);
            let plies = rng.random_range(0..cells.len());
            for &c in cells.iter().take(plies) {
                if s.is_terminal() {
                    break;
                }
                s.place(c);
            }
            encode(&s)
        })
        .collect()
}
