//! Time-series encoder (1-D ResNet-50 or ResNet-18), spectrogram encoder and
//! the six projection heads, all registered in one [`ParamStore`].
//!
//! Parameter names follow `Et.<stage>.<block>.<layer>.<tensor>`,
//! `Es.<block>.<layer>.<tensor>` and `heads.<id>.<layer>.<tensor>`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sleepssl_nn::ops::output_len;
use sleepssl_nn::{BatchNorm, Conv1d, Conv2d, Graph, Linear, Mode, ParamStore, RunningUpdate, Scalar, Tensor, Var};

use crate::epoching::EPOCH_SAMPLES;
use crate::error::{Error, Result};
use crate::views::StftConfig;

pub const PROJECTION_DIM: usize = 128;
pub const SPEC_FEATURE_DIM: usize = 64;
const SPEC_CHANNELS: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResNetVariant {
    ResNet50,
    ResNet18,
}

/// One convolution row of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvRow {
    pub kernel: usize,
    pub filters: usize,
    /// Stride of this row in the first repetition; later repetitions use 1.
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub name: &'static str,
    pub rows: Vec<ConvRow>,
    pub repeats: usize,
}

const fn row(kernel: usize, filters: usize, stride: usize, padding: usize) -> ConvRow {
    ConvRow {
        kernel,
        filters,
        stride,
        padding,
    }
}

pub const STEM_FILTERS: usize = 16;
pub const STEM_KERNEL: usize = 71;
pub const STEM_STRIDE: usize = 2;
pub const STEM_PADDING: usize = 35;

impl ResNetVariant {
    pub fn stages(self) -> Vec<StageSpec> {
        let names = ["conv1_x", "conv2_x", "conv3_x", "conv4_x"];
        let widths = [8, 16, 32, 64];
        (0..4)
            .map(|i| {
                let f = widths[i];
                let s = if i == 0 { 1 } else { 2 };
                match self {
                    ResNetVariant::ResNet50 => StageSpec {
                        name: names[i],
                        rows: vec![row(1, f, 1, 0), row(25, f, s, 12), row(1, 4 * f, 1, 0)],
                        repeats: [3, 4, 6, 3][i],
                    },
                    ResNetVariant::ResNet18 => StageSpec {
                        name: names[i],
                        rows: vec![row(25, f, 1, 12), row(25, f, s, 12)],
                        repeats: 2,
                    },
                }
            })
            .collect()
    }

    /// Channels of the final stage, i.e. the time feature dimension.
    pub fn feature_dim(self) -> usize {
        self.stages().last().unwrap().rows.last().unwrap().filters
    }

    pub fn name(self) -> &'static str {
        match self {
            ResNetVariant::ResNet50 => "resnet50",
            ResNetVariant::ResNet18 => "resnet18",
        }
    }

    /// `[C, L]` after the stem convolution, the stem pooling and every
    /// stage, computed from the layer geometry alone.
    pub fn expected_trace(self, len: usize) -> Result<Vec<[usize; 2]>> {
        let mut l = output_len("conv0", len, STEM_KERNEL, STEM_STRIDE, STEM_PADDING)?;
        let mut out = vec![[STEM_FILTERS, l]];
        l = output_len("maxpool0", l, STEM_KERNEL, STEM_STRIDE, STEM_PADDING)?;
        out.push([STEM_FILTERS, l]);
        for st in self.stages() {
            for r in &st.rows {
                l = output_len(st.name, l, r.kernel, r.stride, r.padding)?;
            }
            out.push([st.rows.last().unwrap().filters, l]);
        }
        Ok(out)
    }
}

impl fmt::Display for ResNetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResNetVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet50" | "resnet50_1d" => Ok(ResNetVariant::ResNet50),
            "resnet18" | "resnet18_1d" => Ok(ResNetVariant::ResNet18),
            other => Err(Error::InvalidArgument(format!("unknown encoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBn1d {
    conv: Conv1d,
    bn: BatchNorm,
}

impl ConvBn1d {
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<Var> {
        let h = self.conv.forward(g, store, x)?;
        Ok(self.bn.forward(g, store, h, updates)?)
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    layers: Vec<ConvBn1d>,
    shortcut: Option<ConvBn1d>,
}

impl ResidualBlock {
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h, updates)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(g, store, x, updates)?,
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }
}

/// Time-series encoder E_t.
#[derive(Debug, Clone)]
pub struct TimeEncoder {
    pub variant: ResNetVariant,
    stem: ConvBn1d,
    stages: Vec<Vec<ResidualBlock>>,
}

impl TimeEncoder {
    pub fn new<T: Scalar, R: rand::Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        variant: ResNetVariant,
        rng: &mut R,
    ) -> Self {
        let stem = ConvBn1d {
            conv: Conv1d::new(
                store,
                &format!("{prefix}.conv0"),
                1,
                STEM_FILTERS,
                STEM_KERNEL,
                STEM_STRIDE,
                STEM_PADDING,
                rng,
            ),
            bn: BatchNorm::new(store, &format!("{prefix}.bn0"), STEM_FILTERS),
        };
        let mut in_ch = STEM_FILTERS;
        let mut stages = Vec::new();
        for st in variant.stages() {
            let mut blocks = Vec::new();
            for rep in 0..st.repeats {
                let base = format!("{prefix}.{}.{rep}", st.name);
                let mut c = in_ch;
                let mut stride_total = 1;
                let mut layers = Vec::new();
                for (i, r) in st.rows.iter().enumerate() {
                    let stride = if rep == 0 { r.stride } else { 1 };
                    stride_total *= stride;
                    layers.push(ConvBn1d {
                        conv: Conv1d::new(
                            store,
                            &format!("{base}.conv{}", i + 1),
                            c,
                            r.filters,
                            r.kernel,
                            stride,
                            r.padding,
                            rng,
                        ),
                        bn: BatchNorm::new(store, &format!("{base}.bn{}", i + 1), r.filters),
                    });
                    c = r.filters;
                }
                let shortcut = (c != in_ch || stride_total != 1).then(|| ConvBn1d {
                    conv: Conv1d::new(store, &format!("{base}.down.conv"), in_ch, c, 1, stride_total, 0, rng),
                    bn: BatchNorm::new(store, &format!("{base}.down.bn"), c),
                });
                blocks.push(ResidualBlock { layers, shortcut });
                in_ch = c;
            }
            stages.push(blocks);
        }
        Self { variant, stem, stages }
    }

    pub fn feature_dim(&self) -> usize {
        self.variant.feature_dim()
    }

    /// Final stage output before pooling, plus `[B, C, L]` after the stem
    /// convolution, the stem pooling and every stage.
    pub fn forward_trace<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<(Var, Vec<Vec<usize>>)> {
        let shape = g.value(x).shape();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != EPOCH_SAMPLES {
            return Err(Error::Dimension(format!(
                "time encoder expects [B, 1, {EPOCH_SAMPLES}], got {shape:?}"
            )));
        }
        let mut trace = Vec::new();
        let h = self.stem.forward(g, store, x, updates)?;
        let h = g.relu(h);
        trace.push(g.value(h).shape().to_vec());
        let mut h = g.maxpool1d(h, STEM_KERNEL, STEM_STRIDE, STEM_PADDING)?;
        trace.push(g.value(h).shape().to_vec());
        for stage in &self.stages {
            for block in stage {
                h = block.forward(g, store, h, updates)?;
            }
            trace.push(g.value(h).shape().to_vec());
        }
        Ok((h, trace))
    }

    /// `[B, D]` features by global average pooling over length.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<Var> {
        let (h, _) = self.forward_trace(g, store, x, updates)?;
        Ok(g.global_avg_pool(h)?)
    }
}

/// Spectrogram encoder E_s: four conv3x3/batchnorm/relu/maxpool2x2 blocks
/// and global average pooling.
#[derive(Debug, Clone)]
pub struct SpecEncoder {
    blocks: Vec<(Conv2d, BatchNorm)>,
    pub input_shape: [usize; 2],
}

impl SpecEncoder {
    pub fn new<T: Scalar, R: rand::Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        stft: &StftConfig,
        rng: &mut R,
    ) -> Self {
        let mut c = 1;
        let blocks = SPEC_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let b = (
                    Conv2d::new(store, &format!("{prefix}.block{}.conv", i + 1), c, out, 3, 1, 1, rng),
                    BatchNorm::new(store, &format!("{prefix}.block{}.bn", i + 1), out),
                );
                c = out;
                b
            })
            .collect();
        Self {
            blocks,
            input_shape: [stft.bins(), stft.frames(EPOCH_SAMPLES)],
        }
    }

    pub fn feature_dim(&self) -> usize {
        SPEC_FEATURE_DIM
    }

    pub fn forward_trace<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<(Var, Vec<Vec<usize>>)> {
        let shape = g.value(x).shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2..] != self.input_shape {
            return Err(Error::Dimension(format!(
                "spectrogram encoder expects [B, 1, {}, {}], got {shape:?}",
                self.input_shape[0], self.input_shape[1]
            )));
        }
        let mut h = x;
        let mut trace = Vec::new();
        for (conv, bn) in &self.blocks {
            h = conv.forward(g, store, h)?;
            h = bn.forward(g, store, h, updates)?;
            h = g.relu(h);
            h = g.maxpool2d(h, 2, 2, 0)?;
            trace.push(g.value(h).shape().to_vec());
        }
        let f = g.global_avg_pool(h)?;
        trace.push(g.value(f).shape().to_vec());
        Ok((f, trace))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<Var> {
        Ok(self.forward_trace(g, store, x, updates)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadId {
    F1,
    F2,
    H1,
    H2,
    G1,
    G2,
}

impl HeadId {
    pub const ALL: [HeadId; 6] = [HeadId::F1, HeadId::F2, HeadId::H1, HeadId::H2, HeadId::G1, HeadId::G2];

    pub fn name(self) -> &'static str {
        ["f1", "f2", "h1", "h2", "g1", "g2"][self as usize]
    }
}

/// `Linear(in, in) -> BatchNorm -> ReLU -> Linear(in, 128)`.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
    pub in_dim: usize,
}

impl ProjectionHead {
    pub fn new<T: Scalar, R: rand::Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), in_dim, in_dim, rng),
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), in_dim),
            fc2: Linear::new(store, &format!("{prefix}.fc2"), in_dim, PROJECTION_DIM, rng),
            in_dim,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<Var> {
        let shape = g.value(x).shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::Dimension(format!(
                "projection head expects [B, {}], got {shape:?}",
                self.in_dim
            )));
        }
        let h = self.fc1.forward(g, store, x)?;
        let h = self.bn.forward(g, store, h, updates)?;
        let h = g.relu(h);
        Ok(self.fc2.forward(g, store, h)?)
    }
}

/// Which representation [`MultiViewModel::features`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Time,
    Spec,
    Concat,
}

impl View {
    pub fn tag(self) -> u8 {
        self as u8
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(View::Time),
            "spec" => Ok(View::Spec),
            "concat" => Ok(View::Concat),
            other => Err(Error::InvalidArgument(format!("unknown view `{other}`"))),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Time => "time",
            View::Spec => "spec",
            View::Concat => "concat",
        })
    }
}

/// Graph handles for the six projection outputs of one training batch.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub zt1: Var,
    pub zt2: Var,
    pub zs1: Var,
    pub zs2: Var,
    pub zf1: Var,
    pub zf2: Var,
}

impl ProjectionVars {
    pub fn as_array(&self) -> [Var; 6] {
        [self.zt1, self.zt2, self.zs1, self.zs2, self.zf1, self.zf2]
    }
}

/// E_t, E_s and the heads f1, f2 (time), h1, h2 (spectrogram) and g1, g2
/// (concatenation).
#[derive(Debug, Clone)]
pub struct MultiViewModel<T> {
    pub store: ParamStore<T>,
    pub time: TimeEncoder,
    pub spec: SpecEncoder,
    pub heads: Vec<ProjectionHead>,
    pub stft: StftConfig,
}

impl<T: Scalar> MultiViewModel<T> {
    pub fn new(variant: ResNetVariant, stft: StftConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let time = TimeEncoder::new(&mut store, "Et", variant, &mut rng);
        let spec = SpecEncoder::new(&mut store, "Es", &stft, &mut rng);
        let (td, sd) = (time.feature_dim(), spec.feature_dim());
        let heads = HeadId::ALL
            .iter()
            .map(|h| {
                let in_dim = match h {
                    HeadId::F1 | HeadId::F2 => td,
                    HeadId::H1 | HeadId::H2 => sd,
                    HeadId::G1 | HeadId::G2 => td + sd,
                };
                ProjectionHead::new(&mut store, &format!("heads.{}", h.name()), in_dim, &mut rng)
            })
            .collect();
        Self {
            store,
            time,
            spec,
            heads,
            stft,
        }
    }

    pub fn variant(&self) -> ResNetVariant {
        self.time.variant
    }

    pub fn head(&self, id: HeadId) -> &ProjectionHead {
        &self.heads[id as usize]
    }

    pub fn feature_dim(&self, view: View) -> usize {
        match view {
            View::Time => self.time.feature_dim(),
            View::Spec => self.spec.feature_dim(),
            View::Concat => self.time.feature_dim() + self.spec.feature_dim(),
        }
    }

    /// Encoders and heads on the four view batches: `t*` are `[B,1,3000]`,
    /// `s*` are `[B,1,bins,frames]`.
    pub fn forward_views(
        &self,
        g: &mut Graph<T>,
        t1: Var,
        t2: Var,
        s1: Var,
        s2: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<ProjectionVars> {
        let st = &self.store;
        let et1 = self.time.forward(g, st, t1, updates)?;
        let et2 = self.time.forward(g, st, t2, updates)?;
        let es1 = self.spec.forward(g, st, s1, updates)?;
        let es2 = self.spec.forward(g, st, s2, updates)?;
        let c1 = g.concat(et1, es1)?;
        let c2 = g.concat(et2, es2)?;
        Ok(ProjectionVars {
            zt1: self.head(HeadId::F1).forward(g, st, et1, updates)?,
            zt2: self.head(HeadId::F2).forward(g, st, et2, updates)?,
            zs1: self.head(HeadId::H1).forward(g, st, es1, updates)?,
            zs2: self.head(HeadId::H2).forward(g, st, es2, updates)?,
            zf1: self.head(HeadId::G1).forward(g, st, c1, updates)?,
            zf2: self.head(HeadId::G2).forward(g, st, c2, updates)?,
        })
    }

    /// Inference-mode representation of one batch.
    pub fn features(&self, view: View, time: Option<Tensor<T>>, spec: Option<Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::new(Mode::Eval);
        let mut updates = Vec::new();
        let st = &self.store;
        let mut encode_time = |g: &mut Graph<T>, x: Option<Tensor<T>>| -> Result<Var> {
            let x = x.ok_or_else(|| Error::InvalidArgument("time batch required".into()))?;
            let v = g.input(x);
            self.time.forward(g, st, v, &mut updates)
        };
        let out = match view {
            View::Time => encode_time(&mut g, time)?,
            View::Spec => {
                let x = spec.ok_or_else(|| Error::InvalidArgument("spectrogram batch required".into()))?;
                let v = g.input(x);
                self.spec.forward(&mut g, st, v, &mut Vec::new())?
            }
            View::Concat => {
                let t = encode_time(&mut g, time)?;
                let x = spec.ok_or_else(|| Error::InvalidArgument("spectrogram batch required".into()))?;
                let v = g.input(x);
                let s = self.spec.forward(&mut g, st, v, &mut Vec::new())?;
                g.concat(t, s)?
            }
        };
        Ok(g.value(out).clone())
    }

    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.store.count_trainable(prefix)
    }
}

/// Trainable parameter count of a time encoder variant.
pub fn time_encoder_parameters(variant: ResNetVariant) -> usize {
    let mut store = ParamStore::<f32>::new();
    TimeEncoder::new(&mut store, "Et", variant, &mut ChaCha8Rng::seed_from_u64(0));
    store.count_trainable("Et.")
}
