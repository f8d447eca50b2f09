//! The three model families, all regressing (steering angle, speed):
//!
//! - IO: image backbone → FC head.
//! - PCM: image backbone + depth-map backbone → concatenation → fused FC
//!   head. The depth map comes from the spherical cloud projection.
//! - PN: image backbone + PointNet-style cloud branch (shared per-point
//!   MLP, global max) → concatenation → fused FC head.
//!
//! A model is a spec plus a flat parameter list in canonical order; the
//! spec alone determines every layer shape, so checkpoints only need to
//! store the spec and the raw parameter data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::ProjectionConfig;
use crate::tensor::{NodeId, Tape, Tensor};

/// Model output: angle in radians (positive = left turn), speed
/// normalized to [0, 1] against the configured maximum. The speed output
/// is sigmoid-squashed; the angle is a raw linear output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub angle_rad: f64,
    pub speed_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Io,
    Pcm,
    Pn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Io => write!(f, "io"),
            ModelKind::Pcm => write!(f, "pcm"),
            ModelKind::Pn => write!(f, "pn"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneVariant {
    /// The publicly known 5-conv self-driving layout: 24/36/48/64/64
    /// kernels (5×5 stride 2 then 3×3 stride 1) and FCs 100/50/10, fixed
    /// to 3×66×200 input.
    Nvidia,
    /// Small conv blocks (3×3 conv, relu, 2×2 max pool) with configurable
    /// widths, for desk-scale inputs.
    TinyConv,
}

/// CNN feature extractor description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub variant: BackboneVariant,
    /// Input shape (C, H, W).
    pub in_shape: [usize; 3],
    /// Output channels per conv layer (fixed for the nvidia variant).
    pub conv_widths: Vec<usize>,
    /// Fully connected widths after flattening; the last is the feature
    /// dimension (the flatten size when empty).
    pub fc_widths: Vec<usize>,
}

pub const NVIDIA_INPUT: [usize; 3] = [3, 66, 200];
const NVIDIA_CONVS: [usize; 5] = [24, 36, 48, 64, 64];
const NVIDIA_FCS: [usize; 3] = [100, 50, 10];

impl BackboneSpec {
    pub fn nvidia() -> Self {
        BackboneSpec {
            variant: BackboneVariant::Nvidia,
            in_shape: NVIDIA_INPUT,
            conv_widths: NVIDIA_CONVS.to_vec(),
            fc_widths: NVIDIA_FCS.to_vec(),
        }
    }

    pub fn tiny(in_shape: [usize; 3], conv_widths: Vec<usize>, fc_widths: Vec<usize>) -> Self {
        BackboneSpec {
            variant: BackboneVariant::TinyConv,
            in_shape,
            conv_widths,
            fc_widths,
        }
    }

    /// Resolves the full layer plan, validating that every intermediate
    /// shape stays positive.
    pub fn plan(&self) -> Result<BackbonePlan> {
        match self.variant {
            BackboneVariant::Nvidia => {
                if self.in_shape != NVIDIA_INPUT {
                    return Err(Error::Config(format!(
                        "nvidia backbone requires input {NVIDIA_INPUT:?}, got {:?}",
                        self.in_shape
                    )));
                }
                if self.conv_widths != NVIDIA_CONVS || self.fc_widths != NVIDIA_FCS {
                    return Err(Error::Config(
                        "nvidia backbone has a fixed layer table".into(),
                    ));
                }
            }
            BackboneVariant::TinyConv => {
                if self.conv_widths.is_empty() {
                    return Err(Error::Config(
                        "tinyconv backbone needs at least one conv width".into(),
                    ));
                }
                if self.conv_widths.iter().chain(&self.fc_widths).any(|&w| w == 0) {
                    return Err(Error::Config("layer widths must be positive".into()));
                }
            }
        }
        let mut convs = Vec::new();
        let (mut c, mut h, mut w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "backbone input shape must be positive, got {:?}",
                self.in_shape
            )));
        }
        for (li, &out_c) in self.conv_widths.iter().enumerate() {
            let (k, stride, pool) = match self.variant {
                BackboneVariant::Nvidia => {
                    if li < 3 {
                        (5, 2, None)
                    } else {
                        (3, 1, None)
                    }
                }
                BackboneVariant::TinyConv => (3, 1, Some((2usize, 2usize))),
            };
            if k > h || k > w {
                return Err(Error::Config(format!(
                    "conv layer {li}: {k}x{k} kernel exceeds {h}x{w} input"
                )));
            }
            let mut oh = (h - k) / stride + 1;
            let mut ow = (w - k) / stride + 1;
            let mut applied_pool = None;
            if let Some((win, pstride)) = pool {
                if win <= oh && win <= ow {
                    applied_pool = Some((win, pstride));
                    oh = (oh - win) / pstride + 1;
                    ow = (ow - win) / pstride + 1;
                }
            }
            convs.push(ConvLayerDims {
                in_c: c,
                out_c,
                k,
                stride,
                pool: applied_pool,
            });
            c = out_c;
            h = oh;
            w = ow;
        }
        let flatten = c * h * w;
        let mut fcs = Vec::new();
        let mut dim = flatten;
        for &width in &self.fc_widths {
            fcs.push((dim, width));
            dim = width;
        }
        Ok(BackbonePlan {
            convs,
            flatten,
            fcs,
            feature_dim: dim,
        })
    }

    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.plan()?.feature_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerDims {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pool: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackbonePlan {
    pub convs: Vec<ConvLayerDims>,
    pub flatten: usize,
    pub fcs: Vec<(usize, usize)>,
    pub feature_dim: usize,
}

impl BackbonePlan {
    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .convs
            .iter()
            .map(|c| c.out_c * c.in_c * c.k * c.k + c.out_c)
            .sum();
        let fc: usize = self.fcs.iter().map(|&(i, o)| i * o + o).sum();
        conv + fc
    }
}

/// Shared per-point MLP widths; the global feature dimension is the last
/// width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointNetSpec {
    pub mlp_widths: Vec<usize>,
}

impl Default for PointNetSpec {
    fn default() -> Self {
        PointNetSpec {
            mlp_widths: vec![64, 64, 128, 1024],
        }
    }
}

impl PointNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mlp_widths.is_empty() || self.mlp_widths.contains(&0) {
            return Err(Error::Config(
                "pointnet mlp widths must be nonempty and positive".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.mlp_widths.last().unwrap_or(&0)
    }
}

/// Feature-fusion head: one hidden FC layer over the concatenated branch
/// features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub hidden_width: usize,
}

impl Default for FusionSpec {
    fn default() -> Self {
        FusionSpec { hidden_width: 256 }
    }
}

impl FusionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::Config("fusion hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Input preparation and output denormalization contract carried with the
/// model so checkpoints are self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Speed denormalizer: predictions in [0, 1] map to [0, max] km/h.
    pub max_speed_kmh: f64,
    /// Cloud → depth-map projection (PCM only).
    pub projection: Option<ProjectionConfig>,
    /// Fixed cloud size fed to the PointNet branch (PN only).
    pub num_points: usize,
    /// Divisor applied to raw point coordinates before the PointNet
    /// branch; keeps absolute distances readable at unit scale.
    pub cloud_scale_m: f64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            max_speed_kmh: 60.0,
            projection: None,
            num_points: 16384,
            cloud_scale_m: 120.0,
        }
    }
}

/// Complete serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub image: BackboneSpec,
    pub depth: Option<BackboneSpec>,
    pub pointnet: Option<PointNetSpec>,
    pub fusion: Option<FusionSpec>,
    pub pipeline: PipelineSpec,
}

impl ModelSpec {
    /// Shapes of every parameter tensor in canonical order.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::new();
        let mut push_backbone = |spec: &BackboneSpec| -> Result<usize> {
            let plan = spec.plan()?;
            for c in &plan.convs {
                shapes.push(vec![c.out_c, c.in_c, c.k, c.k]);
                shapes.push(vec![c.out_c]);
            }
            for &(i, o) in &plan.fcs {
                shapes.push(vec![i, o]);
                shapes.push(vec![o]);
            }
            Ok(plan.feature_dim)
        };
        let img_dim = push_backbone(&self.image)?;
        let mut head_in = img_dim;
        match self.kind {
            ModelKind::Io => {}
            ModelKind::Pcm => {
                let depth = self
                    .depth
                    .as_ref()
                    .ok_or_else(|| Error::Config("pcm model needs a depth backbone".into()))?;
                let depth_dim = push_backbone(depth)?;
                let fusion = self.fusion.unwrap_or_default();
                shapes.push(vec![img_dim + depth_dim, fusion.hidden_width]);
                shapes.push(vec![fusion.hidden_width]);
                head_in = fusion.hidden_width;
            }
            ModelKind::Pn => {
                let pn = self
                    .pointnet
                    .as_ref()
                    .ok_or_else(|| Error::Config("pn model needs a pointnet spec".into()))?;
                pn.validate()?;
                let mut dim = 3;
                for &w in &pn.mlp_widths {
                    shapes.push(vec![dim, w]);
                    shapes.push(vec![w]);
                    dim = w;
                }
                let fusion = self.fusion.unwrap_or_default();
                shapes.push(vec![img_dim + dim, fusion.hidden_width]);
                shapes.push(vec![fusion.hidden_width]);
                head_in = fusion.hidden_width;
            }
        }
        // Separate linear heads for angle and speed.
        shapes.push(vec![head_in, 1]);
        shapes.push(vec![1]);
        shapes.push(vec![head_in, 1]);
        shapes.push(vec![1]);
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.fusion {
            f.validate()?;
        }
        if self.kind == ModelKind::Pcm {
            let depth = self
                .depth
                .as_ref()
                .ok_or_else(|| Error::Config("pcm model needs a depth backbone".into()))?;
            if depth.in_shape[0] != 2 {
                return Err(Error::Config(format!(
                    "depth backbone must take 2 channels (depth + validity), got {}",
                    depth.in_shape[0]
                )));
            }
        }
        self.param_shapes().map(|_| ())
    }
}

/// A model: spec plus flat parameter list in canonical order.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

/// Prepared inputs for one forward pass. `depth` is the 2×H×W projected
/// depth tensor (PCM); `cloud` the N×3 scaled point tensor (PN).
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub image: Tensor,
    pub depth: Option<Tensor>,
    pub cloud: Option<Tensor>,
}

/// Tape handles for one bound forward pass.
pub struct TapedInput {
    pub image: NodeId,
    pub depth: Option<NodeId>,
    pub cloud: Option<NodeId>,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random::<f64>();
            std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::param(shape, data).expect("shape/data sizes agree by construction")
}

fn init_params(spec: &ModelSpec, seed: u64) -> Result<Vec<Tensor>> {
    let shapes = spec.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(shapes.len());
    for shape in shapes {
        if shape.len() == 1 {
            // Biases start at zero.
            let mut t = Tensor::zeros(shape);
            t.requires_grad = true;
            params.push(t);
        } else {
            // Conv kernels [F,C,kh,kw] have fan-in C·kh·kw; linear
            // weights [in,out] have fan-in `in`.
            let fan_in = if shape.len() == 4 {
                shape[1] * shape[2] * shape[3]
            } else {
                shape[0]
            };
            params.push(he_normal(&mut rng, shape, fan_in));
        }
    }
    Ok(params)
}

/// Image-only model: backbone → flatten → FC head → (angle, speed).
pub fn build_io_model(image: BackboneSpec, seed: u64) -> Result<Model> {
    let spec = ModelSpec {
        kind: ModelKind::Io,
        image,
        depth: None,
        pointnet: None,
        fusion: None,
        pipeline: PipelineSpec::default(),
    };
    spec.validate()?;
    let params = init_params(&spec, seed)?;
    Ok(Model { spec, params })
}

/// Two CNN branches (image + projected depth map) fused by concatenation.
pub fn build_pcm_model(
    image: BackboneSpec,
    depth: BackboneSpec,
    fusion: FusionSpec,
    seed: u64,
) -> Result<Model> {
    let spec = ModelSpec {
        kind: ModelKind::Pcm,
        image,
        depth: Some(depth),
        pointnet: None,
        fusion: Some(fusion),
        pipeline: PipelineSpec {
            projection: Some(ProjectionConfig::default()),
            ..PipelineSpec::default()
        },
    };
    spec.validate()?;
    let params = init_params(&spec, seed)?;
    Ok(Model { spec, params })
}

/// CNN branch plus PointNet branch (shared per-point MLP, global max).
pub fn build_pn_model(
    image: BackboneSpec,
    pointnet: PointNetSpec,
    fusion: FusionSpec,
    seed: u64,
) -> Result<Model> {
    let spec = ModelSpec {
        kind: ModelKind::Pn,
        image,
        depth: None,
        pointnet: Some(pointnet),
        fusion: Some(fusion),
        pipeline: PipelineSpec::default(),
    };
    spec.validate()?;
    let params = init_params(&spec, seed)?;
    Ok(Model { spec, params })
}

struct ParamCursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl<'a> ParamCursor<'a> {
    fn next(&mut self) -> NodeId {
        let id = self.ids[self.pos];
        self.pos += 1;
        id
    }
}

fn backbone_forward(
    tape: &mut Tape,
    plan: &BackbonePlan,
    cursor: &mut ParamCursor<'_>,
    input: NodeId,
) -> Result<NodeId> {
    let mut x = input;
    for conv in &plan.convs {
        let kernels = cursor.next();
        let bias = cursor.next();
        x = tape.conv2d(x, kernels, conv.stride)?;
        x = tape.add_channel_bias(x, bias)?;
        x = tape.relu(x);
        if let Some((win, stride)) = conv.pool {
            x = tape.maxpool2d(x, win, stride)?;
        }
    }
    let mut feat = tape.flatten_row(x);
    for _ in &plan.fcs {
        let weight = cursor.next();
        let bias = cursor.next();
        feat = tape.matmul(feat, weight)?;
        feat = tape.add_row_bias(feat, bias)?;
        feat = tape.relu(feat);
    }
    Ok(feat)
}

fn pointnet_forward(
    tape: &mut Tape,
    spec: &PointNetSpec,
    cursor: &mut ParamCursor<'_>,
    cloud: NodeId,
) -> Result<NodeId> {
    let mut x = cloud;
    for _ in &spec.mlp_widths {
        let weight = cursor.next();
        let bias = cursor.next();
        x = tape.matmul(x, weight)?;
        x = tape.add_row_bias(x, bias)?;
        x = tape.relu(x);
    }
    let pooled = tape.global_max_over_points(x)?;
    Ok(tape.flatten_row(pooled))
}

impl Model {
    /// Registers all parameters on the tape in canonical order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    /// Runs the forward pass on a tape, returning (angle, speed) node ids.
    /// The speed node is sigmoid-squashed; the angle node is linear.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        param_ids: &[NodeId],
        input: &TapedInput,
    ) -> Result<(NodeId, NodeId)> {
        let mut cursor = ParamCursor {
            ids: param_ids,
            pos: 0,
        };
        let img_plan = self.spec.image.plan()?;
        self.check_input_shape(tape, input.image, &self.spec.image, "image")?;
        let img_feat = backbone_forward(tape, &img_plan, &mut cursor, input.image)?;

        let head_in = match self.spec.kind {
            ModelKind::Io => img_feat,
            ModelKind::Pcm => {
                let depth_spec = self.spec.depth.as_ref().expect("validated");
                let depth_id = input.depth.ok_or_else(|| {
                    Error::Contract("pcm model requires a depth-map input".into())
                })?;
                self.check_input_shape(tape, depth_id, depth_spec, "depth map")?;
                let depth_plan = depth_spec.plan()?;
                let depth_feat = backbone_forward(tape, &depth_plan, &mut cursor, depth_id)?;
                let cat = tape.concat(&[img_feat, depth_feat])?;
                let weight = cursor.next();
                let bias = cursor.next();
                let fused = tape.matmul(cat, weight)?;
                let fused = tape.add_row_bias(fused, bias)?;
                tape.relu(fused)
            }
            ModelKind::Pn => {
                let pn_spec = self.spec.pointnet.as_ref().expect("validated");
                let cloud_id = input.cloud.ok_or_else(|| {
                    Error::Contract("pn model requires a point-cloud input".into())
                })?;
                let cs = tape.shape(cloud_id);
                if cs.len() != 2 || cs[1] != 3 {
                    return Err(Error::Dimension {
                        context: "pn cloud input".into(),
                        lhs: cs.to_vec(),
                        rhs: vec![0, 3],
                    });
                }
                let pn_feat = pointnet_forward(tape, pn_spec, &mut cursor, cloud_id)?;
                let cat = tape.concat(&[img_feat, pn_feat])?;
                let weight = cursor.next();
                let bias = cursor.next();
                let fused = tape.matmul(cat, weight)?;
                let fused = tape.add_row_bias(fused, bias)?;
                tape.relu(fused)
            }
        };

        let aw = cursor.next();
        let ab = cursor.next();
        let angle = tape.matmul(head_in, aw)?;
        let angle = tape.add_row_bias(angle, ab)?;

        let sw = cursor.next();
        let sb = cursor.next();
        let speed_raw = tape.matmul(head_in, sw)?;
        let speed_raw = tape.add_row_bias(speed_raw, sb)?;
        let speed = tape.sigmoid(speed_raw);
        Ok((angle, speed))
    }

    fn check_input_shape(
        &self,
        tape: &Tape,
        id: NodeId,
        spec: &BackboneSpec,
        what: &str,
    ) -> Result<()> {
        let s = tape.shape(id);
        if s != spec.in_shape {
            return Err(Error::Dimension {
                context: format!("{what} input"),
                lhs: s.to_vec(),
                rhs: spec.in_shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Inference on prepared inputs.
    pub fn predict(&self, input: &ModelInput) -> Result<Prediction> {
        let mut tape = Tape::new();
        // Parameters go on the tape as plain values; no gradient needed.
        let param_ids: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| {
                tape.constant(p.shape().to_vec(), p.data().to_vec())
                    .expect("parameter tensors are well-formed")
            })
            .collect();
        let image = tape.leaf(&input.image);
        let depth = input.depth.as_ref().map(|t| tape.leaf(t));
        let cloud = input.cloud.as_ref().map(|t| tape.leaf(t));
        let taped = TapedInput {
            image,
            depth,
            cloud,
        };
        let (angle, speed) = self.forward_on_tape(&mut tape, &param_ids, &taped)?;
        Ok(Prediction {
            angle_rad: tape.value(angle)[0],
            speed_norm: tape.value(speed)[0],
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Overwrites parameter gradients from the tape after a backward pass.
    pub fn write_grads(&mut self, tape: &Tape, param_ids: &[NodeId]) -> Result<()> {
        if param_ids.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound ids for {} parameters",
                param_ids.len(),
                self.params.len()
            )));
        }
        for (param, &id) in self.params.iter_mut().zip(param_ids) {
            let g = tape.grad(id).ok_or_else(|| {
                Error::Contract("parameter missing gradient after backward".into())
            })?;
            param.grad = Some(g.to_vec());
        }
        Ok(())
    }
}
