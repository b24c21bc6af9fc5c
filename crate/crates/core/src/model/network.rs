//! The two-stream network: a small strided backbone shared by an anchor-based
//! object stream (classification, box regression and instance representation
//! heads at stride 8) and an FCN pixel stream (per-pixel representations at
//! stride 4).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::anchors::{AnchorConfig, AnchorGrid, AnchorLocation};
use crate::error::{Error, Result};
use crate::numerics::{conv2d, conv2d_backward, relu_backward, relu_inplace, ParamId, ParamStore, Tensor};

/// Focal-loss prior used to initialize the classification bias.
const CLS_PRIOR: f64 = 0.01;
/// Initial bias of relu convolutions; keeps units from dying early in training.
const RELU_BIAS: f32 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Dimension `d` of instance and pixel representations.
    pub repr_dim: usize,
    pub backbone_width: usize,
    pub head_width: usize,
    pub pixel_hidden: usize,
    pub anchors: AnchorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 3,
            repr_dim: 32,
            backbone_width: 64,
            head_width: 64,
            pixel_hidden: 256,
            anchors: AnchorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub const PIXEL_STRIDE: usize = 4;
    pub const OBJECT_STRIDE: usize = 8;

    pub fn k(&self) -> usize {
        self.anchors.per_location()
    }

    pub fn cls_channels(&self) -> usize {
        self.num_classes * self.k()
    }

    pub fn reg_channels(&self) -> usize {
        4 * self.k()
    }

    pub fn repr_channels(&self) -> usize {
        2 * self.repr_dim * self.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.repr_dim == 0 || self.k() == 0 {
            return Err(Error::Config("num_classes, repr_dim and k must be positive".into()));
        }
        if self.anchors.stride != Self::OBJECT_STRIDE {
            return Err(Error::Config(format!(
                "anchor stride must be {} (object stream stride)",
                Self::OBJECT_STRIDE
            )));
        }
        if self.backbone_width < 2 || self.head_width == 0 || self.pixel_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    relu: bool,
}

/// Raw outputs of the object stream for one image.
#[derive(Clone, Debug)]
pub struct DetectorOutputs {
    /// `(c·k)×H_a×W_a` classification logits; channel `slot·c + class`.
    pub cls: Tensor,
    /// `(4k)×H_a×W_a` box offsets; channel `slot·4 + j`.
    pub reg: Tensor,
    /// `(2dk)×H_a×W_a` instance representations; channel `slot·2d + j`.
    pub repr: Tensor,
}

/// Foreground and background representation rows (`2×d`) of one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRepresentation(pub Tensor);

impl ObjectRepresentation {
    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }
}

/// Every activation of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    image: Tensor,
    backbone: Vec<Tensor>,
    pixel: Vec<Tensor>,
    cls: Vec<Tensor>,
    reg: Vec<Tensor>,
    repr: Vec<Tensor>,
}

impl ForwardPass {
    /// Stride-4 features (pixel stream input).
    pub fn features_s4(&self) -> &Tensor {
        &self.backbone[3]
    }

    /// Stride-8 features (object stream input).
    pub fn features_s8(&self) -> &Tensor {
        &self.backbone[5]
    }

    pub fn pixel_repr(&self) -> &Tensor {
        &self.pixel[2]
    }

    pub fn cls_map(&self) -> &Tensor {
        &self.cls[1]
    }

    pub fn reg_map(&self) -> &Tensor {
        &self.reg[1]
    }

    pub fn repr_map(&self) -> &Tensor {
        &self.repr[1]
    }
}

/// Upstream gradients for the network outputs; `None` means zero.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    pub cls: Option<Tensor>,
    pub reg: Option<Tensor>,
    pub repr: Option<Tensor>,
    pub pixel: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    backbone: Vec<ConvLayer>,
    pixel: Vec<ConvLayer>,
    cls: Vec<ConvLayer>,
    reg: Vec<ConvLayer>,
    repr: Vec<ConvLayer>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn layer(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        relu: bool,
        weight_std: f64,
        bias: f32,
    ) -> Result<ConvLayer> {
        let normal = Normal::new(0.0, weight_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let w = Tensor::from_fn(&[c_out, c_in, k, k], |_| normal.sample(&mut self.rng) as f32);
        let weight = self.store.insert(format!("{name}.weight"), w)?;
        let bias = self.store.insert(format!("{name}.bias"), Tensor::full(&[c_out], bias))?;
        Ok(ConvLayer {
            weight,
            bias,
            stride,
            relu,
        })
    }

    fn he(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<ConvLayer> {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        self.layer(name, c_in, c_out, k, stride, true, std, RELU_BIAS)
    }
}

impl Network {
    /// Registers freshly initialized parameters in `store`.
    pub fn new(config: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let bw = config.backbone_width;
        let half = bw / 2;
        let backbone = vec![
            b.he("backbone.0", 3, half, 3, 2)?,
            b.he("backbone.1", half, half, 3, 1)?,
            b.he("backbone.2", half, bw, 3, 2)?,
            b.he("backbone.3", bw, bw, 3, 1)?,
            b.he("backbone.4", bw, bw, 3, 2)?,
            b.he("backbone.5", bw, bw, 3, 1)?,
        ];
        let ph = config.pixel_hidden;
        let pixel = vec![
            b.he("pixel.0", bw, ph, 3, 1)?,
            b.he("pixel.1", ph, ph, 3, 1)?,
            b.layer("pixel.2", ph, config.repr_dim, 1, 1, false, (1.0 / ph as f64).sqrt(), 0.0)?,
        ];
        let hw = config.head_width;
        let prior_bias = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln() as f32;
        let cls = vec![
            b.he("cls.0", bw, hw, 3, 1)?,
            b.layer("cls.1", hw, config.cls_channels(), 3, 1, false, 0.01, prior_bias)?,
        ];
        let reg = vec![
            b.he("reg.0", bw, hw, 3, 1)?,
            b.layer("reg.1", hw, config.reg_channels(), 3, 1, false, 0.01, 0.0)?,
        ];
        let repr = vec![
            b.he("repr.0", bw, hw, 3, 1)?,
            b.layer("repr.1", hw, config.repr_channels(), 3, 1, false, (1.0 / (hw * 9) as f64).sqrt(), 0.0)?,
        ];
        Ok(Network {
            config,
            backbone,
            pixel,
            cls,
            reg,
            repr,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn anchor_grid(&self, image_w: usize, image_h: usize) -> Result<AnchorGrid> {
        AnchorGrid::new(self.config.anchors.clone(), image_w, image_h)
    }

    fn run(store: &ParamStore, layers: &[ConvLayer], input: &Tensor) -> Result<Vec<Tensor>> {
        let mut outs: Vec<Tensor> = Vec::with_capacity(layers.len());
        for l in layers {
            let x = outs.last().unwrap_or(input);
            let mut y = conv2d(x, store.value(l.weight), Some(store.value(l.bias)), l.stride)?;
            if l.relu {
                relu_inplace(&mut y);
            }
            outs.push(y);
        }
        Ok(outs)
    }

    /// Backpropagates through a layer chain; returns the gradient w.r.t. `input`.
    fn back(
        store: &ParamStore,
        layers: &[ConvLayer],
        input: &Tensor,
        outputs: &[Tensor],
        grad: Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let mut g = grad;
        for (i, l) in layers.iter().enumerate().rev() {
            if l.relu {
                relu_backward(&outputs[i], &mut g);
            }
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let cg = conv2d_backward(x, store.value(l.weight), l.stride, &g)?;
            grads[l.weight.0].add_assign(&cg.weight)?;
            grads[l.bias.0].add_assign(&cg.bias)?;
            g = cg.input;
        }
        Ok(g)
    }

    fn check_image(image: &Tensor) -> Result<()> {
        let (c, h, w) = image.chw("backbone_forward")?;
        if c != 3 {
            return Err(Error::shape("backbone_forward", format!("expected 3 channels, got {c}")));
        }
        if h % ModelConfig::OBJECT_STRIDE != 0 || w % ModelConfig::OBJECT_STRIDE != 0 {
            return Err(Error::shape(
                "backbone_forward",
                format!("image {h}×{w} is not divisible by {}", ModelConfig::OBJECT_STRIDE),
            ));
        }
        Ok(())
    }

    /// Shared features at strides 4 and 8.
    pub fn backbone_forward(&self, store: &ParamStore, image: &Tensor) -> Result<(Tensor, Tensor)> {
        Self::check_image(image)?;
        let mut outs = Self::run(store, &self.backbone, image)?;
        let s8 = outs.pop().expect("six layers");
        Ok((outs.swap_remove(3), s8))
    }

    pub fn object_stream_forward(&self, store: &ParamStore, features_s8: &Tensor) -> Result<DetectorOutputs> {
        let last = |v: Vec<Tensor>| v.into_iter().last().expect("two layers");
        Ok(DetectorOutputs {
            cls: last(Self::run(store, &self.cls, features_s8)?),
            reg: last(Self::run(store, &self.reg, features_s8)?),
            repr: last(Self::run(store, &self.repr, features_s8)?),
        })
    }

    pub fn pixel_stream_forward(&self, store: &ParamStore, features_s4: &Tensor) -> Result<Tensor> {
        Ok(Self::run(store, &self.pixel, features_s4)?.pop().expect("three layers"))
    }

    pub fn forward(&self, store: &ParamStore, image: Tensor) -> Result<ForwardPass> {
        Self::check_image(&image)?;
        let backbone = Self::run(store, &self.backbone, &image)?;
        let pixel = Self::run(store, &self.pixel, &backbone[3])?;
        let cls = Self::run(store, &self.cls, &backbone[5])?;
        let reg = Self::run(store, &self.reg, &backbone[5])?;
        let repr = Self::run(store, &self.repr, &backbone[5])?;
        Ok(ForwardPass {
            image,
            backbone,
            pixel,
            cls,
            reg,
            repr,
        })
    }

    /// Parameter gradients (indexed like `store`) for the given output gradients.
    pub fn backward(&self, store: &ParamStore, pass: &ForwardPass, out: OutputGrads) -> Result<Vec<Tensor>> {
        let mut grads: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let s8 = &pass.backbone[5];
        let mut d_s8 = Tensor::zeros(s8.shape());
        let heads = [
            (&self.cls, &pass.cls, out.cls),
            (&self.reg, &pass.reg, out.reg),
            (&self.repr, &pass.repr, out.repr),
        ];
        for (layers, outputs, g) in heads {
            if let Some(g) = g {
                let d = Self::back(store, layers, s8, outputs, g, &mut grads)?;
                d_s8.add_assign(&d)?;
            }
        }
        let s4 = &pass.backbone[3];
        let mut d_s4 = Self::back(store, &self.backbone[4..], s4, &pass.backbone[4..], d_s8, &mut grads)?;
        if let Some(g) = out.pixel {
            let d = Self::back(store, &self.pixel, s4, &pass.pixel, g, &mut grads)?;
            d_s4.add_assign(&d)?;
        }
        Self::back(store, &self.backbone[..4], &pass.image, &pass.backbone[..4], d_s4, &mut grads)?;
        Ok(grads)
    }

    /// Names of every parameter owned by the network.
    pub fn param_names(&self, store: &ParamStore) -> Vec<String> {
        let all = [&self.backbone, &self.pixel, &self.cls, &self.reg, &self.repr];
        all.iter()
            .flat_map(|ls| ls.iter())
            .flat_map(|l| [l.weight, l.bias])
            .map(|id| store.get(id).name.clone())
            .collect()
    }
}

/// Slices the `2d` representation channels of one anchor out of the repr map.
pub fn extract_object_repr(repr_map: &Tensor, loc: AnchorLocation, k: usize) -> Result<ObjectRepresentation> {
    let (c, h, w) = repr_map.chw("extract_object_repr")?;
    if k == 0 || c % (2 * k) != 0 {
        return Err(Error::shape(
            "extract_object_repr",
            format!("{c} channels cannot hold {k} anchors of 2×d"),
        ));
    }
    if loc.gx >= w || loc.gy >= h || loc.slot >= k {
        return Err(Error::InvalidArgument(format!(
            "anchor location {loc:?} outside {w}×{h} grid with k={k}"
        )));
    }
    let d = c / (2 * k);
    let plane = h * w;
    let cell = loc.gy * w + loc.gx;
    let data = (0..2 * d)
        .map(|j| repr_map.data()[(loc.slot * 2 * d + j) * plane + cell])
        .collect();
    Ok(ObjectRepresentation(Tensor::new(vec![2, d], data)?))
}

/// Adds the gradient of an extracted representation back into a repr-map gradient.
pub fn scatter_object_repr_grad(grad_map: &mut Tensor, loc: AnchorLocation, k: usize, grad: &Tensor) -> Result<()> {
    let (c, h, w) = grad_map.chw("scatter_object_repr_grad")?;
    let d = c / (2 * k);
    if grad.len() != 2 * d {
        return Err(Error::shape(
            "scatter_object_repr_grad",
            format!("gradient has {} entries, expected {}", grad.len(), 2 * d),
        ));
    }
    let plane = h * w;
    let cell = loc.gy * w + loc.gx;
    let data = grad_map.data_mut();
    for (j, &g) in grad.data().iter().enumerate() {
        data[(loc.slot * 2 * d + j) * plane + cell] += g;
    }
    Ok(())
}
