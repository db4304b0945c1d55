use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndgraph::{Graph, Real, Tensor, Var};
use crate::probmap::{cost_volume, to_prob_mapping, ProbMapping, ProbNode};
use crate::warp::Image;

/// Stabilizer of the per-cell feature normalization.
pub const FEATURE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    /// Adds the learnable unmatched-bin score `z`.
    pub unmatched_bin: bool,
    pub z_init: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            hidden: 16,
            feature_dim: 16,
            unmatched_bin: true,
            z_init: 0.0,
        }
    }
}

/// Named parameter tensors of the three-layer convolutional encoder.
///
/// Layout: `conv1` (hidden x in x 3 x 3, stride 2), `conv2` (hidden x hidden,
/// stride 2), `conv3` (d x hidden, stride 1) and optionally `bin_z` (scalar).
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub params: Vec<(String, Tensor<f32>)>,
}

const STRIDES: [usize; 3] = [2, 2, 1];

/// Graph handles for one registration of the encoder parameters.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub kernels: [Var; 3],
    pub z: Option<Var>,
    /// Handles in the same order as [`Encoder::params`].
    pub all: Vec<Var>,
}

impl Encoder {
    /// He-normal initialization of the kernels; `z` starts at `z_init`.
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.hidden == 0 || cfg.feature_dim == 0 {
            return Err(Error::Parameter("encoder channel counts must be positive".into()));
        }
        let shapes = Self::kernel_shapes(&cfg);
        let mut params = Vec::new();
        for (k, shape) in shapes.iter().enumerate() {
            let fan_in = (shape[1] * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
            params.push((format!("conv{}", k + 1), Tensor::new(shape.to_vec(), data)?));
        }
        if cfg.unmatched_bin {
            params.push(("bin_z".to_string(), Tensor::scalar(cfg.z_init as f32)));
        }
        Ok(Encoder { cfg, params })
    }

    fn kernel_shapes(cfg: &EncoderConfig) -> [[usize; 4]; 3] {
        [
            [cfg.hidden, cfg.in_channels, 3, 3],
            [cfg.hidden, cfg.hidden, 3, 3],
            [cfg.feature_dim, cfg.hidden, 3, 3],
        ]
    }

    /// Expected `(name, shape)` table for this configuration.
    pub fn expected_shapes(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Self::kernel_shapes(cfg)
            .iter()
            .enumerate()
            .map(|(k, s)| (format!("conv{}", k + 1), s.to_vec()))
            .collect();
        if cfg.unmatched_bin {
            out.push(("bin_z".to_string(), vec![1]));
        }
        out
    }

    pub fn bin_z(&self) -> Option<f32> {
        self.params.iter().find(|(n, _)| n == "bin_z").map(|(_, t)| t.item())
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn register<F: Real>(&self, g: &mut Graph<F>) -> EncoderVars {
        let all: Vec<Var> = self.params.iter().map(|(_, t)| g.param(t.cast())).collect();
        EncoderVars {
            kernels: [all[0], all[1], all[2]],
            z: self.cfg.unmatched_bin.then(|| all[3]),
            all,
        }
    }

    /// Features `d x h/4 x w/4`, unit L2 norm per cell.
    pub fn encode<F: Real>(&self, g: &mut Graph<F>, vars: &EncoderVars, img: Var) -> Result<Var> {
        let shape = g.shape(img).to_vec();
        if shape.len() != 3 || shape[0] != self.cfg.in_channels || shape[1] % 4 != 0 || shape[2] % 4 != 0 {
            return Err(Error::dim(
                "encode",
                format!("expected {} x h x w with h, w divisible by 4, got {shape:?}", self.cfg.in_channels),
            ));
        }
        let mut x = img;
        for (k, (&kernel, &stride)) in vars.kernels.iter().zip(STRIDES.iter()).enumerate() {
            x = g.conv2d(x, kernel, stride)?;
            if k < 2 {
                x = g.relu(x)?;
            }
        }
        g.l2_normalize_channels(x, F::lit(FEATURE_EPS))
    }

    pub fn encode_image<F: Real>(&self, g: &mut Graph<F>, vars: &EncoderVars, img: &Image) -> Result<Var> {
        let t = image_tensor(img)?;
        let v = g.constant(t);
        self.encode(g, vars, v)
    }

    /// Predicted `P_{A<-B}` for two images, without gradients.
    pub fn predict(&self, img_a: &Image, img_b: &Image, temperature: f64) -> Result<ProbMapping<f32>> {
        let mut g = Graph::<f32>::new();
        let vars = self.register_constant(&mut g);
        let fa = self.encode_image(&mut g, &vars, img_a)?;
        let fb = self.encode_image(&mut g, &vars, img_b)?;
        let c = cost_volume(&mut g, fa, fb, vars.z)?;
        let p: ProbNode = to_prob_mapping(&mut g, &c, temperature as f32)?;
        Ok(p.value(&g))
    }

    fn register_constant<F: Real>(&self, g: &mut Graph<F>) -> EncoderVars {
        let all: Vec<Var> = self.params.iter().map(|(_, t)| g.constant(t.cast())).collect();
        EncoderVars {
            kernels: [all[0], all[1], all[2]],
            z: self.cfg.unmatched_bin.then(|| all[3]),
            all,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.is_finite())
    }
}

/// Channel-first tensor of an image.
pub fn image_tensor<F: Real>(img: &Image) -> Result<Tensor<F>> {
    Tensor::new(
        vec![img.channels(), img.height(), img.width()],
        img.to_chw().into_iter().map(|v| F::lit(v as f64)).collect(),
    )
}
