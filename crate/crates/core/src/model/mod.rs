//! Encoder-decoder segmentation network with style-injection sites.
//!
//! Encoder block `l` is `conv3x3-ReLU-conv3x3-ReLU`, then the injection site
//! `l`, then `maxpool 2`. Site 0 is the input image. The decoder applies a
//! 1×1 conv head to every pre-pool block output and to the final pooled map,
//! upsamples each to input resolution (nearest) and sums them.

mod checkpoint;
mod optim;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{config_err, shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::style::{inject, InjectionConfig};
use crate::tensor::{LabelMap, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST};
pub use optim::{sgd_step, OptimState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub widths: Vec<usize>,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 6,
            widths: vec![16, 32, 64],
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(config_err!(
                "num_classes {} must be in 2..=255",
                self.num_classes
            ));
        }
        if self.in_channels == 0 {
            return Err(config_err!("in_channels must be >= 1"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(config_err!(
                "block widths {:?} must be non-empty and positive",
                self.widths
            ));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.widths.len()
    }

    /// Spatial dims must be divisible by this.
    pub fn pool_factor(&self) -> usize {
        1 << self.widths.len()
    }
}

impl fmt::Display for SegNetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(
            f,
            "in_channels={} num_classes={} widths={}",
            self.in_channels,
            self.num_classes,
            widths.join(",")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Output of encoder block 1 (after pooling).
    pub block1: Var,
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNet<T> {
    config: SegNetConfig,
    params: Vec<Param<T>>,
}

impl<T: Scalar> SegNet<T> {
    /// He-normal convolution weights, zero biases.
    pub fn new(config: SegNetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut conv =
            |name: String, cout: usize, cin: usize, k: usize, gain: f64, rng: &mut Rng| {
                let std = (gain / (cin * k * k) as f64).sqrt();
                params.push(Param {
                    name: format!("{name}.weight"),
                    value: Tensor::from_fn([cout, cin, k, k], |_| T::narrow(std * rng.normal())),
                });
            };
        let mut cin = config.in_channels;
        for (b, &w) in config.widths.iter().enumerate() {
            conv(format!("block{}.conv1", b + 1), w, cin, 3, 2.0, rng);
            conv(format!("block{}.conv2", b + 1), w, w, 3, 2.0, rng);
            cin = w;
        }
        let mut tap_widths = config.widths.clone();
        tap_widths.push(*config.widths.last().unwrap());
        for (t, &w) in tap_widths.iter().enumerate() {
            conv(
                format!("head.tap{}", t + 1),
                config.num_classes,
                w,
                1,
                1.0,
                rng,
            );
        }
        // Biases after weights keep the parameter order stable when reading names.
        let mut biases = Vec::new();
        for (b, &w) in config.widths.iter().enumerate() {
            for j in 1..=2 {
                biases.push(Param {
                    name: format!("block{}.conv{}.bias", b + 1, j),
                    value: Tensor::zeros([1, w, 1, 1]),
                });
            }
        }
        biases.push(Param {
            name: "head.bias".into(),
            value: Tensor::zeros([1, config.num_classes, 1, 1]),
        });
        params.extend(biases);
        Ok(Self { config, params })
    }

    pub(crate) fn from_params(config: SegNetConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), &mut Rng::new(0, 0))?;
        if reference.params.len() != params.len() {
            return Err(shape_err!(
                "checkpoint has {} parameters, network needs {}",
                params.len(),
                reference.params.len()
            ));
        }
        for (want, got) in reference.params.iter().zip(&params) {
            if want.name != got.name || want.value.dims() != got.value.dims() {
                return Err(shape_err!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    got.name,
                    got.value.dims(),
                    want.name,
                    want.value.dims()
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    fn index_of(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.clear_grad());
    }

    /// Adds the graph's leaf gradients into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(grad) = g.grad(v) {
                p.value
                    .grad_mut()
                    .iter_mut()
                    .zip(grad)
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub fn check_input(&self, img: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = img.dims();
        let f = self.config.pool_factor();
        if c != self.config.in_channels {
            return Err(shape_err!(
                "input has {} channels, model expects {}",
                c,
                self.config.in_channels
            ));
        }
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(shape_err!(
                "input {}x{} not divisible by pooling factor {}",
                h,
                w,
                f
            ));
        }
        Ok(())
    }

    /// Records a forward pass. In [`Mode::Train`] each configured site draws
    /// from its own child stream `rng.derive(site)`; [`Mode::Eval`] never
    /// injects and registers parameters as constants.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        img: &Tensor<T>,
        mode: Mode,
        injection: &InjectionConfig,
        rng: &Rng,
    ) -> Result<Forward> {
        self.check_input(img)?;
        let training = mode == Mode::Train;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if training {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let var = |name: &str| params[self.index_of(name)];
        let site = |g: &mut Graph<T>, x: Var, s: usize| -> Result<Var> {
            if training && injection.sites.contains(&s) {
                inject(g, x, injection, &mut rng.derive(s as u64), true)
            } else {
                Ok(x)
            }
        };

        let mut x = g.constant(img.clone());
        x = site(g, x, 0)?;
        let mut taps = Vec::with_capacity(self.config.widths.len() + 1);
        let mut block1 = None;
        for b in 1..=self.config.widths.len() {
            for j in 1..=2 {
                let w = var(&format!("block{b}.conv{j}.weight"));
                let bias = var(&format!("block{b}.conv{j}.bias"));
                let y = g.conv2d(x, w, bias, 1, 1)?;
                x = g.relu(y);
            }
            x = site(g, x, b)?;
            taps.push(x);
            x = g.max_pool2d(x, 2)?;
            if b == 1 {
                block1 = Some(x);
            }
        }
        taps.push(x);

        let zero_bias = g.constant(Tensor::zeros([1, self.config.num_classes, 1, 1]));
        let mut logits: Option<Var> = None;
        for (t, &tap) in taps.iter().enumerate() {
            let bias = if t == 0 { var("head.bias") } else { zero_bias };
            let y = g.conv2d(tap, var(&format!("head.tap{}.weight", t + 1)), bias, 1, 0)?;
            let factor = 1 << t.min(self.config.widths.len());
            let y = if factor > 1 {
                g.upsample_nearest(y, factor)?
            } else {
                y
            };
            logits = Some(match logits {
                None => y,
                Some(acc) => g.add(acc, y)?,
            });
        }
        Ok(Forward {
            logits: logits.expect("at least one tap"),
            block1: block1.expect("at least one block"),
            params,
        })
    }

    /// Eval-mode logits.
    pub fn predict(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let f = self.forward(
            &mut g,
            img,
            Mode::Eval,
            &InjectionConfig::off(),
            &Rng::new(0, 0),
        )?;
        Ok(g.value(f.logits).clone())
    }

    /// Eval-mode softmax probabilities.
    pub fn predict_probs(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        crate::autograd::softmax_channels(&self.predict(img)?)
    }

    /// Eval-mode output of encoder block 1.
    pub fn block1_features(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let f = self.forward(
            &mut g,
            img,
            Mode::Eval,
            &InjectionConfig::off(),
            &Rng::new(0, 0),
        )?;
        Ok(g.value(f.block1).clone())
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self.index_of(name);
        if self.params[i].value.dims() != value.dims() {
            return Err(shape_err!(
                "{}: {:?} vs {:?}",
                name,
                value.dims(),
                self.params[i].value.dims()
            ));
        }
        self.params[i].value = value;
        Ok(())
    }
}

/// Stage-I supervised loss: mean cross-entropy over labeled pixels.
pub fn source_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &LabelMap) -> Result<Var> {
    g.cross_entropy(logits, labels)
}

/// Stage-II self-training loss: cross-entropy over pixels that carry a
/// pseudo-label; unassigned pixels contribute nothing.
pub fn ssl_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, pseudo: &LabelMap) -> Result<Var> {
    source_loss(g, logits, pseudo)
}

/// Value of [`source_loss`] for plain logits.
pub fn source_loss_value<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let l = source_loss(&mut g, x, labels)?;
    Ok(g.value(l).item()?.widen())
}
