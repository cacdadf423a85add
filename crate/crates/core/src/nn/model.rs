use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::dataset::{Image, LabeledExample};
use crate::rng::rng_from;
use crate::{Error, Result};

/// One 3x3/pad-1 convolution followed by ReLU and an optional 2x2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub pool: bool,
}

/// Split classifier layout: a convolutional extractor ending at the cut
/// point, then `Flatten -> FC(hidden) + ReLU -> FC(classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_h: usize,
    pub input_w: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_h: 32,
            input_w: 32,
            convs: vec![
                ConvSpec { out_channels: 8, pool: true },
                ConvSpec { out_channels: 16, pool: true },
                ConvSpec { out_channels: 32, pool: false },
            ],
            hidden: 128,
            classes: 6,
        }
    }
}

impl ModelSpec {
    /// The default architecture for a given square input size.
    pub fn for_input(size: usize, classes: usize) -> Self {
        ModelSpec {
            input_h: size,
            input_w: size,
            classes,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() || self.hidden == 0 || self.classes == 0 {
            return Err(Error::InvalidArgument("model needs convs, hidden units and classes".into()));
        }
        if self.convs.iter().any(|c| c.out_channels == 0) {
            return Err(Error::InvalidArgument("zero-channel convolution".into()));
        }
        let (h, w) = self.map_size();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} pools away to nothing",
                self.input_h, self.input_w
            )));
        }
        Ok(())
    }

    /// Feature-map count at the cut point.
    pub fn cut_maps(&self) -> usize {
        self.convs.last().map_or(0, |c| c.out_channels)
    }

    /// Spatial size of each cut-point map.
    pub fn map_size(&self) -> (usize, usize) {
        self.convs.iter().fold((self.input_h, self.input_w), |(h, w), c| {
            if c.pool {
                (h / 2, w / 2)
            } else {
                (h, w)
            }
        })
    }

    /// Cut-point tensor shape `[K, h, w]`.
    pub fn cut_shape(&self) -> [usize; 3] {
        let (h, w) = self.map_size();
        [self.cut_maps(), h, w]
    }

    pub fn decoder_inputs(&self) -> usize {
        self.cut_shape().iter().product()
    }

    /// Shapes of every parameter tensor in canonical order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut c_in = 1;
        for c in &self.convs {
            shapes.push(vec![c.out_channels, c_in, 3, 3]);
            shapes.push(vec![c.out_channels]);
            c_in = c.out_channels;
        }
        shapes.push(vec![self.hidden, self.decoder_inputs()]);
        shapes.push(vec![self.hidden]);
        shapes.push(vec![self.classes, self.hidden]);
        shapes.push(vec![self.classes]);
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.convs.len() {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        for n in ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"] {
            names.push(n.to_string());
        }
        names
    }
}

/// The split classifier. Parameters are stored as a flat list of tensors in
/// the order given by [`ModelSpec::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor>,
}

/// Intermediate values of one convolution block, kept for backprop.
struct ConvTrace {
    input: Vec<f64>,
    h: usize,
    w: usize,
    /// post-ReLU activation before pooling
    act: Vec<f64>,
    /// flat argmax into `act` for each pooled output
    pool_idx: Option<Vec<usize>>,
}

struct ExtractTrace {
    blocks: Vec<ConvTrace>,
    features: Vec<f64>,
}

struct DecodeTrace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n - d as usize } else { n };
    (lo, hi.max(lo))
}

fn conv3x3_forward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let plane = h * w;
    for (o, out_o) in out.chunks_exact_mut(plane).enumerate() {
        out_o.fill(bias[o]);
        for c in 0..c_in {
            let in_c = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = weight[((o * c_in + c) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx = (x0 as isize + dx) as usize;
                        let src = &in_c[sy * w + sx..sy * w + sx + (x1 - x0)];
                        let dst = &mut out_o[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and (optionally) the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let plane = h * w;
    for (o, dout_o) in dout.chunks_exact(plane).enumerate() {
        dbias[o] += dout_o.iter().sum::<f64>();
        for c in 0..c_in {
            let in_c = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(w, dx);
                    let widx = ((o * c_in + c) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx = (x0 as isize + dx) as usize;
                        let d = &dout_o[y * w + x0..y * w + x1];
                        let s = &in_c[sy * w + sx..sy * w + sx + (x1 - x0)];
                        acc += d.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(din) = dinput.as_deref_mut() {
                            let din_c = &mut din[c * plane..(c + 1) * plane];
                            for (t, g) in din_c[sy * w + sx..sy * w + sx + (x1 - x0)].iter_mut().zip(d) {
                                *t += wv * g;
                            }
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
}

fn maxpool2(act: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if act[i] > act[best] {
                        best = i;
                    }
                }
                out.push(act[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn dense_forward(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weight
        .chunks_exact(x.len())
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest logit; ties go to the smallest index.
pub fn predict(logits: &[f64]) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut d = p;
    d[label] -= 1.0;
    (loss, d)
}

impl Model {
    /// He-normal weights, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from(seed);
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("shape matches data")
            })
            .collect();
        Ok(Model { spec, params })
    }

    /// Assembles a model from explicit parameter tensors.
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((s, p), name) in shapes.iter().zip(&params).zip(spec.param_names()) {
            if s.as_slice() != p.shape() {
                return Err(Error::Dimension(format!(
                    "{name}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn fc_index(&self) -> usize {
        2 * self.spec.convs.len()
    }

    /// First decoder layer weights `[hidden, K*h*w]`.
    pub fn decoder_first_weight_mut(&mut self) -> &mut Tensor {
        let i = self.fc_index();
        &mut self.params[i]
    }

    /// Output layer weights `[classes, hidden]`.
    pub fn output_weight_mut(&mut self) -> &mut Tensor {
        let i = self.fc_index() + 2;
        &mut self.params[i]
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.width() != self.spec.input_w || image.height() != self.spec.input_h {
            return Err(Error::Dimension(format!(
                "model expects {}x{} input, got {}x{}",
                self.spec.input_w,
                self.spec.input_h,
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        let shape = self.spec.cut_shape();
        if features.shape() != shape {
            return Err(Error::Dimension(format!(
                "decoder expects features {shape:?}, got {:?}",
                features.shape()
            )));
        }
        Ok(())
    }

    fn extract_trace(&self, pixels: &[f64]) -> ExtractTrace {
        let (mut h, mut w) = (self.spec.input_h, self.spec.input_w);
        let mut c_in = 1;
        let mut x = pixels.to_vec();
        let mut blocks = Vec::with_capacity(self.spec.convs.len());
        for (i, conv) in self.spec.convs.iter().enumerate() {
            let weight = self.params[2 * i].data();
            let bias = self.params[2 * i + 1].data();
            let mut act = vec![0.0; conv.out_channels * h * w];
            conv3x3_forward(&x, c_in, h, w, weight, bias, &mut act);
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            let (next, pool_idx, nh, nw) = if conv.pool {
                let (pooled, idx) = maxpool2(&act, conv.out_channels, h, w);
                (pooled, Some(idx), h / 2, w / 2)
            } else {
                (act.clone(), None, h, w)
            };
            blocks.push(ConvTrace {
                input: x,
                h,
                w,
                act,
                pool_idx,
            });
            x = next;
            h = nh;
            w = nw;
            c_in = conv.out_channels;
        }
        ExtractTrace { blocks, features: x }
    }

    fn decode_trace(&self, features: &[f64]) -> DecodeTrace {
        let f = self.fc_index();
        let mut hidden = dense_forward(self.params[f].data(), self.params[f + 1].data(), features);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = dense_forward(self.params[f + 2].data(), self.params[f + 3].data(), &hidden);
        DecodeTrace { hidden, logits }
    }

    /// Backprop through the decoder. Accumulates FC gradients into `grads`
    /// when given and returns the gradient with respect to the features.
    fn decode_backward(
        &self,
        features: &[f64],
        trace: &DecodeTrace,
        dlogits: &[f64],
        grads: Option<&mut [Tensor]>,
    ) -> Vec<f64> {
        let f = self.fc_index();
        let w2 = self.params[f + 2].data();
        let w1 = self.params[f].data();
        let hidden_n = self.spec.hidden;
        let mut dhidden = vec![0.0; hidden_n];
        for (k, &g) in dlogits.iter().enumerate() {
            for (j, dh) in dhidden.iter_mut().enumerate() {
                *dh += w2[k * hidden_n + j] * g;
            }
        }
        for (dh, h) in dhidden.iter_mut().zip(&trace.hidden) {
            if *h <= 0.0 {
                *dh = 0.0;
            }
        }
        let n_in = features.len();
        if let Some(grads) = grads {
            let (lo, hi) = grads.split_at_mut(f + 2);
            {
                let (gw2, gb2) = hi.split_at_mut(1);
                let gw2 = gw2[0].data_mut();
                for (k, &g) in dlogits.iter().enumerate() {
                    gb2[0].data_mut()[k] += g;
                    for (t, h) in gw2[k * hidden_n..(k + 1) * hidden_n].iter_mut().zip(&trace.hidden) {
                        *t += g * h;
                    }
                }
            }
            let (gw1, gb1) = lo[f..].split_at_mut(1);
            let gw1 = gw1[0].data_mut();
            for (j, &g) in dhidden.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb1[0].data_mut()[j] += g;
                for (t, x) in gw1[j * n_in..(j + 1) * n_in].iter_mut().zip(features) {
                    *t += g * x;
                }
            }
        }
        let mut dfeat = vec![0.0; n_in];
        for (j, &g) in dhidden.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (t, w) in dfeat.iter_mut().zip(&w1[j * n_in..(j + 1) * n_in]) {
                *t += g * w;
            }
        }
        dfeat
    }

    fn extract_backward(&self, trace: &ExtractTrace, dfeat: Vec<f64>, grads: &mut [Tensor]) {
        let mut dnext = dfeat;
        for (i, block) in trace.blocks.iter().enumerate().rev() {
            let conv = self.spec.convs[i];
            // back through the pool
            let mut dact = match &block.pool_idx {
                Some(idx) => {
                    let mut d = vec![0.0; block.act.len()];
                    for (&src, g) in idx.iter().zip(&dnext) {
                        d[src] += g;
                    }
                    d
                }
                None => dnext,
            };
            for (d, a) in dact.iter_mut().zip(&block.act) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let c_in = if i == 0 { 1 } else { self.spec.convs[i - 1].out_channels };
            let (gw, gb) = grads[2 * i..2 * i + 2].split_at_mut(1);
            let mut dinput = (i > 0).then(|| vec![0.0; block.input.len()]);
            conv3x3_backward(
                &block.input,
                c_in,
                block.h,
                block.w,
                self.params[2 * i].data(),
                &dact,
                gw[0].data_mut(),
                gb[0].data_mut(),
                dinput.as_deref_mut(),
            );
            debug_assert_eq!(dact.len(), conv.out_channels * block.h * block.w);
            dnext = dinput.unwrap_or_default();
        }
    }

    /// Cut-point activation `[K, h, w]`.
    pub fn extract(&self, image: &Image) -> Result<Tensor> {
        self.check_image(image)?;
        let trace = self.extract_trace(image.pixels());
        Tensor::new(self.spec.cut_shape().to_vec(), trace.features)
    }

    /// Pre-softmax scores from cut-point features.
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        self.check_features(features)?;
        let trace = self.decode_trace(features.data());
        Tensor::new(vec![self.spec.classes], trace.logits)
    }

    /// Returns `(feature_maps, logits)`.
    pub fn forward(&self, image: &Image) -> Result<(Tensor, Tensor)> {
        let features = self.extract(image)?;
        let logits = self.decode(&features)?;
        Ok((features, logits))
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect()
    }

    /// Loss and gradient accumulation for one example. `perturb` may rewrite
    /// the cut-point features in place; a returned mask zeroes the feature
    /// gradient of dropped maps.
    pub(crate) fn accumulate_example<F>(
        &self,
        pixels: &[f64],
        label: usize,
        perturb: F,
        grads: &mut [Tensor],
    ) -> (f64, usize)
    where
        F: FnOnce(&mut [f64]) -> Option<Vec<bool>>,
    {
        let mut trace = self.extract_trace(pixels);
        let mask = perturb(&mut trace.features);
        let dtrace = self.decode_trace(&trace.features);
        let (loss, dlogits) = cross_entropy(&dtrace.logits, label);
        let pred = predict(&dtrace.logits).unwrap_or(0);
        let mut dfeat = self.decode_backward(&trace.features, &dtrace, &dlogits, Some(grads));
        if let Some(mask) = mask {
            let plane = dfeat.len() / mask.len();
            for (k, keep) in mask.iter().enumerate() {
                if !keep {
                    dfeat[k * plane..(k + 1) * plane].fill(0.0);
                }
            }
        }
        self.extract_backward(&trace, dfeat, grads);
        (loss, pred)
    }

    /// Mean softmax cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_grads(&self, batch: &[LabeledExample]) -> Result<(f64, Vec<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        for ex in batch {
            self.check_image(&ex.image)?;
            if ex.label >= self.spec.classes {
                return Err(Error::InvalidClass {
                    class_id: ex.label,
                    classes: self.spec.classes,
                });
            }
            total += self.accumulate_example(ex.image.pixels(), ex.label, |_| None, &mut grads).0;
        }
        let n = batch.len() as f64;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        Ok((total / n, grads))
    }

    /// Gradient of logit `class_id` with respect to the cut-point maps.
    pub fn grad_wrt_feature_maps(&self, image: &Image, class_id: usize) -> Result<Tensor> {
        self.check_image(image)?;
        let features = self.extract(image)?;
        self.grad_logit_wrt_features(&features, class_id)
    }

    /// Same as [`Model::grad_wrt_feature_maps`] but starting from features.
    pub fn grad_logit_wrt_features(&self, features: &Tensor, class_id: usize) -> Result<Tensor> {
        if class_id >= self.spec.classes {
            return Err(Error::InvalidClass {
                class_id,
                classes: self.spec.classes,
            });
        }
        self.check_features(features)?;
        let trace = self.decode_trace(features.data());
        let mut onehot = vec![0.0; self.spec.classes];
        onehot[class_id] = 1.0;
        let d = self.decode_backward(features.data(), &trace, &onehot, None);
        Tensor::new(self.spec.cut_shape().to_vec(), d)
    }

    /// Mean cross-entropy only; used by finite-difference checks.
    pub fn loss(&self, batch: &[LabeledExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let (_, logits) = self.forward(&ex.image)?;
            total += cross_entropy(logits.data(), ex.label).0;
        }
        Ok(total / batch.len() as f64)
    }
}
