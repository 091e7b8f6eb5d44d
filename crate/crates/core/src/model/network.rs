use super::batch::{Batch, Targets};
use super::objective::Objective;
use super::params::{LayerMap, LayerSlice};
use super::{Activation, Layer, LossKind, ModelSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Flat(usize),
    Image(usize, usize, usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Flat(d) => d,
            Shape::Image(c, h, w) => c * h * w,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Dense {
        inputs: usize,
        outputs: usize,
        w: usize,
        b: usize,
    },
    Conv {
        c: usize,
        h: usize,
        wd: usize,
        oc: usize,
        k: usize,
        w: usize,
        b: usize,
    },
    Pool {
        c: usize,
        h: usize,
        wd: usize,
        s: usize,
    },
    Flatten,
    Act(Activation),
}

/// Executable form of a [`ModelSpec`].
#[derive(Clone, Debug)]
pub struct Network {
    ops: Vec<Op>,
    sizes: Vec<usize>,
    layer_map: LayerMap,
    fan_in: Vec<(String, usize)>,
    loss: LossKind,
    input_len: usize,
    outputs: usize,
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::InvalidSpec("model has no layers".into()));
        }
        let mut shape = match spec.input_shape.as_slice() {
            [d] if *d > 0 => Shape::Flat(*d),
            [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Shape::Image(*c, *h, *w),
            other => {
                return Err(Error::InvalidSpec(format!(
                    "input shape {other:?} must be [features] or [channels, height, width]"
                )))
            }
        };
        let mut ops = Vec::new();
        let mut sizes = vec![shape.len()];
        let mut entries = Vec::new();
        let mut fan_in = Vec::new();
        let mut offset = 0usize;
        let (mut n_dense, mut n_conv) = (0, 0);

        let mut push = |name: String, shape: Vec<usize>, prunable: bool, offset: &mut usize| {
            let len: usize = shape.iter().product();
            entries.push(LayerSlice {
                name,
                offset: *offset,
                len,
                prunable,
                filter_shape: shape,
            });
            *offset += len;
            *offset - len
        };

        for (i, layer) in spec.layers.iter().enumerate() {
            let op = match (layer, shape) {
                (&Layer::Dense { inputs, outputs }, Shape::Flat(d)) => {
                    if inputs != d {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i} (dense) expects {inputs} inputs but receives {d}"
                        )));
                    }
                    if outputs == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i} (dense) has no outputs")));
                    }
                    let name = format!("dense{n_dense}");
                    n_dense += 1;
                    let w = push(format!("{name}.weight"), vec![outputs, inputs], true, &mut offset);
                    let b = push(format!("{name}.bias"), vec![outputs], false, &mut offset);
                    fan_in.push((format!("{name}.weight"), inputs));
                    fan_in.push((format!("{name}.bias"), inputs));
                    shape = Shape::Flat(outputs);
                    Op::Dense {
                        inputs,
                        outputs,
                        w,
                        b,
                    }
                }
                (Layer::Dense { .. }, Shape::Image(..)) => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i} (dense) needs a flat input; add a flatten layer"
                    )))
                }
                (
                    &Layer::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                    },
                    Shape::Image(c, h, wd),
                ) => {
                    if in_channels != c {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i} (conv2d) expects {in_channels} channels but receives {c}"
                        )));
                    }
                    if kernel == 0 || kernel > h || kernel > wd || out_channels == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i} (conv2d) kernel {kernel} does not fit a {h}x{wd} input"
                        )));
                    }
                    let name = format!("conv{n_conv}");
                    n_conv += 1;
                    let w = push(
                        format!("{name}.weight"),
                        vec![out_channels, c, kernel, kernel],
                        true,
                        &mut offset,
                    );
                    let b = push(format!("{name}.bias"), vec![out_channels], false, &mut offset);
                    let fi = c * kernel * kernel;
                    fan_in.push((format!("{name}.weight"), fi));
                    fan_in.push((format!("{name}.bias"), fi));
                    shape = Shape::Image(out_channels, h - kernel + 1, wd - kernel + 1);
                    Op::Conv {
                        c,
                        h,
                        wd,
                        oc: out_channels,
                        k: kernel,
                        w,
                        b,
                    }
                }
                (&Layer::MaxPool2d { size }, Shape::Image(c, h, wd)) => {
                    if size == 0 || size > h || size > wd {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i} (max_pool2d) size {size} does not fit a {h}x{wd} input"
                        )));
                    }
                    shape = Shape::Image(c, h / size, wd / size);
                    Op::Pool { c, h, wd, s: size }
                }
                (Layer::Conv2d { .. } | Layer::MaxPool2d { .. }, Shape::Flat(_)) => {
                    return Err(Error::InvalidSpec(format!("layer {i} needs an image input")))
                }
                (Layer::Flatten, s) => {
                    shape = Shape::Flat(s.len());
                    Op::Flatten
                }
                (Layer::Activation { kind }, _) => Op::Act(*kind),
            };
            ops.push(op);
            sizes.push(shape.len());
        }

        let outputs = match shape {
            Shape::Flat(d) => d,
            Shape::Image(..) => {
                return Err(Error::InvalidSpec("model output must be flat".into()));
            }
        };
        if entries.is_empty() {
            return Err(Error::InvalidSpec("model has no parametric layers".into()));
        }
        if spec.loss == LossKind::CrossEntropy && outputs < 2 {
            return Err(Error::InvalidSpec(
                "cross-entropy needs at least two output classes".into(),
            ));
        }
        Ok(Network {
            ops,
            sizes,
            layer_map: LayerMap::new(entries)?,
            fan_in,
            loss: spec.loss,
            input_len: spec.input_len(),
            outputs,
        })
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub(crate) fn fan_in(&self, name: &str) -> usize {
        self.fan_in
            .iter()
            .find(|(n, _)| n == name)
            .map_or(1, |(_, f)| *f)
    }

    fn check(&self, params: &[f64], batch: &Batch) -> Result<()> {
        if params.len() != self.layer_map.total_len() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.layer_map.total_len()
            )));
        }
        if batch.sample_len != self.input_len {
            return Err(Error::Shape(format!(
                "samples of length {} for a model expecting {}",
                batch.sample_len, self.input_len
            )));
        }
        match &batch.targets {
            Targets::Classes(c) => {
                if self.loss != LossKind::CrossEntropy {
                    return Err(Error::Shape("class targets need cross-entropy loss".into()));
                }
                if let Some(&bad) = c.iter().find(|&&y| y >= self.outputs) {
                    return Err(Error::Shape(format!(
                        "class {bad} out of range for {} outputs",
                        self.outputs
                    )));
                }
            }
            Targets::Values { width, .. } => {
                if self.loss != LossKind::MeanSquaredError || *width != self.outputs {
                    return Err(Error::Shape(format!(
                        "regression targets of width {width} for {} outputs",
                        self.outputs
                    )));
                }
            }
        }
        Ok(())
    }

    /// Returns every intermediate activation (index 0 is the input) and the
    /// argmax caches of pooling layers.
    fn forward(&self, params: &[f64], batch: &Batch) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let n = batch.size();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.ops.len() + 1);
        let mut argmax = Vec::new();
        acts.push(batch.inputs.clone());
        for (li, op) in self.ops.iter().enumerate() {
            let x = &acts[li];
            let out_len = self.sizes[li + 1];
            let mut y = vec![0.0; n * out_len];
            match *op {
                Op::Dense {
                    inputs,
                    outputs,
                    w,
                    b,
                } => {
                    let wt = &params[w..w + inputs * outputs];
                    let bs = &params[b..b + outputs];
                    for i in 0..n {
                        let xi = &x[i * inputs..(i + 1) * inputs];
                        let yi = &mut y[i * outputs..(i + 1) * outputs];
                        for (j, yj) in yi.iter_mut().enumerate() {
                            let row = &wt[j * inputs..(j + 1) * inputs];
                            *yj = bs[j] + dot(row, xi);
                        }
                    }
                }
                Op::Conv {
                    c,
                    h,
                    wd,
                    oc,
                    k,
                    w,
                    b,
                } => {
                    let (oh, ow) = (h - k + 1, wd - k + 1);
                    let in_len = c * h * wd;
                    for i in 0..n {
                        let xi = &x[i * in_len..(i + 1) * in_len];
                        let yi = &mut y[i * out_len..(i + 1) * out_len];
                        for o in 0..oc {
                            let bias = params[b + o];
                            for r in 0..oh {
                                for s in 0..ow {
                                    let mut acc = bias;
                                    for ch in 0..c {
                                        for u in 0..k {
                                            let xrow = ch * h * wd + (r + u) * wd + s;
                                            let wrow = w + ((o * c + ch) * k + u) * k;
                                            acc += dot(&params[wrow..wrow + k], &xi[xrow..xrow + k]);
                                        }
                                    }
                                    yi[o * oh * ow + r * ow + s] = acc;
                                }
                            }
                        }
                    }
                }
                Op::Pool { c, h, wd, s } => {
                    let (oh, ow) = (h / s, wd / s);
                    let in_len = c * h * wd;
                    let mut am = vec![0usize; n * out_len];
                    for i in 0..n {
                        let xi = &x[i * in_len..(i + 1) * in_len];
                        for ch in 0..c {
                            for r in 0..oh {
                                for q in 0..ow {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut best_idx = 0;
                                    for u in 0..s {
                                        for v in 0..s {
                                            let idx = ch * h * wd + (r * s + u) * wd + q * s + v;
                                            if xi[idx] > best {
                                                best = xi[idx];
                                                best_idx = idx;
                                            }
                                        }
                                    }
                                    let o = i * out_len + ch * oh * ow + r * ow + q;
                                    y[o] = best;
                                    am[o] = best_idx;
                                }
                            }
                        }
                    }
                    argmax.push(am);
                }
                Op::Flatten => y.copy_from_slice(x),
                Op::Act(Activation::Relu) => {
                    for (yv, &xv) in y.iter_mut().zip(x) {
                        *yv = xv.max(0.0);
                    }
                }
                Op::Act(Activation::Tanh) => {
                    for (yv, &xv) in y.iter_mut().zip(x) {
                        *yv = xv.tanh();
                    }
                }
            }
            acts.push(y);
        }
        (acts, argmax)
    }

    /// Raw outputs (logits for classification), row-major `n × outputs`.
    pub fn predict(&self, params: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check(params, batch)?;
        let (mut acts, _) = self.forward(params, batch);
        Ok(acts.pop().unwrap_or_default())
    }

    /// Top-1 accuracy in `[0, 1]` for class targets.
    pub fn accuracy(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        let out = self.predict(params, batch)?;
        let Targets::Classes(classes) = &batch.targets else {
            return Err(Error::Shape("accuracy needs class targets".into()));
        };
        let k = self.outputs;
        let correct = classes
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax_row(&out[i * k..(i + 1) * k]) == y)
            .count();
        Ok(correct as f64 / classes.len() as f64)
    }

    fn loss_from_outputs(&self, out: &[f64], targets: &Targets, want_grad: bool) -> (f64, Vec<f64>) {
        let k = self.outputs;
        let mut grad = if want_grad { vec![0.0; out.len()] } else { Vec::new() };
        match targets {
            Targets::Classes(classes) => {
                let n = classes.len() as f64;
                let mut total = 0.0;
                for (i, &y) in classes.iter().enumerate() {
                    let row = &out[i * k..(i + 1) * k];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    let lse = m + z.ln();
                    total += lse - row[y];
                    if want_grad {
                        let g = &mut grad[i * k..(i + 1) * k];
                        for (j, gj) in g.iter_mut().enumerate() {
                            *gj = (row[j] - lse).exp() / n;
                        }
                        g[y] -= 1.0 / n;
                    }
                }
                (total / n, grad)
            }
            Targets::Values { data, .. } => {
                let n = out.len() as f64;
                let mut total = 0.0;
                for (j, (o, t)) in out.iter().zip(data).enumerate() {
                    let d = o - t;
                    total += d * d;
                    if want_grad {
                        grad[j] = 2.0 * d / n;
                    }
                }
                (total / n, grad)
            }
        }
    }

    fn backward(
        &self,
        params: &[f64],
        acts: &[Vec<f64>],
        argmax: &[Vec<usize>],
        mut delta: Vec<f64>,
        n: usize,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        let mut pool_i = argmax.len();
        for (li, op) in self.ops.iter().enumerate().rev() {
            let x = &acts[li];
            let y = &acts[li + 1];
            let in_len = self.sizes[li];
            let out_len = self.sizes[li + 1];
            let need_dx = li > 0;
            let mut dx = if need_dx { vec![0.0; n * in_len] } else { Vec::new() };
            match *op {
                Op::Dense {
                    inputs,
                    outputs,
                    w,
                    b,
                } => {
                    for i in 0..n {
                        let xi = &x[i * inputs..(i + 1) * inputs];
                        let di = &delta[i * outputs..(i + 1) * outputs];
                        for (j, &dj) in di.iter().enumerate() {
                            if dj == 0.0 {
                                continue;
                            }
                            grad[b + j] += dj;
                            let gw = &mut grad[w + j * inputs..w + (j + 1) * inputs];
                            axpy(dj, xi, gw);
                            if need_dx {
                                let row = &params[w + j * inputs..w + (j + 1) * inputs];
                                axpy(dj, row, &mut dx[i * inputs..(i + 1) * inputs]);
                            }
                        }
                    }
                }
                Op::Conv {
                    c,
                    h,
                    wd,
                    oc,
                    k,
                    w,
                    b,
                } => {
                    let (oh, ow) = (h - k + 1, wd - k + 1);
                    for i in 0..n {
                        let xi = &x[i * in_len..(i + 1) * in_len];
                        let di = &delta[i * out_len..(i + 1) * out_len];
                        for o in 0..oc {
                            for r in 0..oh {
                                for s in 0..ow {
                                    let d = di[o * oh * ow + r * ow + s];
                                    if d == 0.0 {
                                        continue;
                                    }
                                    grad[b + o] += d;
                                    for ch in 0..c {
                                        for u in 0..k {
                                            let xrow = ch * h * wd + (r + u) * wd + s;
                                            let wrow = w + ((o * c + ch) * k + u) * k;
                                            axpy(d, &xi[xrow..xrow + k], &mut grad[wrow..wrow + k]);
                                            if need_dx {
                                                let base = i * in_len + xrow;
                                                axpy(d, &params[wrow..wrow + k], &mut dx[base..base + k]);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Pool { .. } => {
                    pool_i -= 1;
                    if need_dx {
                        let am = &argmax[pool_i];
                        for i in 0..n {
                            for q in 0..out_len {
                                let o = i * out_len + q;
                                dx[i * in_len + am[o]] += delta[o];
                            }
                        }
                    }
                }
                Op::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&delta);
                    }
                }
                Op::Act(Activation::Relu) => {
                    if need_dx {
                        for ((d, &xv), &dv) in dx.iter_mut().zip(x).zip(&delta) {
                            *d = if xv > 0.0 { dv } else { 0.0 };
                        }
                    }
                }
                Op::Act(Activation::Tanh) => {
                    if need_dx {
                        for ((d, &yv), &dv) in dx.iter_mut().zip(y).zip(&delta) {
                            *d = dv * (1.0 - yv * yv);
                        }
                    }
                }
            }
            if need_dx {
                delta = dx;
            }
        }
        grad
    }
}

impl Objective for Network {
    fn num_params(&self) -> usize {
        self.layer_map.total_len()
    }

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let (acts, _) = self.forward(params, batch);
        let (loss, _) = self.loss_from_outputs(acts.last().unwrap(), &batch.targets, false);
        finite(loss, "loss")
    }

    fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check(params, batch)?;
        let (acts, argmax) = self.forward(params, batch);
        let (loss, delta) = self.loss_from_outputs(acts.last().unwrap(), &batch.targets, true);
        let loss = finite(loss, "loss")?;
        let grad = self.backward(params, &acts, &argmax, delta, batch.size());
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((loss, grad))
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

pub(crate) fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
