//! Parameterized building blocks shared by the branches.

use retinexdual_autograd::{Conv2dOptions, PadMode, Real, Tensor, Var};

use crate::params::{Ctx, Init, ParamStore};

/// 2-D convolution layer descriptor.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
    pub pad_mode: PadMode,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride: 1,
            dilation: 1,
            groups: 1,
            bias: true,
            pad_mode: PadMode::Zero,
        }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn pad_mode(mut self, mode: PadMode) -> Self {
        self.pad_mode = mode;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin / self.groups, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.bias { self.cout } else { 0 }
    }

    fn fan_in(&self) -> usize {
        self.cin / self.groups * self.kernel * self.kernel
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        store.insert(self.weight_name(), init.fan_in_uniform(&self.weight_shape(), self.fan_in()));
        if self.bias {
            store.insert(self.bias_name(), init.fan_in_uniform(&[self.cout], self.fan_in()));
        }
    }

    pub fn init_zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(self.weight_name(), Tensor::zeros(self.weight_shape().to_vec()));
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.cout]));
        }
    }

    /// Weight that copies input channel `i` to output channel `i` for
    /// `i < min(cin, cout)`, scaled by `gain`; remaining outputs keep `rest`.
    pub fn dirac<T: Real>(&self, rest: &Tensor<T>, channels: usize, gain: f64) -> Tensor<T> {
        assert_eq!(self.groups, 1, "dirac init needs an ungrouped conv");
        let mut w = rest.clone();
        let k = self.kernel;
        let (ci, kk) = (self.cin, k * k);
        for o in 0..channels.min(self.cout) {
            for v in &mut w.data_mut()[o * ci * kk..(o + 1) * ci * kk] {
                *v = T::zero();
            }
            w.data_mut()[(o * ci + o) * kk + (k / 2) * k + k / 2] = T::lit(gain);
        }
        w
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let w = ctx.param(&self.weight_name());
        let b = self.bias.then(|| ctx.param(&self.bias_name()));
        let pad = self.dilation * (self.kernel - 1) / 2;
        let opts = Conv2dOptions { stride: self.stride, padding: pad, dilation: self.dilation, groups: self.groups };
        match self.pad_mode {
            PadMode::Zero => x.conv2d(&w, b.as_ref(), opts),
            mode => {
                let xp = x.pad([pad; 4], mode);
                xp.conv2d(&w, b.as_ref(), Conv2dOptions { padding: 0, ..opts })
            }
        }
    }
}

/// Token-wise affine map `x W + b` with `W: [din, dout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Self { name: name.into(), din, dout, bias: true }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn param_count(&self) -> usize {
        self.din * self.dout + if self.bias { self.dout } else { 0 }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        store.insert(self.weight_name(), init.fan_in_uniform(&[self.din, self.dout], self.din));
        if self.bias {
            store.insert(self.bias_name(), init.fan_in_uniform(&[self.dout], self.din));
        }
    }

    pub fn init_zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(self.weight_name(), Tensor::zeros([self.din, self.dout]));
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.dout]));
        }
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let w = ctx.param(&self.weight_name());
        let b = self.bias.then(|| ctx.param(&self.bias_name()));
        x.linear(&w, b.as_ref())
    }
}

/// Per-pixel layer normalization over channels with learnable affine.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(format!("{}.gamma", self.name), Tensor::ones([self.dim]));
        store.insert(format!("{}.beta", self.name), Tensor::zeros([self.dim]));
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let gamma = ctx.param(&format!("{}.gamma", self.name));
        let beta = ctx.param(&format!("{}.beta", self.name));
        x.layer_norm_channels(&gamma, &beta, Self::EPS)
    }
}

/// Learnable per-channel scale applied as `s ⊙ x` on NCHW input.
#[derive(Clone, Debug)]
pub struct ChannelScale {
    pub name: String,
    pub dim: usize,
}

impl ChannelScale {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn param_count(&self) -> usize {
        self.dim
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(self.name.clone(), Tensor::ones([self.dim]));
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let s = ctx.param(&self.name).reshape([self.dim, 1, 1]);
        x.mul(&s)
    }
}
