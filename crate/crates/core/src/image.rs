//! Image containers exchanged with the pipeline.

use retinexdual_autograd::{Real, Tensor};

use crate::error::{Error, Result};

/// An RGB image with values in `[0, 1]`, stored planar as `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Tensor<f32>,
}

impl ImageTensor {
    /// Planar `[3, H, W]` or batched `[1, 3, H, W]` data.
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let data = match data.shape() {
            [3, _, _] => data,
            [1, 3, h, w] => {
                let (h, w) = (*h, *w);
                data.reshape([3, h, w])
            }
            s => return Err(Error::Shape(format!("expected [3, H, W] image data, got {s:?}"))),
        };
        if !data.all_finite() {
            return Err(Error::NonFinite { what: "image".into() });
        }
        if data.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("image values must lie in [0, 1]".into()));
        }
        Ok(Self { data })
    }

    /// Clamp arbitrary finite data into an image.
    pub fn clamped(data: &Tensor<f32>) -> Result<Self> {
        Self::new(data.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        Self::new(Tensor::from_fn([3, height, width], |i| {
            let (c, rest) = (i / (height * width), i % (height * width));
            f(c, rest / width, rest % width)
        }))
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    /// `[1, 3, H, W]` batch in the requested precision.
    pub fn to_batch<T: Real>(&self) -> Tensor<T> {
        self.data.cast::<T>().reshape([1, 3, self.height(), self.width()])
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::Shape(format!("crop {h}x{w}+{y0}+{x0} outside {}x{}", self.height(), self.width())));
        }
        Self::from_fn(h, w, |c, y, x| self.get(c, y0 + y, x0 + x))
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width();
        Self::from_fn(self.height(), w, |c, y, x| self.get(c, y, w - 1 - x)).expect("flip preserves validity")
    }
}

/// Stack images of equal size into `[n, 3, H, W]`.
pub fn stack<T: Real>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for im in images {
        if (im.height(), im.width()) != (h, w) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        data.extend(im.tensor().data().iter().map(|&v| T::lit(v as f64)));
    }
    Ok(Tensor::new([images.len(), 3, h, w], data))
}

/// Decomposer output for one image: reflectance `[3, H, W]`, illumination `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RetinexPair {
    pub reflectance: Tensor<f32>,
    pub illumination: Tensor<f32>,
}

/// Result of restoring one image.
#[derive(Clone, Debug, PartialEq)]
pub struct RestorationOutput {
    pub final_image: ImageTensor,
    /// Scales 1, 1/2, 1/4.
    pub pyramid: Vec<ImageTensor>,
    pub retinex_pyramid: Vec<RetinexPair>,
    /// Decomposer output before any correction.
    pub decomposition: RetinexPair,
}
