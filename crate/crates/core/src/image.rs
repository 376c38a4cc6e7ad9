//! `C x H x W` image with values in `[-1, 1]`, plus PNG and tensor conversion.

use std::path::Path;

use dda_tensor::{Float, Tensor};
use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(ImageTensor { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f32) -> Self {
        ImageTensor { channels, height, width, data: vec![v; channels * height * width] }
    }

    /// Builds an image from a per-pixel function of `(channel, row, col)`.
    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        ImageTensor { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(), other.shape())))
        }
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
        self
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Round trip through the 8-bit PNG encoding.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = from_u8(to_u8(*v));
        }
        out
    }

    /// This image as a `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
    }

    /// Sample `i` of an NCHW batch.
    pub fn from_batch<T: Float>(t: &Tensor<T>, i: usize) -> Result<Self> {
        if t.shape().len() != 4 {
            return Err(Error::Shape(format!("expected NCHW batch, got {:?}", t.shape())));
        }
        let (n, c, h, w) = t.dims4();
        if i >= n {
            return Err(Error::Shape(format!("sample {i} of a batch of {n}")));
        }
        let per = c * h * w;
        let data = t.data()[i * per..(i + 1) * per].iter().map(|v| v.as_f64() as f32).collect();
        Self::new(c, h, w, data)
    }

    pub fn batch_to_vec<T: Float>(t: &Tensor<T>) -> Result<Vec<Self>> {
        (0..t.shape()[0]).map(|i| Self::from_batch(t, i)).collect()
    }

    /// Stacks equally-shaped images into a `[N, C, H, W]` tensor.
    pub fn stack<T: Float>(images: &[ImageTensor]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            first.ensure_same_shape(im, "stack")?;
            data.extend(im.data.iter().map(|&v| T::of(v as f64)));
        }
        Ok(Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_fn(w, h, |x, y| Luma([to_u8(self.get(0, y as usize, x as usize))]));
                buf.save(path)?;
            }
            3 => {
                let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
                    let (x, y) = (x as usize, y as usize);
                    Rgb([to_u8(self.get(0, y, x)), to_u8(self.get(1, y, x)), to_u8(self.get(2, y, x))])
                });
                buf.save(path)?;
            }
            c => return Err(Error::Invalid(format!("cannot write a {c}-channel PNG"))),
        }
        Ok(())
    }

    /// Loads a PNG as `channels` channels (1 = luma, 3 = RGB).
    pub fn load_png(path: &Path, channels: usize) -> Result<Self> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match channels {
            1 => {
                let g = img.to_luma8();
                Self::new(1, h, w, g.pixels().map(|p| from_u8(p.0[0])).collect())
            }
            3 => {
                let rgb = img.to_rgb8();
                Ok(Self::from_fn(3, h, w, |c, y, x| from_u8(rgb.get_pixel(x as u32, y as u32).0[c])))
            }
            c => Err(Error::Invalid(format!("cannot read a {c}-channel PNG"))),
        }
    }
}

/// `[-1, 1]` to `[0, 255]` by affine rescale, rounding to nearest.
pub fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round()) as u8
}

pub fn from_u8(b: u8) -> f32 {
    b as f32 / 255.0 * 2.0 - 1.0
}

/// Boolean per-pixel mask, row-major `H x W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("mask of {} values for {height}x{width}", data.len())));
        }
        Ok(Mask { height, width, data })
    }

    pub fn all(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![true; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all(&self) -> bool {
        self.data.iter().all(|&b| b)
    }
}
