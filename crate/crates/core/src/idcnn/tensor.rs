use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array. Feature maps are `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                format!("tensor of shape {shape:?}"),
                len,
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(channels, height, width)` of a 3-D tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("feature map", "[C, H, W]", format!("{:?}", self.shape))),
        }
    }

    /// Plane `c` of a `[C, H, W]` tensor.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Stacks `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor<T>]) -> Result<Self> {
        let (_, h, w) = parts
            .first()
            .ok_or_else(|| Error::Argument("concatenating zero tensors".into()))?
            .chw()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape("channel concatenation", format!("{h}x{w}"), format!("{ph}x{pw}")));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![channels, h, w],
            data,
        })
    }

    /// Reverses the last axis.
    pub fn flip_width(&self) -> Self {
        let w = *self.shape.last().unwrap_or(&1);
        let mut data = self.data.clone();
        if w > 0 {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0f64; 3]).is_err());
        let t = Tensor::from_vec(vec![1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.chw().unwrap(), (1, 2, 2));
        assert_eq!(t.sum(), 10.0);
        assert!(Tensor::<f32>::zeros(vec![4]).chw().is_err());
    }

    #[test]
    fn concat_and_flip() {
        let a = Tensor::from_vec(vec![1, 1, 2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 1, 2], vec![3.0f32, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat_channels(&[a, b]).unwrap();
        assert_eq!(c.shape(), &[3, 1, 2]);
        assert_eq!(c.channel(2), &[5.0, 6.0]);
        assert_eq!(c.flip_width().data(), &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0]);
        let bad = Tensor::from_vec(vec![1, 2, 1], vec![0.0f32; 2]).unwrap();
        assert!(Tensor::concat_channels(&[c, bad]).is_err());
    }
}
