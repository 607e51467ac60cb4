use super::Real;

/// A single-sample `channels x height x width` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor shape/data mismatch");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        let n = data.len();
        Self::from_vec(n, 1, 1, data)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[F] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

impl<F: Real> Tensor<F> {
    /// Stacks same-shaped images as channels.
    pub fn from_images(images: &[&crate::GridImage]) -> Self {
        let (h, w) = (images[0].height(), images[0].width());
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            assert!(img.height() == h && img.width() == w, "stacked images differ in shape");
            data.extend(img.values().iter().map(|&v| F::lit(v)));
        }
        Self::from_vec(images.len(), h, w, data)
    }

    pub fn to_image(&self, channel: usize) -> crate::GridImage {
        let values = self.channel(channel).iter().map(|&v| Real::to_f64(v)).collect();
        crate::GridImage::from_vec(self.width, self.height, values).expect("plane matches shape")
    }
}
