use crate::error::{Error, Result};

/// Dense 4-D array in row-major order. Activations use NHWC `(B, H, W, C)`,
/// kernels use HWIO `(KH, KW, IC, OC)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

/// Which axis of a [`Tensor4`] indexes input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    /// NHWC activation; channels on the last axis.
    Input,
    /// HWIO kernel; input channels on the third axis.
    Kernel,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "tensor {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite tensor entry at index {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn from_parts(dims: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::from_parts(dims, vec![0.0; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        data.push(f([a, b, c, d]));
                    }
                }
            }
        }
        Self::from_parts(dims, data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, d1, d2, d3] = self.dims;
        ((idx[0] * d1 + idx[1]) * d2 + idx[2]) * d3 + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn scale(&self, c: f64) -> Tensor4 {
        Tensor4::from_parts(self.dims, self.data.iter().map(|v| v * c).collect())
    }

    pub fn channel_axis(role: ChannelRole) -> usize {
        match role {
            ChannelRole::Input => 3,
            ChannelRole::Kernel => 2,
        }
    }

    /// Copies of the listed indices along `axis`, each multiplied by the
    /// matching factor.
    pub fn gather_scaled(&self, axis: usize, indices: &[usize], factors: &[f64]) -> Tensor4 {
        debug_assert_eq!(indices.len(), factors.len());
        let mut dims = self.dims;
        dims[axis] = indices.len();
        Tensor4::from_fn(dims, |mut idx| {
            let t = idx[axis];
            idx[axis] = indices[t];
            self.get(idx) * factors[t]
        })
    }

    /// Adds `src` (dims equal to `self` except `axis`, which has
    /// `indices.len()` entries) into the listed positions of `self`, each
    /// slice multiplied by its factor.
    pub(crate) fn scatter_add_scaled(&mut self, axis: usize, indices: &[usize], factors: &[f64], src: &Tensor4) {
        let sd = src.dims;
        for a in 0..sd[0] {
            for b in 0..sd[1] {
                for c in 0..sd[2] {
                    for d in 0..sd[3] {
                        let mut idx = [a, b, c, d];
                        let t = idx[axis];
                        let v = src.get(idx) * factors[t];
                        idx[axis] = indices[t];
                        let o = self.offset(idx);
                        self.data[o] += v;
                    }
                }
            }
        }
    }
}
