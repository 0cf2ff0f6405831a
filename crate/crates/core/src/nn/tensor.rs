use crate::error::{DmcError, Result};

/// Dense `[batch, channels, length]` array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(batch: usize, channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if batch == 0 || channels == 0 || length == 0 {
            return Err(DmcError::shape(format!("zero dimension in [{batch}, {channels}, {length}]")));
        }
        if data.len() != batch * channels * length {
            return Err(DmcError::shape(format!(
                "[{batch}, {channels}, {length}] needs {} values, got {}",
                batch * channels * length,
                data.len()
            )));
        }
        Ok(Self { batch, channels, length, data })
    }

    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self { batch, channels, length, data: vec![0.0; batch * channels * length] }
    }

    /// Stacks equal-length single-channel rows into `[rows.len(), 1, len]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let length = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != length) {
            return Err(DmcError::shape("rows of unequal length"));
        }
        Self::new(rows.len(), 1, length, rows.concat())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
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

    /// All channels of one batch item.
    pub fn item(&self, b: usize) -> &[f64] {
        let s = self.channels * self.length;
        &self.data[b * s..(b + 1) * s]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let s = self.channels * self.length;
        &mut self.data[b * s..(b + 1) * s]
    }

    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.length;
        &self.data[start..start + self.length]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.channels + c) * self.length;
        &mut self.data[start..start + self.length]
    }

    /// Copy of one batch item as a batch of one.
    pub fn select(&self, b: usize) -> Self {
        Self { batch: 1, channels: self.channels, length: self.length, data: self.item(b).to_vec() }
    }

    /// Same data viewed with a different per-item shape.
    pub fn reshaped(self, channels: usize, length: usize) -> Result<Self> {
        Self::new(self.batch, channels, length, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        assert_eq!(self.dims(), other.dims(), "add_assign shape");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    /// Channel-wise concatenation `[a | b]`.
    pub fn concat_channels(a: &Tensor3, b: &Tensor3) -> Result<Self> {
        if a.batch != b.batch || a.length != b.length {
            return Err(DmcError::shape(format!("cannot concat {:?} and {:?}", a.dims(), b.dims())));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..a.batch {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Self::new(a.batch, a.channels + b.channels, a.length, data)
    }

    /// Inverse of [`Tensor3::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        assert!(first > 0 && first < self.channels);
        let (l, rest) = (self.length, self.channels - first);
        let mut a = Vec::with_capacity(self.batch * first * l);
        let mut b = Vec::with_capacity(self.batch * rest * l);
        for i in 0..self.batch {
            let item = self.item(i);
            a.extend_from_slice(&item[..first * l]);
            b.extend_from_slice(&item[first * l..]);
        }
        (
            Self { batch: self.batch, channels: first, length: l, data: a },
            Self { batch: self.batch, channels: rest, length: l, data: b },
        )
    }

    /// Window `[start, start + len)` along the length axis.
    pub fn slice_length(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.length && len > 0);
        let mut data = Vec::with_capacity(self.batch * self.channels * len);
        for row in self.data.chunks_exact(self.length) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Self { batch: self.batch, channels: self.channels, length: len, data }
    }

    /// Joins tensors along the length axis.
    pub fn concat_length(parts: &[Tensor3]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| DmcError::shape("nothing to concatenate"))?;
        if parts.iter().any(|p| p.batch != first.batch || p.channels != first.channels) {
            return Err(DmcError::shape("length concat needs equal batch and channels"));
        }
        let length: usize = parts.iter().map(|p| p.length).sum();
        let rows = first.batch * first.channels;
        let mut data = Vec::with_capacity(rows * length);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(&p.data[r * p.length..(r + 1) * p.length]);
            }
        }
        Self::new(first.batch, first.channels, length, data)
    }

    /// Channel `c` of every item as a `[batch, 1, length]` tensor.
    pub fn channel(&self, c: usize) -> Self {
        let mut data = Vec::with_capacity(self.batch * self.length);
        for b in 0..self.batch {
            data.extend_from_slice(self.row(b, c));
        }
        Self { batch: self.batch, channels: 1, length: self.length, data }
    }

    /// Joins single-channel tensors into one `[batch, parts.len(), length]`.
    pub fn stack_channels(parts: &[Tensor3]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| DmcError::shape("nothing to stack"))?;
        if parts.iter().any(|p| p.dims() != (first.batch, 1, first.length)) {
            return Err(DmcError::shape("stack needs single-channel tensors of equal shape"));
        }
        let mut data = Vec::with_capacity(first.batch * parts.len() * first.length);
        for b in 0..first.batch {
            for p in parts {
                data.extend_from_slice(p.row(b, 0));
            }
        }
        Self::new(first.batch, parts.len(), first.length, data)
    }
}
