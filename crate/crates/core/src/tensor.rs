//! Dense arrays for the attention math.
//!
//! Everything is stored channel-major: a [`FeatureMap`] of shape `[c, h, w]`
//! flattens losslessly into a [`ChannelMatrix`] of shape `[c, h*w]`, with
//! spatial position `p = row * w + col`.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ChannelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("matrix dims must be positive, got [{rows}, {cols}]")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data).expect("valid literal matrix")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what}: input contains NaN or infinity")))
        }
    }
}

/// Channel-major feature map `[c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "feature map dims must be positive, got [{channels}, {height}, {width}]"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature map [{channels}, {height}, {width}] needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
            .expect("positive dims")
    }

    /// Inverse of [`FeatureMap::flatten`].
    pub fn from_matrix(m: ChannelMatrix, height: usize, width: usize) -> Result<Self> {
        if m.cols() != height * width {
            return Err(Error::shape(format!(
                "cannot unflatten [{}, {}] into spatial {height}x{width}",
                m.rows(),
                m.cols()
            )));
        }
        let channels = m.rows();
        Self::new(channels, height, width, m.into_data())
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial positions `h * w`.
    #[inline]
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    pub fn flatten(&self) -> ChannelMatrix {
        ChannelMatrix::new(self.channels, self.positions(), self.data.clone())
            .expect("feature map dims are positive")
    }

    pub fn into_matrix(self) -> ChannelMatrix {
        ChannelMatrix::new(self.channels, self.height * self.width, self.data)
            .expect("feature map dims are positive")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Pointwise convolution: `out[o, p] = sum_i weight[o, i] * x[i, p] + bias[o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub weight: ChannelMatrix,
    pub bias: Vec<f64>,
}

impl Conv1x1 {
    pub fn new(weight: ChannelMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "conv1x1 bias length {} does not match out_channels {}",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            weight: ChannelMatrix::zeros(out_channels, in_channels),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_channels(&self) -> usize {
        self.weight.cols()
    }

    /// Applies the convolution to a flattened `[in, n]` matrix.
    pub fn apply_matrix(&self, x: &ChannelMatrix) -> Result<ChannelMatrix> {
        if x.rows() != self.in_channels() {
            return Err(Error::shape(format!(
                "conv1x1 expects {} input channels, got {}",
                self.in_channels(),
                x.rows()
            )));
        }
        let mut out = matmul(&self.weight, x)?;
        let n = out.cols();
        for (o, row) in out.data_mut().chunks_mut(n).enumerate() {
            let b = self.bias[o];
            row.iter_mut().for_each(|v| *v += b);
        }
        Ok(out)
    }
}

pub fn conv1x1_apply(k: &Conv1x1, x: &FeatureMap) -> Result<FeatureMap> {
    let out = k.apply_matrix(&x.flatten())?;
    FeatureMap::from_matrix(out, x.height(), x.width())
}

/// `a * b`.
pub fn matmul(a: &ChannelMatrix, b: &ChannelMatrix) -> Result<ChannelMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "matmul of {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = b.cols;
    let mut out = ChannelMatrix::zeros(a.rows, n);
    for (i, out_row) in out.data.chunks_mut(n).enumerate() {
        for (t, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b.row(t)) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `aᵀ * b` without materializing the transpose.
pub fn matmul_tn(a: &ChannelMatrix, b: &ChannelMatrix) -> Result<ChannelMatrix> {
    if a.rows != b.rows {
        return Err(Error::shape(format!(
            "matmul of transpose({:?}) by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = b.cols;
    let mut out = ChannelMatrix::zeros(a.cols, n);
    for t in 0..a.rows {
        let b_row = b.row(t);
        for (i, &av) in a.row(t).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a * bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &ChannelMatrix, b: &ChannelMatrix) -> Result<ChannelMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape(format!(
            "matmul of {:?} by transpose({:?})",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = ChannelMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Softmax over each row, with per-row max subtraction.
pub fn softmax_rows(m: &ChannelMatrix) -> Result<ChannelMatrix> {
    m.ensure_finite("softmax_rows")?;
    let mut out = m.clone();
    let cols = out.cols;
    out.data.chunks_mut(cols).for_each(softmax_in_place);
    Ok(out)
}

/// Softmax over each column, with per-column max subtraction.
pub fn softmax_columns(m: &ChannelMatrix) -> Result<ChannelMatrix> {
    m.ensure_finite("softmax_columns")?;
    let mut out = m.clone();
    let mut column = vec![0.0; m.rows];
    for c in 0..m.cols {
        for (r, v) in column.iter_mut().enumerate() {
            *v = m.get(r, c);
        }
        softmax_in_place(&mut column);
        for (r, &v) in column.iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// `out[j] = sum_i m[i, j]^2`.
pub fn square_sum_columns(m: &ChannelMatrix) -> Result<Vec<f64>> {
    m.ensure_finite("square_sum_columns")?;
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v * v;
        }
    }
    Ok(out)
}

/// Indices of the `k` largest scores, in descending score order. Equal
/// scores are ordered by ascending index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::argument(format!(
            "k = {k} must lie in [1, {}]",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score at index {i} is not finite")));
    }
    let by_rank = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_rank);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_rank);
    Ok(idx)
}
