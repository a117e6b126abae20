//! Expression-feature fusion and cross-attention kernels over loaded weights.
//!
//! All arithmetic is in f64; weights may come from f32 files.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// Length of the blendshape (FACS) weight vector.
pub const BLENDSHAPE_DIM: usize = 16;
/// Length of the morphable-model expression code.
pub const MORPHABLE_DIM: usize = 100;
/// Length of the fused expression vector.
pub const EXPRESSION_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ExpressionError {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix data has {found} values for {rows}×{cols}")]
    MatrixData {
        rows: usize,
        cols: usize,
        found: usize,
    },
    #[error("key dimension must be positive")]
    KeyDimension,
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("unknown attention site {0:?}")]
    UnknownSite(String),
}

fn expect(what: &'static str, expected: usize, found: usize) -> Result<(), ExpressionError> {
    if expected == found {
        Ok(())
    } else {
        Err(ExpressionError::Dimension {
            what,
            expected,
            found,
        })
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ExpressionError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(ExpressionError::MatrixData {
                rows,
                cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self, ExpressionError> {
        Self::new(rows, cols, data.iter().map(|v| *v as f64).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, ExpressionError> {
        expect("inner dimension", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix, ExpressionError> {
        expect("inner dimension", self.cols, other.cols)?;
        let data = (0..self.rows)
            .flat_map(|i| (0..other.rows).map(move |j| (i, j)))
            .map(|(i, j)| {
                self.row(i)
                    .iter()
                    .zip(other.row(j))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: other.rows,
            data,
        })
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, ExpressionError> {
        expect("vector length", self.cols, v.len())?;
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => silu(x),
        }
    }
}

/// `x · σ(x)`.
pub fn silu(x: f64) -> f64 {
    x / (1.0 + Float::exp(-x))
}

/// `y = act(W x + b)` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ExpressionError> {
        let mut y = self.weight.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v = self.activation.apply(*v + b);
        }
        Ok(y)
    }
}

/// Projections of one cross-attention site. Queries come from `D`-wide
/// inputs and keys/values from `D_ctx`-wide context rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSite {
    /// `D × d_k`.
    pub w_q: Matrix,
    /// `D_ctx × d_k`.
    pub w_k: Matrix,
    /// `D_ctx × D_out`.
    pub w_v: Matrix,
    pub d_k: usize,
}

impl AttentionSite {
    pub fn validate(&self) -> Result<(), ExpressionError> {
        if self.d_k == 0 {
            return Err(ExpressionError::KeyDimension);
        }
        expect("query projection width", self.d_k, self.w_q.cols)?;
        expect("key projection width", self.d_k, self.w_k.cols)?;
        expect("value projection height", self.w_k.rows, self.w_v.rows)
    }
}

/// Fixed weights of the expression pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineWeights {
    /// `EXPRESSION_DIM × (BLENDSHAPE_DIM + MORPHABLE_DIM)`.
    pub projection: Matrix,
    pub projection_bias: Vec<f64>,
    /// Applied in order to `[f_exp; f_id]`.
    pub mlp: Vec<Layer>,
    pub identity_dim: usize,
    /// Named attention sites.
    pub attention: Vec<(String, AttentionSite)>,
}

impl PipelineWeights {
    /// Checks that every shape composes.
    pub fn validate(&self) -> Result<(), ExpressionError> {
        expect("projection rows", EXPRESSION_DIM, self.projection.rows)?;
        expect(
            "projection columns",
            BLENDSHAPE_DIM + MORPHABLE_DIM,
            self.projection.cols,
        )?;
        expect(
            "projection bias",
            EXPRESSION_DIM,
            self.projection_bias.len(),
        )?;
        let mut width = EXPRESSION_DIM + self.identity_dim;
        for layer in &self.mlp {
            expect("mlp layer input", width, layer.weight.cols)?;
            expect("mlp layer bias", layer.weight.rows, layer.bias.len())?;
            width = layer.weight.rows;
        }
        let finite = |m: &Matrix| m.data.iter().all(|v| v.is_finite());
        if !finite(&self.projection) || !self.projection_bias.iter().all(|v| v.is_finite()) {
            return Err(ExpressionError::NonFinite("projection"));
        }
        if !self
            .mlp
            .iter()
            .all(|l| finite(&l.weight) && l.bias.iter().all(|v| v.is_finite()))
        {
            return Err(ExpressionError::NonFinite("mlp"));
        }
        for (_, site) in &self.attention {
            site.validate()?;
            if !(finite(&site.w_q) && finite(&site.w_k) && finite(&site.w_v)) {
                return Err(ExpressionError::NonFinite("attention"));
            }
        }
        Ok(())
    }

    /// Width of the fused drive vector.
    pub fn drive_dim(&self) -> usize {
        self.mlp
            .last()
            .map_or(EXPRESSION_DIM + self.identity_dim, |l| l.weight.rows)
    }

    pub fn site(&self, name: &str) -> Result<&AttentionSite, ExpressionError> {
        self.attention
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| ExpressionError::UnknownSite(name.into()))
    }
}

/// Rasterized morphable-model vertex positions, `height × width × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Raw per-frame inputs of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionInputs {
    pub f_mm: Vec<f64>,
    pub f_bs: Vec<f64>,
    pub f_id: Vec<f64>,
    pub f_pos: PositionMap,
}

/// Fused drive vector paired with the untouched position map.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveFeature<'a> {
    pub fused: Vec<f64>,
    pub f_pos: &'a PositionMap,
}

/// `f_exp = P · [f_bs; f_mm] + b`.
pub fn encode_expression(
    f_bs: &[f64],
    f_mm: &[f64],
    weights: &PipelineWeights,
) -> Result<Vec<f64>, ExpressionError> {
    expect("blendshape weights", BLENDSHAPE_DIM, f_bs.len())?;
    expect("expression code", MORPHABLE_DIM, f_mm.len())?;
    expect(
        "projection bias",
        weights.projection.rows,
        weights.projection_bias.len(),
    )?;
    let input: Vec<f64> = f_bs.iter().chain(f_mm).copied().collect();
    let mut out = weights.projection.matvec(&input)?;
    for (v, b) in out.iter_mut().zip(&weights.projection_bias) {
        *v += b;
    }
    Ok(out)
}

/// Runs the MLP on `[f_exp; f_id]` and pairs the result with `f_pos`.
pub fn build_drive<'a>(
    f_exp: &[f64],
    f_id: &[f64],
    f_pos: &'a PositionMap,
    weights: &PipelineWeights,
) -> Result<DriveFeature<'a>, ExpressionError> {
    expect("expression vector", EXPRESSION_DIM, f_exp.len())?;
    expect("identity feature", weights.identity_dim, f_id.len())?;
    expect(
        "position map",
        3 * f_pos.width * f_pos.height,
        f_pos.data.len(),
    )?;
    let mut x: Vec<f64> = f_exp.iter().chain(f_id).copied().collect();
    for layer in &weights.mlp {
        expect("mlp layer bias", layer.weight.rows, layer.bias.len())?;
        x = layer.forward(&x)?;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(ExpressionError::NonFinite("drive feature"));
    }
    Ok(DriveFeature { fused: x, f_pos })
}

/// Numerically stable row-wise softmax (each row shifted by its maximum).
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows {
        let row = &mut out.data[i * m.cols..(i + 1) * m.cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = Float::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `softmax((f_in W_Q)(f_ctx W_K)ᵀ / √d_k) (f_ctx W_V)`.
pub fn cross_attention(
    f_in: &Matrix,
    f_ctx: &Matrix,
    site: &AttentionSite,
) -> Result<Matrix, ExpressionError> {
    site.validate()?;
    expect("input width", site.w_q.rows, f_in.cols)?;
    expect("context width", site.w_k.rows, f_ctx.cols)?;
    let q = f_in.matmul(&site.w_q)?;
    let k = f_ctx.matmul(&site.w_k)?;
    let v = f_ctx.matmul(&site.w_v)?;
    let scale = 1.0 / Float::sqrt(site.d_k as f64);
    let logits = q.matmul_t(&k)?.map(|x| x * scale);
    softmax_rows(&logits).matmul(&v)
}

/// Factor applied to the residual input of [`dual_cross_attention`]:
/// division by `√d_k`.
pub fn residual_factor(d_k: usize) -> f64 {
    1.0 / Float::sqrt(d_k as f64)
}

/// Two cross-attentions sharing one site's projections, over the reference
/// and text contexts, plus the residual `f_sty · residual_factor(d_k)`.
pub fn dual_cross_attention(
    f_sty: &Matrix,
    f_ref: &Matrix,
    f_txt: &Matrix,
    site: &AttentionSite,
) -> Result<Matrix, ExpressionError> {
    let a = cross_attention(f_sty, f_ref, site)?;
    let b = cross_attention(f_sty, f_txt, site)?;
    expect("residual width", a.cols, f_sty.cols)?;
    let r = residual_factor(site.d_k);
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .zip(&f_sty.data)
        .map(|((x, y), s)| x + y + s * r)
        .collect();
    Matrix::new(a.rows, a.cols, data)
}
