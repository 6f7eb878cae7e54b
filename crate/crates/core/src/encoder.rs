//! Linear projection heads with output normalization, the two-tower model,
//! and backpropagation through the normalization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{dot, EmbeddingTable, Seed, ZERO_NORM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_out: usize,
    d_in: usize,
    /// Row-major `d_out x d_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(d_out: usize, d_in: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if d_out < 2 || d_in == 0 {
            return Err(Error::InvalidParameter(format!(
                "head shape {d_out}x{d_in} is too small"
            )));
        }
        if weight.len() != d_out * d_in {
            return Err(Error::dim(d_out * d_in, weight.len()));
        }
        if bias.len() != d_out {
            return Err(Error::dim(d_out, bias.len()));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite head parameter".into()));
        }
        Ok(Self {
            d_out,
            d_in,
            weight,
            bias,
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut weight = vec![0.0; d * d];
        for i in 0..d {
            weight[i * d + i] = 1.0;
        }
        Self {
            d_out: d,
            d_in: d,
            weight,
            bias: vec![0.0; d],
        }
    }

    /// Entries drawn from N(0, 1/d_in), zero bias.
    pub fn random(d_out: usize, d_in: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        let weight = (0..d_out * d_in)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Self {
            d_out,
            d_in,
            weight,
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.d_in..(i + 1) * self.d_in]
    }

    /// `weight * x + bias`, before normalization.
    pub fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::dim(self.d_in, x.len()));
        }
        Ok((0..self.d_out)
            .map(|i| dot(self.weight_row(i), x) + self.bias[i])
            .collect())
    }

    /// `weight * x`, ignoring the bias.
    pub fn linear(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::dim(self.d_in, x.len()));
        }
        Ok((0..self.d_out).map(|i| dot(self.weight_row(i), x)).collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activation> {
        let pre = self.affine(x)?;
        let n = dot(&pre, &pre).sqrt();
        if n < ZERO_NORM {
            return Err(Error::ZeroVector(0));
        }
        let out = pre.iter().map(|v| v / n).collect();
        Ok(Activation { out, norm: n })
    }

    /// Accumulates the parameter gradient for one input given the gradient
    /// of the loss with respect to the normalized output.
    pub fn backward(&self, x: &[f64], act: &Activation, grad_out: &[f64], acc: &mut HeadGradient) {
        let proj = dot(&act.out, grad_out);
        let rows = acc.weight.chunks_exact_mut(self.d_in);
        for (((g, y), b), row) in grad_out.iter().zip(&act.out).zip(&mut acc.bias).zip(rows) {
            let dy = (g - y * proj) / act.norm;
            *b += dy;
            row.iter_mut().zip(x).for_each(|(w, xi)| *w += dy * xi);
        }
    }

    /// Encodes every row of a table.
    pub fn encode_table(&self, table: &EmbeddingTable) -> Result<EmbeddingTable> {
        if table.dim() != self.d_in {
            return Err(Error::dim(self.d_in, table.dim()));
        }
        let mut data = Vec::with_capacity(table.len() * self.d_out);
        for (i, row) in table.rows().enumerate() {
            let act = self
                .forward(row)
                .map_err(|_| Error::ZeroVector(i))?;
            data.extend(act.out);
        }
        EmbeddingTable::from_flat(self.d_out, data)?.assume_normalized()
    }
}

/// Normalized output of a head together with the pre-normalization norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub out: Vec<f64>,
    pub norm: f64,
}

/// `normalize(weight * raw + bias)`.
pub fn encode(head: &ProjectionHead, raw: &[f64]) -> Result<Vec<f64>> {
    Ok(head.forward(raw)?.out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderModel {
    pub query_head: ProjectionHead,
    pub image_head: ProjectionHead,
    pub temperature: f64,
}

impl DualEncoderModel {
    pub fn new(query_head: ProjectionHead, image_head: ProjectionHead, temperature: f64) -> Result<Self> {
        if query_head.d_out != image_head.d_out {
            return Err(Error::dim(query_head.d_out, image_head.d_out));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            query_head,
            image_head,
            temperature,
        })
    }

    pub fn identity(dim: usize, temperature: f64) -> Result<Self> {
        Self::new(
            ProjectionHead::identity(dim),
            ProjectionHead::identity(dim),
            temperature,
        )
    }

    pub fn d_out(&self) -> usize {
        self.query_head.d_out
    }

    pub fn zero_gradient(&self) -> GradientSet {
        GradientSet {
            query: HeadGradient::zeros(&self.query_head),
            image: HeadGradient::zeros(&self.image_head),
        }
    }

    /// All parameters in a fixed order: query weight, query bias, image
    /// weight, image bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for h in [&self.query_head, &self.image_head] {
            p.extend_from_slice(&h.weight);
            p.extend_from_slice(&h.bias);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        let n = |h: &ProjectionHead| h.weight.len() + h.bias.len();
        n(&self.query_head) + n(&self.image_head)
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut off = 0;
        for h in [&mut self.query_head, &mut self.image_head] {
            let (w, b) = (h.weight.len(), h.bias.len());
            h.weight.copy_from_slice(&p[off..off + w]);
            h.bias.copy_from_slice(&p[off + w..off + w + b]);
            off += w + b;
        }
    }
}

/// Cosine of the encoded query and image.
pub fn model_score(model: &DualEncoderModel, query_raw: &[f64], image_raw: &[f64]) -> Result<f64> {
    let q = encode(&model.query_head, query_raw)?;
    let i = encode(&model.image_head, image_raw)?;
    Ok(dot(&q, &i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Random,
    /// Exact identity heads; requires `d_out` equal to both input dims.
    Identity,
}

pub fn init_model(
    d_in_q: usize,
    d_in_i: usize,
    d_out: usize,
    seed: Seed,
    init: Init,
    temperature: f64,
) -> Result<DualEncoderModel> {
    if d_in_q < 2 || d_in_i < 2 || d_out < 2 {
        return Err(Error::InvalidParameter("model dimensions must be at least 2".into()));
    }
    match init {
        Init::Identity => {
            if d_in_q != d_out || d_in_i != d_out {
                return Err(Error::InvalidParameter(format!(
                    "identity init needs equal dims, got {d_in_q}, {d_in_i} -> {d_out}"
                )));
            }
            DualEncoderModel::identity(d_out, temperature)
        }
        Init::Random => {
            let mut rng = seed.rng();
            let q = ProjectionHead::random(d_out, d_in_q, &mut rng);
            let i = ProjectionHead::random(d_out, d_in_i, &mut rng);
            DualEncoderModel::new(q, i, temperature)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGradient {
    pub fn zeros(head: &ProjectionHead) -> Self {
        Self {
            weight: vec![0.0; head.weight.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }

    fn scale(&mut self, c: f64) {
        self.weight.iter_mut().chain(&mut self.bias).for_each(|g| *g *= c);
    }

    fn add(&mut self, other: &HeadGradient) {
        self.weight.iter_mut().zip(&other.weight).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }
}

/// Gradient congruent with [`DualEncoderModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub query: HeadGradient,
    pub image: HeadGradient,
}

impl GradientSet {
    pub fn scale(&mut self, c: f64) {
        self.query.scale(c);
        self.image.scale(c);
    }

    pub fn add(&mut self, other: &GradientSet) {
        self.query.add(&other.query);
        self.image.add(&other.image);
    }

    /// Same order as [`DualEncoderModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for h in [&self.query, &self.image] {
            out.extend_from_slice(&h.weight);
            out.extend_from_slice(&h.bias);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|g| g.is_finite())
    }
}
