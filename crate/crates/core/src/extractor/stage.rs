// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use super::ExtractorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    const ALL: [Activation; 4] = [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown activation `{s}`"))
    }
}

/// Row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ExtractorError> {
        if data.len() != rows * cols {
            return Err(ExtractorError::ShapeMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { rows: n, cols: n, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Parameters of one computation stage.
#[derive(Clone, Debug, PartialEq)]
pub enum StageParams {
    /// `activation(W x + b)` with `W` of shape `out x in`.
    Dense { weights: Matrix, bias: Vec<f64>, activation: Activation },
    /// One-dimensional valid cross-correlation; one kernel per row of
    /// `kernels`, one bias per kernel. Outputs are concatenated kernel-major.
    Convolution { kernels: Matrix, bias: Vec<f64>, activation: Activation },
    /// Non-overlapping max pooling.
    Pooling { size: usize },
    Activation { activation: Activation },
}

impl StageParams {
    pub fn kind(&self) -> &'static str {
        match self {
            StageParams::Dense { .. } => "dense",
            StageParams::Convolution { .. } => "convolution",
            StageParams::Pooling { .. } => "pooling",
            StageParams::Activation { .. } => "activation",
        }
    }

    pub fn dense(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, ExtractorError> {
        if bias.len() != weights.rows {
            return Err(ExtractorError::ShapeMismatch { expected: weights.rows, got: bias.len() });
        }
        Ok(StageParams::Dense { weights, bias, activation })
    }

    pub fn convolution(kernels: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, ExtractorError> {
        if bias.len() != kernels.rows {
            return Err(ExtractorError::ShapeMismatch { expected: kernels.rows, got: bias.len() });
        }
        if kernels.cols == 0 {
            return Err(ExtractorError::InvalidStage("convolution kernel width must be positive".into()));
        }
        Ok(StageParams::Convolution { kernels, bias, activation })
    }

    pub fn pooling(size: usize) -> Result<Self, ExtractorError> {
        if size == 0 {
            return Err(ExtractorError::InvalidStage("pool size must be positive".into()));
        }
        Ok(StageParams::Pooling { size })
    }

    /// Output length for an input of length `input`, or `ShapeMismatch`.
    pub fn output_dim(&self, input: usize) -> Result<usize, ExtractorError> {
        match self {
            StageParams::Dense { weights, .. } => {
                if input != weights.cols {
                    return Err(ExtractorError::ShapeMismatch { expected: weights.cols, got: input });
                }
                Ok(weights.rows)
            }
            StageParams::Convolution { kernels, .. } => {
                if input < kernels.cols {
                    return Err(ExtractorError::ShapeMismatch { expected: kernels.cols, got: input });
                }
                Ok(kernels.rows * (input - kernels.cols + 1))
            }
            StageParams::Pooling { size } => {
                if input == 0 || !input.is_multiple_of(*size) {
                    return Err(ExtractorError::ShapeMismatch { expected: input.div_ceil(*size) * size, got: input });
                }
                Ok(input / size)
            }
            StageParams::Activation { .. } => Ok(input),
        }
    }

    /// Nudges one parameter. Dense and convolution stages shift their first
    /// weight by `epsilon`; stages without real-valued parameters change their
    /// pool size or activation when `epsilon != 0`.
    pub fn perturb(&mut self, epsilon: f64) {
        if epsilon == 0.0 {
            return;
        }
        match self {
            StageParams::Dense { weights, .. } => weights.data[0] += epsilon,
            StageParams::Convolution { kernels, .. } => kernels.data[0] += epsilon,
            StageParams::Pooling { size } => *size += 1,
            StageParams::Activation { activation } => {
                let next = (activation.code() + 1) % Activation::ALL.len() as u8;
                *activation = Activation::from_code(next).expect("code in range");
            }
        }
    }

    /// Deterministic byte encoding: a kind tag, then every dimension as a
    /// big-endian u64 and every real as big-endian IEEE-754 bits, row-major.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
            out.extend((m.rows as u64).to_be_bytes());
            out.extend((m.cols as u64).to_be_bytes());
            for x in &m.data {
                out.extend(x.to_bits().to_be_bytes());
            }
        }
        fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
            out.extend((v.len() as u64).to_be_bytes());
            for x in v {
                out.extend(x.to_bits().to_be_bytes());
            }
        }
        match self {
            StageParams::Dense { weights, bias, activation } => {
                out.push(1);
                put_matrix(&mut out, weights);
                put_vec(&mut out, bias);
                out.push(activation.code());
            }
            StageParams::Convolution { kernels, bias, activation } => {
                out.push(2);
                put_matrix(&mut out, kernels);
                put_vec(&mut out, bias);
                out.push(activation.code());
            }
            StageParams::Pooling { size } => {
                out.push(3);
                out.extend((*size as u64).to_be_bytes());
            }
            StageParams::Activation { activation } => {
                out.push(4);
                out.push(activation.code());
            }
        }
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, ExtractorError> {
        let mut r = Reader { bytes, pos: 0 };
        let params = match r.u8()? {
            1 => {
                let weights = r.matrix()?;
                let bias = r.vector()?;
                StageParams::dense(weights, bias, r.activation()?)?
            }
            2 => {
                let kernels = r.matrix()?;
                let bias = r.vector()?;
                StageParams::convolution(kernels, bias, r.activation()?)?
            }
            3 => StageParams::pooling(r.len()?)?,
            4 => StageParams::Activation { activation: r.activation()? },
            tag => return Err(ExtractorError::Malformed(format!("unknown stage tag {tag}"))),
        };
        if r.pos != bytes.len() {
            return Err(ExtractorError::Malformed("trailing bytes after stage parameters".into()));
        }
        Ok(params)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ExtractorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ExtractorError::Malformed("truncated stage parameters".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ExtractorError> {
        Ok(self.take(1)?[0])
    }

    fn len(&mut self) -> Result<usize, ExtractorError> {
        let v = u64::from_be_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| ExtractorError::Malformed("dimension overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, ExtractorError> {
        Ok(f64::from_bits(u64::from_be_bytes(self.take(8)?.try_into().unwrap())))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>, ExtractorError> {
        if n > self.bytes.len() / 8 {
            return Err(ExtractorError::Malformed("dimension exceeds payload".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self) -> Result<Matrix, ExtractorError> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows.checked_mul(cols).ok_or_else(|| ExtractorError::Malformed("dimension overflow".into()))?;
        Matrix::new(rows, cols, self.reals(n)?)
    }

    fn vector(&mut self) -> Result<Vec<f64>, ExtractorError> {
        let n = self.len()?;
        self.reals(n)
    }

    fn activation(&mut self) -> Result<Activation, ExtractorError> {
        let code = self.u8()?;
        Activation::from_code(code).ok_or_else(|| ExtractorError::Malformed(format!("unknown activation {code}")))
    }
}

/// Runs one stage's forward computation.
pub fn apply_stage(input: &[f64], params: &StageParams) -> Result<Vec<f64>, ExtractorError> {
    params.output_dim(input.len())?;
    Ok(match params {
        StageParams::Dense { weights, bias, activation } => (0..weights.rows)
            .map(|r| {
                let dot: f64 = weights.row(r).iter().zip(input).map(|(w, x)| w * x).sum();
                activation.apply(dot + bias[r])
            })
            .collect(),
        StageParams::Convolution { kernels, bias, activation } => {
            let width = kernels.cols;
            let positions = input.len() - width + 1;
            let mut out = Vec::with_capacity(kernels.rows * positions);
            for k in 0..kernels.rows {
                let kernel = kernels.row(k);
                for p in 0..positions {
                    let dot: f64 = kernel.iter().zip(&input[p..p + width]).map(|(w, x)| w * x).sum();
                    out.push(activation.apply(dot + bias[k]));
                }
            }
            out
        }
        StageParams::Pooling { size } => input
            .chunks(*size)
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        StageParams::Activation { activation } => input.iter().map(|&x| activation.apply(x)).collect(),
    })
}

/// Big-endian IEEE-754 encoding of a real vector.
pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_bits().to_be_bytes()).collect()
}

pub fn decode_vector(bytes: &[u8]) -> Result<Vec<f64>, ExtractorError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(ExtractorError::Malformed(format!("{} bytes is not a whole number of reals", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    use super::*;

    fn naive_dense(w: &[Vec<f64>], b: &[f64], x: &[f64], act: Activation) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        for i in 0..w.len() {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += w[i][j] * x[j];
            }
            out[i] = act.apply(s + b[i]);
        }
        out
    }

    #[test]
    fn identity_dense_is_identity() {
        let p = StageParams::dense(Matrix::identity(4), vec![0.0; 4], Activation::Linear).unwrap();
        let x = vec![1.5, -2.0, 0.0, 9.25];
        assert_eq!(apply_stage(&x, &p).unwrap(), x);
    }

    #[test]
    fn max_pool_example() {
        let p = StageParams::pooling(2).unwrap();
        assert_eq!(apply_stage(&[1.0, 5.0, 3.0, 2.0], &p).unwrap(), vec![5.0, 3.0]);
        assert!(matches!(apply_stage(&[1.0, 2.0, 3.0], &p), Err(ExtractorError::ShapeMismatch { .. })));
    }

    #[test]
    fn dense_matches_naive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (rows, cols) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let w: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let act = Activation::ALL[rng.gen_range(0..4)];
            let m = Matrix::new(rows, cols, w.concat()).unwrap();
            let got = apply_stage(&x, &StageParams::dense(m, b.clone(), act).unwrap()).unwrap();
            for (g, e) in got.iter().zip(naive_dense(&w, &b, &x, act)) {
                assert!((g - e).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn convolution_valid_cross_correlation() {
        let k = Matrix::new(2, 2, vec![1.0, -1.0, 0.5, 0.5]).unwrap();
        let p = StageParams::convolution(k, vec![0.0, 1.0], Activation::Linear).unwrap();
        let out = apply_stage(&[1.0, 3.0, 6.0], &p).unwrap();
        assert_eq!(out, vec![-2.0, -3.0, 3.0, 5.5]);
        assert!(apply_stage(&[1.0], &p).is_err());
    }

    #[test]
    fn dense_shape_mismatch() {
        let p = StageParams::dense(Matrix::identity(3), vec![0.0; 3], Activation::Relu).unwrap();
        assert!(matches!(apply_stage(&[1.0; 4], &p), Err(ExtractorError::ShapeMismatch { expected: 3, got: 4 })));
        assert!(StageParams::dense(Matrix::identity(3), vec![0.0; 2], Activation::Relu).is_err());
    }

    #[test]
    fn perturb_changes_canonical_bytes() {
        let mut p = StageParams::dense(Matrix::identity(3), vec![0.0; 3], Activation::Relu).unwrap();
        let before = p.canonical_bytes();
        p.perturb(0.0);
        assert_eq!(p.canonical_bytes(), before);
        p.perturb(2f64.powi(-23));
        assert_ne!(p.canonical_bytes(), before);
        for mut q in [StageParams::pooling(2).unwrap(), StageParams::Activation { activation: Activation::Sigmoid }] {
            let b = q.canonical_bytes();
            q.perturb(1e-3);
            assert_ne!(q.canonical_bytes(), b);
        }
    }

    #[test]
    fn canonical_is_big_endian_row_major() {
        let p = StageParams::dense(Matrix::new(1, 2, vec![1.0, 2.0]).unwrap(), vec![0.5], Activation::Tanh).unwrap();
        let bytes = p.canonical_bytes();
        assert_eq!(bytes[0], 1);
        assert_eq!(&bytes[1..9], &1u64.to_be_bytes());
        assert_eq!(&bytes[9..17], &2u64.to_be_bytes());
        assert_eq!(&bytes[17..25], &1.0f64.to_bits().to_be_bytes());
        assert_eq!(&bytes[25..33], &2.0f64.to_bits().to_be_bytes());
        assert_eq!(*bytes.last().unwrap(), 2);
    }

    #[test]
    fn malformed_bytes_are_rejected() {
        assert!(StageParams::from_canonical_bytes(&[]).is_err());
        assert!(StageParams::from_canonical_bytes(&[9]).is_err());
        let mut b = StageParams::pooling(3).unwrap().canonical_bytes();
        b.push(0);
        assert!(StageParams::from_canonical_bytes(&b).is_err());
        // absurd dimensions must not allocate
        let mut huge = vec![1u8];
        huge.extend(u64::MAX.to_be_bytes());
        huge.extend(2u64.to_be_bytes());
        assert!(StageParams::from_canonical_bytes(&huge).is_err());
    }

    fn arb_stage() -> impl Strategy<Value = StageParams> {
        let act = (0u8..4).prop_map(|c| Activation::from_code(c).unwrap());
        prop_oneof![
            (1usize..5, 1usize..5, act.clone(), any::<u64>()).prop_map(|(r, c, a, s)| {
                let mut rng = ChaCha20Rng::seed_from_u64(s);
                let m = Matrix::new(r, c, (0..r * c).map(|_| rng.gen()).collect()).unwrap();
                StageParams::dense(m, (0..r).map(|_| rng.gen()).collect(), a).unwrap()
            }),
            (1usize..4, 1usize..4, act.clone(), any::<u64>()).prop_map(|(r, c, a, s)| {
                let mut rng = ChaCha20Rng::seed_from_u64(s);
                let m = Matrix::new(r, c, (0..r * c).map(|_| rng.gen()).collect()).unwrap();
                StageParams::convolution(m, (0..r).map(|_| rng.gen()).collect(), a).unwrap()
            }),
            (1usize..8).prop_map(|s| StageParams::pooling(s).unwrap()),
            act.prop_map(|activation| StageParams::Activation { activation }),
        ]
    }

    proptest! {
        #[test]
        fn canonical_round_trip(p in arb_stage()) {
            let bytes = p.canonical_bytes();
            prop_assert_eq!(StageParams::from_canonical_bytes(&bytes).unwrap(), p);
        }

        #[test]
        fn vector_encoding_round_trip(v in proptest::collection::vec(any::<f64>(), 0..32)) {
            let back = decode_vector(&encode_vector(&v)).unwrap();
            prop_assert_eq!(encode_vector(&back), encode_vector(&v));
        }
    }
}
