//! Plain-loop reference implementations shared by integration tests.
#![allow(dead_code)]

pub mod fixtures;
pub mod golden;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &ctxparse_autodiff::Tensor) -> Mat {
    t.to_rows()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn softmax_row(r: &[f64]) -> Vec<f64> {
    let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `softmax(q W k^T) k`.
pub fn bilinear_attention(q: &Mat, w: &Mat, k: &Mat) -> Mat {
    let scores = matmul(&matmul(q, w), &transpose(k));
    let alpha: Mat = scores.iter().map(|r| softmax_row(r)).collect();
    matmul(&alpha, k)
}

pub struct TransformerWeights {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub heads: usize,
    pub eps: f64,
}

/// Multi-head self-attention, residual, layer norm with affine, ReLU FFN.
pub fn transformer_layer(x: &Mat, p: &TransformerWeights) -> Mat {
    let n = x.len();
    let d = x[0].len();
    let dk = d / p.heads;
    let q = matmul(x, &p.w_q);
    let k = matmul(x, &p.w_k);
    let v = matmul(x, &p.w_v);
    let mut z = vec![vec![0.0; d]; n];
    for h in 0..p.heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let alpha = softmax_row(&scores);
            for c in cols.clone() {
                z[i][c] = (0..n).map(|j| alpha[j] * v[j][c]).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let y: Vec<f64> = (0..d).map(|c| x[i][c] + z[i][c]).collect();
        let mean = y.iter().sum::<f64>() / d as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let normed: Vec<f64> = (0..d)
            .map(|c| (y[c] - mean) / (var + p.eps).sqrt() * p.gain[c] + p.bias[c])
            .collect();
        let hidden: Vec<f64> = (0..p.b1.len())
            .map(|j| ((0..d).map(|c| normed[c] * p.w1[c][j]).sum::<f64>() + p.b1[j]).max(0.0))
            .collect();
        out.push(
            (0..d)
                .map(|c| (0..hidden.len()).map(|j| hidden[j] * p.w2[j][c]).sum::<f64>() + p.b2[c])
                .collect(),
        );
    }
    out
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
