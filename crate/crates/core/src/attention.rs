//! Scaled dot-product attention, the multi-head wrapper, and the self /
//! bi-directional cross-modal compositions built from it.
//!
//! Sequence inputs are either `[T×d]` or batched `[B×T×d]`. Projections are
//! bias-free `d×d` matrices (`W_Q`, `W_K`, `W_V`, `W_O`).

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub num_heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, num_heads: usize) -> Result<Self> {
        if d_model == 0 || num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} must be a positive multiple of num_heads {num_heads}"
            )));
        }
        Ok(Self { d_model, num_heads })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn d_v(&self) -> usize {
        self.d_k()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub config: AttentionConfig,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl AttentionBlock {
    /// Glorot-uniform projections.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: AttentionConfig, rng: &mut R) -> Self {
        Self::with_qk_gain(store, name, config, 1.0, rng)
    }

    /// Glorot-uniform projections with the query and key matrices multiplied
    /// by `qk_gain`.
    pub fn with_qk_gain<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: AttentionConfig,
        qk_gain: f64,
        rng: &mut R,
    ) -> Self {
        let d = config.d_model;
        let mut mk = |suffix: &str, gain: f64, rng: &mut R| {
            let mut t = glorot_uniform(rng, &[d, d], d, d);
            if gain != 1.0 {
                t.data_mut().iter_mut().for_each(|v| *v *= gain);
            }
            store.add(format!("{name}.{suffix}"), t)
        };
        let w_q = mk("w_q", qk_gain, rng);
        let w_k = mk("w_k", qk_gain, rng);
        let w_v = mk("w_v", 1.0, rng);
        let w_o = mk("w_o", 1.0, rng);
        Self {
            config,
            w_q,
            w_k,
            w_v,
            w_o,
        }
    }

    /// Block whose four projections are identity matrices.
    pub fn identity(store: &mut ParamStore, name: &str, config: AttentionConfig) -> Self {
        let d = config.d_model;
        let mut mk = |suffix: &str| store.add(format!("{name}.{suffix}"), Tensor::identity(d));
        Self {
            config,
            w_q: mk("w_q"),
            w_k: mk("w_k"),
            w_v: mk("w_v"),
            w_o: mk("w_o"),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_q, self.w_k, self.w_v, self.w_o]
    }
}

/// Output of one attention evaluation. `weights` is `[B×m×n]` (or `[m×n]`
/// for unbatched inputs), row-stochastic over keys.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

/// `softmax(q·kᵀ / √d_k) · v`.
pub fn scaled_dot_product(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Attended> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    let unbatched = sq.len() == 2;
    let ranks_ok = sq.len() == sk.len() && sk.len() == sv.len() && (sq.len() == 2 || sq.len() == 3);
    if !ranks_ok {
        return Err(Error::dim(
            "scaled_dot_product",
            format!("q {sq:?}, k {sk:?}, v {sv:?}"),
        ));
    }
    let r = sq.len();
    if sq[r - 1] != sk[r - 1] || sk[r - 2] != sv[r - 2] || (r == 3 && (sq[0] != sk[0] || sk[0] != sv[0])) {
        return Err(Error::dim(
            "scaled_dot_product",
            format!("q {sq:?}, k {sk:?}, v {sv:?}"),
        ));
    }
    let (q3, k3, v3) = if unbatched {
        (
            g.reshape(q, &[1, sq[0], sq[1]])?,
            g.reshape(k, &[1, sk[0], sk[1]])?,
            g.reshape(v, &[1, sv[0], sv[1]])?,
        )
    } else {
        (q, k, v)
    };
    let d_k = sq[r - 1];
    let scores = g.bmm(q3, k3, true)?;
    let scaled = g.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = g.softmax_rows(scaled)?;
    let out = g.bmm(weights, v3, false)?;
    if unbatched {
        let output = g.reshape(out, &[sq[0], sv[1]])?;
        let weights = g.reshape(weights, &[sq[0], sk[0]])?;
        Ok(Attended { output, weights })
    } else {
        Ok(Attended { output: out, weights })
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadOutput {
    pub output: Var,
    /// One weight tensor per head, each `[B×m×n]`.
    pub head_weights: Vec<Var>,
}

/// Project, split into heads, attend per head, concatenate, project out.
pub fn multi_head(
    g: &mut Graph,
    params: &[Var],
    block: &AttentionBlock,
    q_in: Var,
    k_in: Var,
    v_in: Var,
) -> Result<MultiHeadOutput> {
    let d = block.config.d_model;
    let sq = g.shape(q_in).to_vec();
    let unbatched = sq.len() == 2;
    for s in [g.shape(q_in), g.shape(k_in), g.shape(v_in)] {
        if s.len() != sq.len() || !(s.len() == 2 || s.len() == 3) || s.last() != Some(&d) {
            return Err(Error::dim(
                "multi_head",
                format!("input shape {s:?} does not end in d_model {d}"),
            ));
        }
    }

    let project = |g: &mut Graph, x: Var, w: ParamId| -> Result<Var> {
        let s = g.shape(x).to_vec();
        let rows: usize = s[..s.len() - 1].iter().product();
        let flat = g.reshape(x, &[rows, d])?;
        let y = g.matmul(flat, params[w.index()])?;
        let (b, t) = if s.len() == 2 { (1, s[0]) } else { (s[0], s[1]) };
        g.reshape(y, &[b, t, d])
    };

    let q = project(g, q_in, block.w_q)?;
    let k = project(g, k_in, block.w_k)?;
    let v = project(g, v_in, block.w_v)?;

    let d_k = block.config.d_k();
    let mut heads = Vec::with_capacity(block.config.num_heads);
    let mut head_weights = Vec::with_capacity(block.config.num_heads);
    for h in 0..block.config.num_heads {
        let qh = g.slice_last(q, h * d_k, d_k)?;
        let kh = g.slice_last(k, h * d_k, d_k)?;
        let vh = g.slice_last(v, h * d_k, d_k)?;
        let att = scaled_dot_product(g, qh, kh, vh)?;
        heads.push(att.output);
        head_weights.push(att.weights);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_last(&heads)?
    };
    let out = project(g, joined, block.w_o)?;
    let output = if unbatched { g.reshape(out, &[sq[0], d])? } else { out };
    Ok(MultiHeadOutput { output, head_weights })
}

/// Queries, keys and values all come from `x`.
pub fn self_attention(g: &mut Graph, params: &[Var], block: &AttentionBlock, x: Var) -> Result<Var> {
    Ok(multi_head(g, params, block, x, x, x)?.output)
}

/// Bi-directional cross-modal attention: `[A attends to B ‖ B attends to A]`
/// along the feature axis, so the output is `2·d_model` wide.
pub fn cross_modal_pair(
    g: &mut Graph,
    params: &[Var],
    block_ab: &AttentionBlock,
    block_ba: &AttentionBlock,
    a: Var,
    b: Var,
) -> Result<Var> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != sb.len() || (sa.len() == 3 && sa[0] != sb[0]) {
        return Err(Error::shapes("cross_modal_pair", sa, sb));
    }
    let ab = multi_head(g, params, block_ab, a, b, b)?.output;
    let ba = multi_head(g, params, block_ba, b, a, a)?.output;
    if g.shape(ab) != g.shape(ba) {
        return Err(Error::shapes("cross_modal_pair", g.shape(ab), g.shape(ba)));
    }
    g.concat_last(&[ab, ba])
}

/// Writes one sample's attention matrix as CSV: row = query index, column =
/// key index.
pub fn write_weights_csv<W: Write>(weights: &Tensor, sample: usize, out: &mut W) -> Result<()> {
    let s = weights.shape();
    let (m, n, offset) = match s.len() {
        2 => (s[0], s[1], 0),
        3 if sample < s[0] => (s[1], s[2], sample * s[1] * s[2]),
        _ => return Err(Error::dim("write_weights_csv", format!("{s:?}, sample {sample}"))),
    };
    let header: Vec<String> = (0..n).map(|j| format!("key_{j}")).collect();
    writeln!(out, "query,{}", header.join(","))?;
    for i in 0..m {
        let row = &weights.data()[offset + i * n..offset + (i + 1) * n];
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{i},{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn rand_t(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn config_requires_divisibility() {
        assert!(AttentionConfig::new(32, 2).is_ok());
        assert!(AttentionConfig::new(30, 4).is_err());
        assert_eq!(AttentionConfig::new(32, 4).unwrap().d_k(), 8);
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut rng = rng_from(0);
        let mut g = Graph::new();
        let q = g.input(rand_t(&mut rng, &[3, 2]));
        let k = g.input(rand_t(&mut rng, &[1, 2]));
        let v = g.input(Tensor::from_rows(&[&[5.0, 7.0]]));
        let a = scaled_dot_product(&mut g, q, k, v).unwrap();
        for r in 0..3 {
            assert_eq!(g.value(a.output).row(r), &[5.0, 7.0]);
        }
    }

    #[test]
    fn zero_query_averages_values() {
        let mut rng = rng_from(1);
        let mut g = Graph::new();
        let q = g.input(Tensor::zeros(&[2, 3]));
        let k = g.input(rand_t(&mut rng, &[4, 3]));
        let vt = rand_t(&mut rng, &[4, 2]);
        let mean: Vec<f64> = (0..2)
            .map(|c| (0..4).map(|r| vt.data()[r * 2 + c]).sum::<f64>() / 4.0)
            .collect();
        let v = g.input(vt);
        let a = scaled_dot_product(&mut g, q, k, v).unwrap();
        for r in 0..2 {
            for (got, want) in g.value(a.output).row(r).iter().zip(&mean) {
                assert!((got - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let q = g.input(Tensor::zeros(&[2, 3]));
        let k = g.input(Tensor::zeros(&[2, 4]));
        let v = g.input(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            scaled_dot_product(&mut g, q, k, v),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn weights_csv_layout() {
        let w = Tensor::from_rows(&[&[0.25, 0.75], &[1.0, 0.0]]);
        let mut buf = Vec::new();
        write_weights_csv(&w, 0, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "query,key_0,key_1\n0,0.25,0.75\n1,1,0\n"
        );
    }
}
