//! Augmented self-attention: queries from the novel view attend over the
//! concatenation of input-view and novel-view tokens.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;

/// Linear maps applied to tokens before attention, each `C × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub query: DMatrix<f64>,
    pub key: DMatrix<f64>,
    pub value: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    /// `None` means identity projections.
    pub projections: Option<Projections>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 1,
            projections: None,
        }
    }
}

/// Attention output and the split attention map. With several heads the
/// maps are averaged over heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// N × D
    pub output: DMatrix<f64>,
    /// N × M, weights on input-view tokens
    pub a_cross: DMatrix<f64>,
    /// N × N, weights on novel-view tokens
    pub a_self: DMatrix<f64>,
}

impl AttentionResult {
    pub fn queries(&self) -> usize {
        self.a_self.nrows()
    }

    /// Total weight query `n` places on novel-view tokens.
    pub fn self_mass(&self, n: usize) -> f64 {
        self.a_self.row(n).sum()
    }

    pub fn cross_mass(&self, n: usize) -> f64 {
        self.a_cross.row(n).sum()
    }
}

/// Flattens a grid into one token per pixel, row-major.
pub fn grid_tokens(grid: &FeatureGrid) -> DMatrix<f64> {
    DMatrix::from_row_slice(grid.width() * grid.height(), grid.channels(), grid.data())
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return;
    }
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        z += *l;
    }
    for l in logits.iter_mut() {
        *l /= z;
    }
}

fn project(tokens: &DMatrix<f64>, w: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match w {
        None => Ok(tokens.clone()),
        Some(w) if w.nrows() == tokens.ncols() => Ok(tokens * w),
        Some(w) => Err(Error::ShapeMismatch(format!(
            "projection expects {} input channels, tokens have {}",
            w.nrows(),
            tokens.ncols()
        ))),
    }
}

pub fn augmented_attention(
    f_i: &DMatrix<f64>,
    f_j: &DMatrix<f64>,
    config: &AttentionConfig,
) -> Result<AttentionResult> {
    if f_i.ncols() != f_j.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "input view has {} channels, novel view has {}",
            f_i.ncols(),
            f_j.ncols()
        )));
    }
    if config.heads == 0 {
        return Err(Error::InvalidArgument("head count must be positive".into()));
    }
    let p = config.projections.as_ref();
    let q = project(f_j, p.map(|p| &p.query))?;
    let keys = project(&concat_rows(f_i, f_j), p.map(|p| &p.key))?;
    let values = project(&concat_rows(f_i, f_j), p.map(|p| &p.value))?;
    if q.ncols() != keys.ncols() {
        return Err(Error::ShapeMismatch("query and key projections differ in width".into()));
    }
    let heads = config.heads;
    if q.ncols() % heads != 0 || values.ncols() % heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "width {} not divisible into {heads} heads",
            q.ncols()
        )));
    }

    let (m, n) = (f_i.nrows(), f_j.nrows());
    let total = m + n;
    let dk = q.ncols() / heads;
    let dv = values.ncols() / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|row| {
            let mut map = vec![0.0; total];
            let mut out = vec![0.0; values.ncols()];
            let mut logits = vec![0.0; total];
            for h in 0..heads {
                let qh = q.view((row, h * dk), (1, dk));
                for (t, l) in logits.iter_mut().enumerate() {
                    *l = qh.dot(&keys.view((t, h * dk), (1, dk))) * scale;
                }
                softmax_in_place(&mut logits);
                for (t, w) in logits.iter().enumerate() {
                    map[t] += w / heads as f64;
                    for c in 0..dv {
                        out[h * dv + c] += w * values[(t, h * dv + c)];
                    }
                }
            }
            (map, out)
        })
        .collect();

    let mut a_cross = DMatrix::zeros(n, m);
    let mut a_self = DMatrix::zeros(n, n);
    let mut output = DMatrix::zeros(n, values.ncols());
    for (row, (map, out)) in rows.iter().enumerate() {
        for t in 0..m {
            a_cross[(row, t)] = map[t];
        }
        for t in 0..n {
            a_self[(row, t)] = map[m + t];
        }
        for (c, v) in out.iter().enumerate() {
            output[(row, c)] = *v;
        }
    }
    Ok(AttentionResult {
        output,
        a_cross,
        a_self,
    })
}

fn concat_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Reshapes row `query` of `a_cross` and `a_self` into two `height × width` grids.
pub fn attention_heatmaps(
    result: &AttentionResult,
    query: usize,
    (height, width): (usize, usize),
) -> Result<(FeatureGrid, FeatureGrid)> {
    let n = result.queries();
    if query >= n {
        return Err(Error::IndexOutOfRange { index: query, len: n });
    }
    let m = result.a_cross.ncols();
    if width * height != m || width * height != n {
        return Err(Error::ShapeMismatch(format!(
            "{height}×{width} heatmap cannot hold {m} input and {n} novel tokens"
        )));
    }
    let cross = result.a_cross.row(query).iter().copied().collect();
    let selfm = result.a_self.row(query).iter().copied().collect();
    Ok((
        FeatureGrid::new(width, height, 1, cross)?,
        FeatureGrid::new(width, height, 1, selfm)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthoracle::oracle::dense_attention;
    use proptest::prelude::*;

    fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    #[test]
    fn single_equal_token_splits_evenly() {
        let t = DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0]);
        let r = augmented_attention(&t, &t, &AttentionConfig::default()).unwrap();
        assert_eq!(r.a_cross[(0, 0)], 0.5);
        assert_eq!(r.a_self[(0, 0)], 0.5);
        assert_eq!(r.output, t);
    }

    #[test]
    fn toy_case_matches_oracle() {
        let fi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let fj = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, -1.0, 1.5]);
        let r = augmented_attention(&fi, &fj, &AttentionConfig::default()).unwrap();
        let keys: Vec<Vec<f64>> = rows_of(&fi).into_iter().chain(rows_of(&fj)).collect();
        let (w, out) = dense_attention(&rows_of(&fj), &keys, &keys, 1.0 / 2f64.sqrt());
        for n in 0..2 {
            for t in 0..2 {
                assert!((r.a_cross[(n, t)] - w[n][t]).abs() < 1e-12);
                assert!((r.a_self[(n, t)] - w[n][2 + t]).abs() < 1e-12);
                assert!((r.output[(n, t)] - out[n][t]).abs() < 1e-12);
            }
        }
        let (hc, hs) = attention_heatmaps(&r, 1, (1, 2)).unwrap();
        assert!((hc.pixel(1, 0)[0] - w[1][1]).abs() < 1e-12);
        assert!((hs.pixel(0, 0)[0] - w[1][2]).abs() < 1e-12);
    }

    #[test]
    fn empty_input_view_is_plain_self_attention() {
        let fj = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.2, 0.4, -0.3, 0.9]);
        let fi = DMatrix::zeros(0, 2);
        let r = augmented_attention(&fi, &fj, &AttentionConfig::default()).unwrap();
        assert_eq!(r.a_cross.ncols(), 0);
        let rows = rows_of(&fj);
        let (w, out) = dense_attention(&rows, &rows, &rows, 1.0 / 2f64.sqrt());
        for n in 0..3 {
            for t in 0..3 {
                assert!((r.a_self[(n, t)] - w[n][t]).abs() < 1e-12);
            }
            for c in 0..2 {
                assert!((r.output[(n, c)] - out[n][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heatmap_cases() {
        let z = DMatrix::zeros(4, 2);
        let r = augmented_attention(&z, &z, &AttentionConfig::default()).unwrap();
        let (c, s) = attention_heatmaps(&r, 2, (2, 2)).unwrap();
        assert!(c.data().iter().chain(s.data()).all(|v| (v - 0.125).abs() < 1e-15));
        assert!(matches!(
            attention_heatmaps(&r, 4, (2, 2)),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
        assert!(attention_heatmaps(&r, 0, (1, 3)).is_err());

        let mut fi = DMatrix::zeros(4, 1);
        fi[(3, 0)] = 60.0;
        let fj = DMatrix::from_element(4, 1, 1.0);
        let r = augmented_attention(&fi, &fj, &AttentionConfig::default()).unwrap();
        let (c, _) = attention_heatmaps(&r, 0, (2, 2)).unwrap();
        assert_eq!(c.pixel(1, 1)[0], 1.0);
        assert!(c.pixel(0, 0)[0] < 1e-20);
    }

    #[test]
    fn shape_errors() {
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 4);
        assert!(matches!(
            augmented_attention(&a, &b, &AttentionConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        let cfg = AttentionConfig {
            heads: 2,
            projections: None,
        };
        assert!(augmented_attention(&a, &a, &cfg).is_err());
    }

    #[test]
    fn projections_and_heads() {
        let fi = DMatrix::from_fn(3, 2, |r, c| (r as f64 - c as f64) * 0.3);
        let fj = DMatrix::from_fn(2, 2, |r, c| (r + c) as f64 * 0.25);
        let proj = Projections {
            query: DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, -0.5]),
            key: DMatrix::from_row_slice(2, 4, &[0.2, 1.0, 0.0, 0.3, 1.0, 0.0, 0.7, 0.0]),
            value: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        };
        let cfg = AttentionConfig {
            heads: 2,
            projections: Some(proj.clone()),
        };
        let r = augmented_attention(&fi, &fj, &cfg).unwrap();
        let keys_in = concat_rows(&fi, &fj);
        let q = &fj * &proj.query;
        let k = &keys_in * &proj.key;
        let v = &keys_in * &proj.value;
        for h in 0..2 {
            let qh = rows_of(&q.columns(2 * h, 2).into_owned());
            let kh = rows_of(&k.columns(2 * h, 2).into_owned());
            let vh = rows_of(&v.columns(h, 1).into_owned());
            let (_, out) = dense_attention(&qh, &kh, &vh, 1.0 / 2f64.sqrt());
            for n in 0..2 {
                assert!((r.output[(n, h)] - out[n][0]).abs() < 1e-12);
            }
        }
        for n in 0..2 {
            assert!((r.cross_mass(n) + r.self_mass(n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturated_rows_stay_finite() {
        let mut l = vec![1e6, 0.0, -1e6];
        softmax_in_place(&mut l);
        assert_eq!(l, vec![1.0, 0.0, 0.0]);
    }

    fn tokens(max_rows: usize, dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (0..=max_rows).prop_flat_map(move |r| {
            prop::collection::vec(-2.0f64..2.0, r * dim).prop_map(move |v| DMatrix::from_row_slice(r, dim, &v))
        })
    }

    proptest! {
        #[test]
        fn matches_dense_oracle(
            (fi, fj) in (1usize..6).prop_flat_map(|d| (tokens(32, d), tokens(32, d).prop_filter("need a query", |m| m.nrows() > 0)))
        ) {
            let r = augmented_attention(&fi, &fj, &AttentionConfig::default()).unwrap();
            let keys: Vec<Vec<f64>> = rows_of(&fi).into_iter().chain(rows_of(&fj)).collect();
            let scale = 1.0 / (fi.ncols() as f64).sqrt();
            let (w, out) = dense_attention(&rows_of(&fj), &keys, &keys, scale);
            let m = fi.nrows();
            for n in 0..fj.nrows() {
                let mut sum = 0.0;
                for t in 0..keys.len() {
                    let a = if t < m { r.a_cross[(n, t)] } else { r.a_self[(n, t - m)] };
                    prop_assert!(a >= 0.0);
                    prop_assert!((a - w[n][t]).abs() < 1e-10);
                    sum += a;
                }
                prop_assert!((sum - 1.0).abs() < 1e-6);
                for c in 0..fi.ncols() {
                    prop_assert!((r.output[(n, c)] - out[n][c]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..64), shift in -50.0f64..50.0) {
            let mut a = logits.clone();
            let mut b: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            softmax_in_place(&mut a);
            softmax_in_place(&mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn input_view_permutation(fi in tokens(8, 3).prop_filter("nonempty", |m| m.nrows() > 1), fj in tokens(5, 3).prop_filter("nonempty", |m| m.nrows() > 0), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..fi.nrows()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted = DMatrix::from_fn(fi.nrows(), fi.ncols(), |r, c| fi[(perm[r], c)]);
            let cfg = AttentionConfig::default();
            let a = augmented_attention(&fi, &fj, &cfg).unwrap();
            let b = augmented_attention(&permuted, &fj, &cfg).unwrap();
            for n in 0..fj.nrows() {
                for (t, &p) in perm.iter().enumerate() {
                    prop_assert!((b.a_cross[(n, t)] - a.a_cross[(n, p)]).abs() < 1e-12);
                }
            }
            prop_assert!((a.output - b.output).abs().max() < 1e-12);
        }
    }
}
