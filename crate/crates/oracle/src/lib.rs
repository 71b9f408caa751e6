//! Deliberately naive reference implementations for cross-checking the
//! optimized code in `rtext-core`. Everything works on `Vec<f64>` and
//! favours obviousness over speed.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

fn affine(w: &Rows, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += row[j] * x[j];
            }
            s + bi
        })
        .collect()
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| if *x > 0.0 { *x } else { 0.0 }).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// All weights of the composition network as plain nested vectors.
#[derive(Debug, Clone)]
pub struct NaiveFusion {
    pub lin_w: Rows,
    pub lin_b: Vec<f64>,
    pub im1_w: Rows,
    pub im1_b: Vec<f64>,
    pub t1_w: Rows,
    pub t1_b: Vec<f64>,
    pub t2_w: Rows,
    pub t2_b: Vec<f64>,
    pub w_r: f64,
    pub w_d: f64,
    /// `sigmoid(f) * image` instead of `sigmoid(f * image)`.
    pub tirg: bool,
    pub l2: bool,
}

/// Gradients of one forward pass, with the shared first layer split into
/// the copy seen by the reference branch and the copy seen by the residual
/// branch.
#[derive(Debug, Clone)]
pub struct UntiedGrads {
    pub lin_ref_w: Rows,
    pub lin_ref_b: Vec<f64>,
    pub lin_res_w: Rows,
    pub lin_res_b: Vec<f64>,
    pub im1_w: Rows,
    pub im1_b: Vec<f64>,
    pub t1_w: Rows,
    pub t1_b: Vec<f64>,
    pub t2_w: Rows,
    pub t2_b: Vec<f64>,
    pub w_r: f64,
    pub w_d: f64,
    pub image: Vec<f64>,
    pub text: Vec<f64>,
}

fn outer(g: &[f64], x: &[f64]) -> Rows {
    g.iter().map(|gi| x.iter().map(|xj| gi * xj).collect()).collect()
}

fn transpose_times(w: &Rows, g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, row) in w.iter().enumerate() {
        for j in 0..cols {
            out[j] += row[j] * g[i];
        }
    }
    out
}

impl NaiveFusion {
    pub fn forward(&self, image: &[f64], text: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = image.iter().chain(text).copied().collect();
        let h = relu(&affine(&self.lin_w, &self.lin_b, &x));
        let f = affine(&self.im1_w, &self.im1_b, &h);
        let f_ref: Vec<f64> = (0..image.len())
            .map(|i| {
                if self.tirg {
                    sig(f[i]) * image[i]
                } else {
                    sig(f[i] * image[i])
                }
            })
            .collect();
        let f_res = affine(&self.t2_w, &self.t2_b, &relu(&affine(&self.t1_w, &self.t1_b, &h)));
        let out: Vec<f64> = (0..image.len())
            .map(|i| self.w_r * f_ref[i] + self.w_d * f_res[i])
            .collect();
        if self.l2 {
            let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.iter().map(|v| v / n).collect()
        } else {
            out
        }
    }

    /// Straight-line backpropagation of `upstream = dL/d out`.
    pub fn backward_untied(&self, image: &[f64], text: &[f64], upstream: &[f64]) -> UntiedGrads {
        let di = image.len();
        let x: Vec<f64> = image.iter().chain(text).copied().collect();
        // two copies of the first layer, one per branch
        let z_ref = affine(&self.lin_w, &self.lin_b, &x);
        let z_res = affine(&self.lin_w, &self.lin_b, &x);
        let h_ref = relu(&z_ref);
        let h_res = relu(&z_res);
        let f = affine(&self.im1_w, &self.im1_b, &h_ref);
        let gate_arg: Vec<f64> = (0..di).map(|i| if self.tirg { f[i] } else { f[i] * image[i] }).collect();
        let s: Vec<f64> = gate_arg.iter().map(|v| sig(*v)).collect();
        let f_ref: Vec<f64> = (0..di).map(|i| if self.tirg { s[i] * image[i] } else { s[i] }).collect();
        let f_r = affine(&self.t1_w, &self.t1_b, &h_res);
        let a = relu(&f_r);
        let f_res = affine(&self.t2_w, &self.t2_b, &a);
        let mixed: Vec<f64> = (0..di).map(|i| self.w_r * f_ref[i] + self.w_d * f_res[i]).collect();

        let g_mixed: Vec<f64> = if self.l2 {
            let n = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
            let y: Vec<f64> = mixed.iter().map(|v| v / n).collect();
            let yg: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
            (0..di).map(|i| (upstream[i] - y[i] * yg) / n).collect()
        } else {
            upstream.to_vec()
        };
        let w_r: f64 = (0..di).map(|i| g_mixed[i] * f_ref[i]).sum();
        let w_d: f64 = (0..di).map(|i| g_mixed[i] * f_res[i]).sum();
        let g_fref: Vec<f64> = g_mixed.iter().map(|g| g * self.w_r).collect();
        let g_fres: Vec<f64> = g_mixed.iter().map(|g| g * self.w_d).collect();

        let mut g_image = vec![0.0; di];
        let mut g_f = vec![0.0; di];
        for i in 0..di {
            let ds = s[i] * (1.0 - s[i]);
            if self.tirg {
                g_f[i] = g_fref[i] * image[i] * ds;
                g_image[i] += g_fref[i] * s[i];
            } else {
                g_f[i] = g_fref[i] * ds * image[i];
                g_image[i] += g_fref[i] * ds * f[i];
            }
        }
        let g_h_ref = transpose_times(&self.im1_w, &g_f, h_ref.len());
        let g_z_ref: Vec<f64> = (0..z_ref.len()).map(|i| if z_ref[i] > 0.0 { g_h_ref[i] } else { 0.0 }).collect();

        let g_a = transpose_times(&self.t2_w, &g_fres, a.len());
        let g_fr: Vec<f64> = (0..f_r.len()).map(|i| if f_r[i] > 0.0 { g_a[i] } else { 0.0 }).collect();
        let g_h_res = transpose_times(&self.t1_w, &g_fr, h_res.len());
        let g_z_res: Vec<f64> = (0..z_res.len()).map(|i| if z_res[i] > 0.0 { g_h_res[i] } else { 0.0 }).collect();

        let g_x_ref = transpose_times(&self.lin_w, &g_z_ref, x.len());
        let g_x_res = transpose_times(&self.lin_w, &g_z_res, x.len());
        for i in 0..di {
            g_image[i] += g_x_ref[i] + g_x_res[i];
        }
        let g_text = (di..x.len()).map(|j| g_x_ref[j] + g_x_res[j]).collect();

        UntiedGrads {
            lin_ref_w: outer(&g_z_ref, &x),
            lin_ref_b: g_z_ref,
            lin_res_w: outer(&g_z_res, &x),
            lin_res_b: g_z_res,
            im1_w: outer(&g_f, &h_ref),
            im1_b: g_f,
            t1_w: outer(&g_fr, &h_res),
            t1_b: g_fr,
            t2_w: outer(&g_fres, &a),
            t2_b: g_fres,
            w_r,
            w_d,
            image: g_image,
            text: g_text,
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Summed hinge loss over `(a, p, n)` index triples and its gradient with
/// respect to every row.
pub fn triplet_loss(emb: &Rows, triplets: &[(usize, usize, usize)], margin: f64) -> (f64, Rows) {
    let dim = emb.first().map_or(0, |r| r.len());
    let mut grad = vec![vec![0.0; dim]; emb.len()];
    let mut loss = 0.0;
    for &(a, p, n) in triplets {
        let v = squared_distance(&emb[a], &emb[p]) - squared_distance(&emb[a], &emb[n]) + margin;
        if v > 0.0 {
            loss += v;
            for j in 0..dim {
                // d/da of |a-p|^2 - |a-n|^2 = 2(a-p) - 2(a-n) = 2(n-p)
                grad[a][j] += 2.0 * (emb[n][j] - emb[p][j]);
                grad[p][j] += -2.0 * (emb[a][j] - emb[p][j]);
                grad[n][j] += 2.0 * (emb[a][j] - emb[n][j]);
            }
        }
    }
    (loss, grad)
}

/// Mean softmax cross-entropy and its gradient.
pub fn cross_entropy(logits: &Rows, labels: &[usize]) -> (f64, Rows) {
    let b = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::new();
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += m + z.ln() - row[y];
        grad.push(
            row.iter()
                .enumerate()
                .map(|(c, v)| ((v - m).exp() / z - if c == y { 1.0 } else { 0.0 }) / b)
                .collect(),
        );
    }
    (loss / b, grad)
}

/// kNN prediction by fully sorting every training row.
///
/// Rows are ordered by distance, then by `tie` key. The label with the most
/// votes wins; among tied labels, the one appearing first in that order.
pub fn knn_exhaustive(train: &Rows, labels: &[usize], tie: &[u64], query: &[f64], k: usize, cosine: bool) -> usize {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(f64, u64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = if cosine {
                let den = norm(r) * norm(query);
                if den == 0.0 {
                    1.0
                } else {
                    1.0 - r.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / den
                }
            } else {
                squared_distance(r, query)
            };
            (d, tie[i], i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let top = &all[..k];
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for t in top {
        *votes.entry(labels[t.2]).or_default() += 1;
    }
    let best = *votes.values().max().unwrap();
    top.iter().map(|t| labels[t.2]).find(|l| votes[l] == best).unwrap()
}

/// Semi-hard selection by scanning every (anchor, positive, negative).
///
/// For each ordered same-class pair the negative is the closest one strictly
/// inside `(d_ap, d_ap + margin)`; failing that the closest one beyond
/// `d_ap`; failing that the farthest. Earlier indices win ties.
pub fn semi_hard_exhaustive(emb: &Rows, labels: &[usize], margin: f64) -> Vec<(usize, usize, usize)> {
    let n = emb.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = squared_distance(&emb[a], &emb[p]);
            let mut band: Option<(usize, f64)> = None;
            let mut beyond: Option<(usize, f64)> = None;
            let mut farthest: Option<(usize, f64)> = None;
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                let d = squared_distance(&emb[a], &emb[q]);
                if d > d_ap && d < d_ap + margin && band.is_none_or(|(_, b)| d < b) {
                    band = Some((q, d));
                }
                if d > d_ap && beyond.is_none_or(|(_, b)| d < b) {
                    beyond = Some((q, d));
                }
                if farthest.is_none_or(|(_, b)| d > b) {
                    farthest = Some((q, d));
                }
            }
            if let Some((q, _)) = band.or(beyond).or(farthest) {
                out.push((a, p, q));
            }
        }
    }
    out
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Per-subcategory accuracy, category mean of subcategories, overall mean of
/// categories, from `(category, subcategory, correct)` triples.
pub fn macro_average(
    outcomes: &[(String, String, bool)],
) -> (BTreeMap<String, f64>, BTreeMap<String, f64>, f64) {
    let mut tally: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (c, s, ok) in outcomes {
        let e = tally.entry((c.clone(), s.clone())).or_default();
        e.0 += *ok as usize;
        e.1 += 1;
    }
    let mut subs = BTreeMap::new();
    let mut cats: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((c, s), (hit, total)) in tally {
        let acc = hit as f64 / total as f64;
        subs.insert(s, acc);
        cats.entry(c).or_default().push(acc);
    }
    let cats: BTreeMap<String, f64> = cats
        .into_iter()
        .map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let overall = cats.values().sum::<f64>() / cats.len() as f64;
    (subs, cats, overall)
}

pub fn uniform_rows(seed: u64, n: usize, dim: usize) -> Rows {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Rows with small integer coordinates, so many distances coincide exactly.
pub fn grid_rows(seed: u64, n: usize, dim: usize, levels: i32) -> Rows {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0..levels) as f64).collect())
        .collect()
}

pub fn random_labels(seed: u64, n: usize, classes: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}
