//! Naive reference implementations shared by the integration tests. They are
//! written for clarity, not speed, and share no code with the library.

#![allow(dead_code)]

use tvpr::aggregate::{ImageDescriptor, KeyPatches};
use tvpr::encoder::MultiLevelTokens;
use tvpr::numeric::{MsaWeights, Rng, Tensor};
use tvpr::retrieval::{PlaceTag, QueryOutcome};

pub fn gaussian(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// `max |got - want| / max(1, max |want|)`.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max) / scale
}

pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&[f64]>) -> Vec<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = k.shape()[3];
    let px = |y: isize, xx: isize, c: usize| {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x.data()[(y as usize * w + xx as usize) * cin + c]
        }
    };
    let mut out = Vec::with_capacity(h * w * cout);
    for y in 0..h {
        for xx in 0..w {
            for o in 0..cout {
                let mut s = bias.map_or(0.0, |b| b[o]);
                for ky in 0..3 {
                    for kx in 0..3 {
                        for c in 0..cin {
                            let v = px(y as isize + ky as isize - 1, xx as isize + kx as isize - 1, c);
                            s += v * k.data()[((ky * 3 + kx) * cin + c) * cout + o];
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

pub fn linear_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>) -> Vec<f64> {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    let mut out = Vec::with_capacity(n * dout);
    for i in 0..n {
        for j in 0..dout {
            let mut s = bias.map_or(0.0, |b| b[j]);
            for k in 0..din {
                s += x.data()[i * din + k] * w.data()[k * dout + j];
            }
            out.push(s);
        }
    }
    out
}

pub fn msa_oracle(x: &Tensor<f64>, w: &MsaWeights<f64>, heads: usize) -> Vec<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let dh = d / heads;
    let q = linear_oracle(x, &w.wq, Some(&w.bq));
    let k = linear_oracle(x, &w.wk, Some(&w.bk));
    let v = linear_oracle(x, &w.wv, Some(&w.bv));
    let mut cat = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                cat[i * d + h * dh + c] = (0..n).map(|j| e[j] / z * v[j * d + h * dh + c]).sum();
            }
        }
    }
    linear_oracle(&Tensor::new(&[n, d], cat).unwrap(), &w.wo, Some(&w.bo))
}

pub fn random_msa(d: usize, rng: &mut Rng) -> MsaWeights<f64> {
    let s = 1.0 / (d as f64).sqrt();
    let mut m = || Tensor::from_fn(&[d, d], |_| s * rng.normal());
    let (wq, wk, wv, wo) = (m(), m(), m(), m());
    let mut b = || (0..d).map(|_| 0.1 * rng.normal()).collect::<Vec<f64>>();
    MsaWeights { wq, wk, wv, wo, bq: b(), bk: b(), bv: b(), bo: b() }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Mutual nearest neighbors by brute force; ties resolve to the lower index.
pub fn mutual_nn_oracle(a: &KeyPatches, b: &KeyPatches) -> Vec<(usize, usize)> {
    let nearest = |from: &KeyPatches, to: &KeyPatches, i: usize| {
        let mut best = (f64::INFINITY, 0);
        for j in 0..to.len() {
            let d = sq_dist(from.desc(i), to.desc(j));
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    };
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    (0..a.len())
        .filter_map(|i| {
            let j = nearest(a, b, i);
            (nearest(b, a, j) == i).then_some((i, j))
        })
        .collect()
}

/// Indices of the `k` nearest globals by a full stable sort.
pub fn topk_oracle(globals: &[Vec<f32>], query: &[f32], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = globals.iter().enumerate().map(|(i, g)| (sq_dist(g, query).sqrt(), i)).collect();
    d.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Recall by checking every ranked id against the radius, for each cut-off.
pub fn recall_oracle(outcomes: &[QueryOutcome], tags: &[PlaceTag], radius: f64, ns: &[usize]) -> Vec<f64> {
    let find = |id: &str| tags.iter().find(|t| t.id == id).unwrap();
    ns.iter()
        .map(|&n| {
            let hits = outcomes
                .iter()
                .filter(|o| {
                    let q = find(&o.query);
                    o.ranking().iter().take(n).any(|id| {
                        let r = find(id);
                        ((q.easting - r.easting).powi(2) + (q.northing - r.northing).powi(2)).sqrt() <= radius
                    })
                })
                .count();
            hits as f64 / outcomes.len() as f64
        })
        .collect()
}

pub fn random_keys(m: usize, dim: usize, rng: &mut Rng) -> KeyPatches {
    KeyPatches {
        coords: (0..m).map(|_| [rng.below(640) as i32, rng.below(480) as i32]).collect(),
        descs: (0..m * dim).map(|_| rng.normal() as f32).collect(),
        dim,
    }
}

pub fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn descriptor(id: &str, global: Vec<f32>, keys: KeyPatches) -> ImageDescriptor {
    ImageDescriptor { id: id.to_string(), rows: 30, cols: 40, global, keys }
}

pub fn random_tokens(n: usize, d: usize, rng: &mut Rng) -> MultiLevelTokens<f64> {
    MultiLevelTokens {
        low: gaussian(&[n, d], rng),
        mid: gaussian(&[n, d], rng),
        high: gaussian(&[n, d], rng),
        rows: 1,
        cols: n,
        centers: (0..n as i32).map(|k| [16 * k + 8, 8]).collect(),
    }
}

/// Applies `h` (row-major 3×3) to a point.
pub fn apply_h(h: &[[f64; 3]; 3], p: [f64; 2]) -> [f64; 2] {
    let w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
    [
        (h[0][0] * p[0] + h[0][1] * p[1] + h[0][2]) / w,
        (h[1][0] * p[0] + h[1][1] * p[1] + h[1][2]) / w,
    ]
}

/// A mild random perspective warp of a 640×480 frame.
pub fn random_homography(rng: &mut Rng) -> [[f64; 3]; 3] {
    let t = rng.range(-0.2, 0.2);
    let s = rng.range(0.85, 1.15);
    [
        [s * t.cos(), -s * t.sin(), rng.range(-40.0, 40.0)],
        [s * t.sin(), s * t.cos(), rng.range(-40.0, 40.0)],
        [rng.range(-2e-4, 2e-4), rng.range(-2e-4, 2e-4), 1.0],
    ]
}
