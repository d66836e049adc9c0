//! Built-in oracle checks for the kernels, the matcher and the gradients.
//!
//! A named fault can be injected to confirm that a failing check is
//! reported; it perturbs the value under test, never the oracle.

use std::fmt;
use std::time::Instant;

use crate::aggregate::{aggregate_global, AggregationVariant, HeadParams};
use crate::encoder::{EncoderWeights, MultiLevelTokens};
use crate::error::Result;
use crate::matcher::{mutual_nn_match, ransac_verify, MatchPair, MatcherConfig};
use crate::numeric::{conv2d, linear, msa, MsaWeights, Rng, Tensor};
use crate::training::{head_grad, triplet_loss, Triplet};

pub const FAULTS: [&str; 4] = ["kernels", "matcher", "gradient", "equivariance"];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn gaussian(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_conv(fault: bool, rng: &mut Rng) -> Result<f64> {
    let (h, w, cin, cout) = (5, 6, 3, 4);
    let x = gaussian(&[h, w, cin], rng);
    let k = gaussian(&[3, 3, cin, cout], rng);
    let mut got = conv2d(&x, &k, None)?.into_data();
    if fault {
        got[0] += 1e-3;
    }
    let mut want = vec![0.0; h * w * cout];
    for y in 0..h {
        for xo in 0..w {
            for o in 0..cout {
                let mut s = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (y as isize + ky as isize - 1, xo as isize + kx as isize - 1);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for c in 0..cin {
                            s += x.data()[(iy as usize * w + ix as usize) * cin + c]
                                * k.data()[((ky * 3 + kx) * cin + c) * cout + o];
                        }
                    }
                }
                want[(y * w + xo) * cout + o] = s;
            }
        }
    }
    Ok(max_abs_diff(&got, &want))
}

fn check_linear(rng: &mut Rng) -> Result<f64> {
    let (n, din, dout) = (7, 5, 3);
    let x = gaussian(&[n, din], rng);
    let wt = gaussian(&[din, dout], rng);
    let b: Vec<f64> = (0..dout).map(|_| rng.normal()).collect();
    let got = linear(&x, &wt, Some(&b))?;
    let want: Vec<f64> = (0..n * dout)
        .map(|i| b[i % dout] + (0..din).map(|k| x.data()[(i / dout) * din + k] * wt.data()[k * dout + i % dout]).sum::<f64>())
        .collect();
    Ok(max_abs_diff(got.data(), &want))
}

fn check_msa(rng: &mut Rng) -> Result<f64> {
    let (n, d, heads) = (6, 8, 2);
    let dh = d / heads;
    let x = gaussian(&[n, d], rng);
    let mut w = MsaWeights::<f64>::zeros(d);
    for m in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo] {
        *m = gaussian(&[d, d], rng).map(|v| v * 0.3);
    }
    for b in [&mut w.bq, &mut w.bk, &mut w.bv, &mut w.bo] {
        *b = (0..d).map(|_| rng.normal()).collect();
    }
    let got = msa(&x, &w, heads)?;
    let proj = |m: &Tensor<f64>, b: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..d).map(|j| b[j] + (0..d).map(|k| x.row(i)[k] * m.row(k)[j]).sum::<f64>()).collect())
            .collect()
    };
    let (q, k, v) = (proj(&w.wq, &w.bq), proj(&w.wk, &w.bk), proj(&w.wv, &w.bv));
    let mut cat = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| r.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in r.clone() {
                cat[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let want: Vec<f64> = (0..n)
        .flat_map(|i| (0..d).map(|j| w.bo[j] + (0..d).map(|k| cat[i][k] * w.wo.row(k)[j]).sum::<f64>()).collect::<Vec<_>>())
        .collect();
    Ok(max_abs_diff(got.data(), &want))
}

fn check_mutual_nn(fault: bool, rng: &mut Rng) -> Result<bool> {
    let dim = 4;
    let mk = |m: usize, rng: &mut Rng| crate::aggregate::KeyPatches {
        coords: (0..m as i32).map(|i| [i, 0]).collect(),
        descs: (0..m * dim).map(|_| rng.normal() as f32).collect(),
        dim,
    };
    let (a, b) = (mk(20, rng), mk(17, rng));
    let mut got: Vec<(usize, usize)> = mutual_nn_match(&a, &b)?.iter().map(|p| (p.idx_a, p.idx_b)).collect();
    if fault {
        got.pop();
    }
    let dist = |i: usize, j: usize| -> f64 {
        a.desc(i).iter().zip(b.desc(j)).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
    };
    let mut want = Vec::new();
    for i in 0..a.len() {
        let mut jb = 0;
        for j in 1..b.len() {
            if dist(i, j) < dist(i, jb) {
                jb = j;
            }
        }
        let mut ib = 0;
        for i2 in 1..a.len() {
            if dist(i2, jb) < dist(ib, jb) {
                ib = i2;
            }
        }
        if ib == i {
            want.push((i, jb));
        }
    }
    Ok(got == want)
}

fn check_ransac_identity(rng: &mut Rng) -> Result<bool> {
    let pairs: Vec<MatchPair> = (0..20)
        .map(|i| {
            let p = [rng.range(0.0, 640.0), rng.range(0.0, 480.0)];
            MatchPair { idx_a: i, idx_b: i, coord_a: p, coord_b: p, dist: 0.0 }
        })
        .collect();
    Ok(ransac_verify(&pairs, &MatcherConfig::default(), 1)?.score == 20)
}

fn small_tokens(n: usize, d: usize, rng: &mut Rng) -> MultiLevelTokens<f64> {
    MultiLevelTokens {
        low: gaussian(&[n, d], rng),
        mid: gaussian(&[n, d], rng),
        high: gaussian(&[n, d], rng),
        rows: 1,
        cols: n,
        centers: (0..n as i32).map(|k| [16 * k + 8, 8]).collect(),
    }
}

/// Worst relative error of the analytic gradient against central differences.
fn check_gradient(fault: bool, rng: &mut Rng) -> Result<f64> {
    let (n, d, margin) = (5, 4, 1.5);
    let (q, p, ng) = (small_tokens(n, d, rng), small_tokens(n, d, rng), small_tokens(n, d, rng));
    let params = HeadParams::<f64>::random(AggregationVariant::Standard, d, rng);
    let (_, g) = head_grad(Triplet { query: &q, positive: &p, negative: &ng }, &params, margin)?;
    let mut analytic = g.flatten();
    if fault {
        analytic[0] *= 1.5;
        analytic[0] += 1e-3;
    }
    let loss = |flat: &[f64]| -> Result<f64> {
        let hp = params.unflatten(flat);
        let f = |t: &MultiLevelTokens<f64>| aggregate_global(hp.variant, t, &hp).map(|a| a.global);
        Ok(triplet_loss(&f(&q)?, &f(&p)?, &f(&ng)?, margin))
    };
    let base = params.flatten();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let (mut up, mut down) = (base.clone(), base.clone());
        up[i] += step;
        down[i] -= step;
        let num = (loss(&up)? - loss(&down)?) / (2.0 * step);
        worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
    }
    Ok(worst)
}

fn check_equivariance(fault: bool, rng: &mut Rng) -> Result<bool> {
    let (n, d) = (7, 8);
    let enc = EncoderWeights::<f64>::random(2, d, 2, 2, rng);
    let x = gaussian(&[n, d], rng);
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let base = enc.encode(&x)?;
    let mut permuted = enc.encode(&x.select_rows(&perm)?)?;
    if fault {
        permuted[0] = permuted[0].map(|v| v + 1e-12);
    }
    Ok(base.iter().zip(&permuted).all(|(b, p)| b.select_rows(&perm).map(|s| &s == p).unwrap_or(false)))
}

/// Runs every check; `fault` names one check to sabotage.
pub fn run_selftest(fault: Option<&str>) -> Vec<CheckResult> {
    let mut rng = Rng::seed(0x5e1f);
    let is = |name: &str| fault == Some(name);
    let mut out = Vec::new();
    let mut record = |name: &'static str, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CheckResult { name, passed, detail });
    };
    let started = Instant::now();
    record("conv2d oracle", check_conv(is("kernels"), &mut rng).map(|e| (e <= 1e-9, format!("max |diff| {e:.2e}"))));
    record("linear oracle", check_linear(&mut rng).map(|e| (e <= 1e-9, format!("max |diff| {e:.2e}"))));
    record("msa oracle", check_msa(&mut rng).map(|e| (e <= 1e-9, format!("max |diff| {e:.2e}"))));
    record(
        "mutual nearest neighbors",
        check_mutual_nn(is("matcher"), &mut rng).map(|ok| (ok, "exhaustive double loop".into())),
    );
    record(
        "ransac identity",
        check_ransac_identity(&mut rng).map(|ok| (ok, "20 identical pairs all inliers".into())),
    );
    record(
        "head gradient",
        check_gradient(is("gradient"), &mut rng).map(|e| (e <= 1e-4, format!("worst relative error {e:.2e}"))),
    );
    record(
        "encoder permutation equivariance",
        check_equivariance(is("equivariance"), &mut rng).map(|ok| (ok, "bit-exact".into())),
    );
    let secs = started.elapsed().as_secs_f64();
    out.push(CheckResult { name: "runtime", passed: secs < 60.0, detail: format!("{secs:.2} s") });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let r = run_selftest(None);
        assert!(r.iter().all(|c| c.passed), "{r:#?}");
    }

    #[test]
    fn every_fault_is_caught() {
        for f in FAULTS {
            assert!(run_selftest(Some(f)).iter().any(|c| !c.passed), "fault {f} not detected");
        }
    }
}
