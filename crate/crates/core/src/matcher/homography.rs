//! Normalized DLT homography estimation.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Points whose homogeneous weight falls below this map to infinity.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-9;
/// Minimum triangle area, in Hartley-normalized coordinates, for a
/// minimal sample to count as non-collinear.
pub const COLLINEAR_AREA_TOL: f64 = 1e-6;

/// 3×3 projective transform mapping source pixels to destination pixels.
/// Scaled so `h33 = 1`, or to unit Frobenius norm when `h33 ≈ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Canonical scaling plus an invertibility check.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let fro = m.norm();
        if !(fro > 0.0) || !fro.is_finite() {
            return Err(Error::Degenerate("homography is zero or non-finite".into()));
        }
        let unit = m / fro;
        if unit.determinant().abs() < 1e-12 {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        let h33 = m[(2, 2)];
        let scaled = if h33.abs() > 1e-12 * fro { m / h33 } else { unit };
        Ok(Homography(scaled))
    }

    /// Maps `p`; `None` when the point lands at (or near) infinity.
    pub fn project(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let q = self.0 * Vector3::new(p[0], p[1], 1.0);
        if q[2].abs() < MIN_HOMOGENEOUS_W {
            return None;
        }
        Some([q[0] / q[2], q[1] / q[2]])
    }

    /// Forward reprojection error `‖H·src − dst‖₂`, infinite when unmappable.
    pub fn transfer_error(&self, src: [f64; 2], dst: [f64; 2]) -> f64 {
        match self.project(src) {
            Some(p) => ((p[0] - dst[0]).powi(2) + (p[1] - dst[1]).powi(2)).sqrt(),
            None => f64::INFINITY,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography not invertible".into()))?;
        Self::from_matrix(inv)
    }
}

/// Hartley normalization: centroid to origin, mean distance `sqrt(2)`.
fn hartley(points: &[[f64; 2]]) -> (Matrix3<f64>, Vec<[f64; 2]>) {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let normalized = points.iter().map(|p| [s * (p[0] - cx), s * (p[1] - cy)]).collect();
    (t, normalized)
}

fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
}

/// For four points: any collinear triple. For more: all points on one line.
fn degenerate_configuration(normalized: &[[f64; 2]]) -> bool {
    let n = normalized.len();
    if n == 4 {
        for skip in 0..4 {
            let tri: Vec<[f64; 2]> = (0..4).filter(|&i| i != skip).map(|i| normalized[i]).collect();
            if triangle_area(tri[0], tri[1], tri[2]) < COLLINEAR_AREA_TOL {
                return true;
            }
        }
        return false;
    }
    // Points are centered; the smaller principal spread vanishes iff collinear.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in normalized {
        sxx += p[0] * p[0];
        sxy += p[0] * p[1];
        syy += p[1] * p[1];
    }
    let (sxx, sxy, syy) = (sxx / n as f64, sxy / n as f64, syy / n as f64);
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let minor = tr / 2.0 - disc;
    minor.max(0.0).sqrt() < COLLINEAR_AREA_TOL
}

/// Least-squares homography from `src[i] → dst[i]` by normalized DLT:
/// null-space direction (least singular value) of the `2n×9` design matrix.
pub fn estimate_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Homography> {
    let n = src.len();
    if dst.len() != n {
        return Err(Error::shape(format!(
            "{n} source points but {} destination points",
            dst.len()
        )));
    }
    if n < 4 {
        return Err(Error::Degenerate(format!("need at least 4 correspondences, got {n}")));
    }
    let (t_src, sn) = hartley(src);
    let (t_dst, dn) = hartley(dst);
    if degenerate_configuration(&sn) || degenerate_configuration(&dn) {
        return Err(Error::Degenerate("collinear correspondences".into()));
    }

    // Pad to at least nine rows so the SVD yields a full right basis.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let [x, y] = sn[i];
        let [u, v] = dn[i];
        let r = 2 * i;
        a[(r, 3)] = -x;
        a[(r, 4)] = -y;
        a[(r, 5)] = -1.0;
        a[(r, 6)] = v * x;
        a[(r, 7)] = v * y;
        a[(r, 8)] = v;
        a[(r + 1, 0)] = x;
        a[(r + 1, 1)] = y;
        a[(r + 1, 2)] = 1.0;
        a[(r + 1, 6)] = -u * x;
        a[(r + 1, 7)] = -u * y;
        a[(r + 1, 8)] = -u;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nine singular values");
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("destination normalization singular".into()))?;
    Homography::from_matrix(t_dst_inv * hn * t_src)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [100.0, 0.0], [100.0, 80.0], [0.0, 80.0]];

    #[test]
    fn identity_from_four_pairs() {
        let h = estimate_homography(&SQUARE, &SQUARE).unwrap();
        let diff = h.0 - Matrix3::identity();
        assert!(diff.abs().max() < 1e-6, "{h:?}");
    }

    #[test]
    fn recovers_similarity() {
        let truth = Matrix3::new(2.0, 0.0, 10.0, 0.0, 2.0, 5.0, 0.0, 0.0, 1.0);
        let th = Homography(truth);
        let src = [[3.0, 4.0], [50.0, 7.0], [45.0, 60.0], [9.0, 33.0], [25.0, 25.0]];
        let dst: Vec<[f64; 2]> = src.iter().map(|&p| th.project(p).unwrap()).collect();
        let h = estimate_homography(&src, &dst).unwrap();
        assert!((h.0 - truth).abs().max() < 1e-5, "{h:?}");
        let h4 = estimate_homography(&src[..4], &dst[..4]).unwrap();
        assert!((h4.0 - truth).abs().max() < 1e-5);
    }

    #[test]
    fn collinear_triple_rejected() {
        let src = [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [5.0, 9.0]];
        assert!(matches!(
            estimate_homography(&src, &SQUARE),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            estimate_homography(&SQUARE, &src),
            Err(Error::Degenerate(_))
        ));
        let line: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(estimate_homography(&line, &line).is_err());
        assert!(estimate_homography(&SQUARE[..3], &SQUARE[..3]).is_err());
    }

    #[test]
    fn grid_points_with_collinear_rows_still_fit() {
        let src: Vec<[f64; 2]> = (0..12).map(|k| [(16 * (k % 4) + 8) as f64, (16 * (k / 4) + 8) as f64]).collect();
        let dst: Vec<[f64; 2]> = src.iter().map(|p| [p[0] + 3.0, p[1] - 2.0]).collect();
        let h = estimate_homography(&src, &dst).unwrap();
        assert!(h.transfer_error([8.0, 8.0], [11.0, 6.0]) < 1e-8);
    }

    #[test]
    fn projection_guards_infinity() {
        let h = Homography(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0));
        assert!(h.project([0.0, 5.0]).is_none());
        assert_eq!(h.transfer_error([0.0, 5.0], [0.0, 0.0]), f64::INFINITY);
    }
}
