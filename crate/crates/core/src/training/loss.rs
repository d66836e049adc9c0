use crate::numeric::Scalar;

/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.1;

pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// `max(‖q − p‖ − ‖q − n‖ + margin, 0)`.
pub fn triplet_loss<T: Scalar>(q: &[T], p: &[T], n: &[T], margin: T) -> T {
    (euclidean(q, p) - euclidean(q, n) + margin).max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_cases() {
        let q = [0.0f64, 0.0];
        assert_eq!(triplet_loss(&q, &[0.5, 0.0], &[1.0, 0.0], 0.1), 0.0);
        assert!((triplet_loss(&q, &[1.0, 0.0], &[0.5, 0.0], 0.1) - 0.6).abs() < 1e-15);
        assert_eq!(triplet_loss(&q, &[0.3, 0.4], &[0.3, 0.4], 0.1), 0.1);
    }
}
