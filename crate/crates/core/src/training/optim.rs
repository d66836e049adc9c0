use crate::aggregate::HeadParams;
use crate::numeric::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T = f32> {
    pub first: HeadParams<T>,
    pub second: HeadParams<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

fn slices_mut<T: Scalar>(p: &mut HeadParams<T>) -> Vec<&mut [T]> {
    let mut out: Vec<&mut [T]> = p.attention.iter_mut().map(Vec::as_mut_slice).collect();
    out.push(p.reduction.data_mut());
    out
}

fn slices<T: Scalar>(p: &HeadParams<T>) -> Vec<&[T]> {
    let mut out: Vec<&[T]> = p.attention.iter().map(Vec::as_slice).collect();
    out.push(p.reduction.data());
    out
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &HeadParams<T>, lr: f64) -> Self {
        OptimState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step along `grad`.
    pub fn apply(&mut self, params: &mut HeadParams<T>, grad: &HeadParams<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let one = T::one();
        let ps = slices_mut(params);
        let ms = slices_mut(&mut self.first);
        let vs = slices_mut(&mut self.second);
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(slices(grad)) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
