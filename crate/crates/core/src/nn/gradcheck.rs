//! Central finite-difference oracle for hand-written backward passes.
//!
//! The oracle only ever calls forward code: each scalar is set to `x ± h`, the loss is
//! re-evaluated, and `(f+ - f-) / 2h` is compared with the analytic gradient.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::param::Parameters;

pub const STEP: f64 = 1e-5;
/// Denominator floor so that gradients at round-off scale do not inflate the ratio.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / libm::fabs(analytic).max(libm::fabs(numeric)).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = format!("{} analytic={analytic:e} numeric={numeric:e}", label());
        }
    }
}

fn get_flat<M: Parameters + ?Sized>(model: &M, index: usize) -> f64 {
    let (mut base, mut out) = (0, 0.0);
    model.visit(&mut |p| {
        let n = p.value.len();
        if index >= base && index < base + n {
            out = p.value.data[index - base];
        }
        base += n;
    });
    out
}

fn set_flat<M: Parameters + ?Sized>(model: &mut M, index: usize, value: f64) {
    let mut base = 0;
    model.visit_mut(&mut |p| {
        let n = p.value.len();
        if index >= base && index < base + n {
            p.value.data[index - base] = value;
        }
        base += n;
    });
}

/// Evenly spaced sample of at most `limit` indices from `0..n`.
fn sample(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|k| k * n / limit).collect()
    }
}

/// Compare analytic gradients against central differences.
///
/// `loss(model, input)` must be a pure forward evaluation. `analytic(model, input)` must
/// accumulate parameter gradients into freshly zeroed accumulators and return `dL/dinput`.
/// At most `per_param` scalars of each parameter (and of the input) are probed.
pub fn check<M, L, A>(model: &mut M, input: &[f64], loss: L, analytic: A, per_param: usize) -> GradCheck
where
    M: Parameters,
    L: Fn(&M, &[f64]) -> f64,
    A: FnOnce(&mut M, &[f64]) -> Vec<f64>,
{
    model.zero_grad();
    let d_input = analytic(model, input);
    let grads = model.flat_grads();
    let mut layout = Vec::new();
    model.visit(&mut |p| layout.push((p.name.clone(), p.value.len())));
    let mut report = GradCheck { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    let mut base = 0;
    for (name, n) in layout {
        for k in sample(n, per_param) {
            let idx = base + k;
            let orig = get_flat(model, idx);
            set_flat(model, idx, orig + STEP);
            let fp = loss(model, input);
            set_flat(model, idx, orig - STEP);
            let fm = loss(model, input);
            set_flat(model, idx, orig);
            report.record(|| format!("{name}[{k}]"), grads[idx], (fp - fm) / (2.0 * STEP));
        }
        base += n;
    }
    if !d_input.is_empty() {
        let mut x = input.to_vec();
        for k in sample(x.len(), per_param) {
            let orig = x[k];
            x[k] = orig + STEP;
            let fp = loss(model, &x);
            x[k] = orig - STEP;
            let fm = loss(model, &x);
            x[k] = orig;
            report.record(|| format!("input[{k}]"), d_input[k], (fp - fm) / (2.0 * STEP));
        }
    }
    report
}

/// Random projection weights turning a tensor output into a scalar loss.
pub fn projection<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn project(output: &[f64], weights: &[f64]) -> f64 {
    output.iter().zip(weights).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::attention::{EncoderLayer, MultiHeadAttention};
    use crate::nn::layers::{leaky_relu, leaky_relu_backward, relu, relu_backward, Linear};
    use crate::nn::lstm::Lstm;
    use crate::nn::matrix::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;
    const INSTANCES: u64 = 10;

    fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn linear_gradients() {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, i, o) = (rng.gen_range(1..5), rng.gen_range(1..7), rng.gen_range(1..6));
            let mut l = Linear::new("l", i, o, 1.0, &mut rng);
            let x = random_input(n, i, &mut rng);
            let w = projection(n * o, &mut rng);
            let r = check(
                &mut l,
                &x,
                |l, x| project(&l.forward(&Matrix::from_vec(n, i, x.to_vec()).unwrap()).unwrap().data, &w),
                |l, x| {
                    let dy = Matrix::from_vec(n, o, w.clone()).unwrap();
                    l.backward(&Matrix::from_vec(n, i, x.to_vec()).unwrap(), &dy).data
                },
                usize::MAX,
            );
            assert!(r.max_rel_error < TOL, "seed {seed}: {}", r.worst);
        }
    }

    #[test]
    fn activation_gradients() {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut l = Linear::new("l", 4, 5, 1.0, &mut rng);
            let x = random_input(3, 4, &mut rng);
            let w = projection(15, &mut rng);
            for leaky in [false, true] {
                let act = |m: &Matrix| if leaky { leaky_relu(m) } else { relu(m) };
                let r = check(
                    &mut l,
                    &x,
                    |l, x| project(&act(&l.forward(&Matrix::from_vec(3, 4, x.to_vec()).unwrap()).unwrap()).data, &w),
                    |l, x| {
                        let xm = Matrix::from_vec(3, 4, x.to_vec()).unwrap();
                        let y = act(&l.forward(&xm).unwrap());
                        let dy = Matrix::from_vec(3, 5, w.clone()).unwrap();
                        let dpre = if leaky { leaky_relu_backward(&y, &dy) } else { relu_backward(&y, &dy) };
                        l.backward(&xm, &dpre).data
                    },
                    usize::MAX,
                );
                assert!(r.max_rel_error < TOL, "seed {seed} leaky={leaky}: {}", r.worst);
            }
        }
    }

    #[test]
    fn attention_gradients() {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let seq = rng.gen_range(1..5);
            let batch = rng.gen_range(1..3);
            let mut mha = MultiHeadAttention::new("a", 4, 2, &mut rng).unwrap();
            let x = random_input(batch * seq, 4, &mut rng);
            let w = projection(batch * seq * 4, &mut rng);
            let rows = batch * seq;
            let r = check(
                &mut mha,
                &x,
                |m, x| project(&m.forward(&Matrix::from_vec(rows, 4, x.to_vec()).unwrap(), seq).unwrap().0.data, &w),
                |m, x| {
                    let (_, cache) = m.forward(&Matrix::from_vec(rows, 4, x.to_vec()).unwrap(), seq).unwrap();
                    m.backward(&cache, &Matrix::from_vec(rows, 4, w.clone()).unwrap()).data
                },
                usize::MAX,
            );
            assert!(r.max_rel_error < TOL, "seed {seed}: {}", r.worst);
        }
    }

    #[test]
    fn encoder_layer_gradients() {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let seq = rng.gen_range(2..6);
            let mut layer = EncoderLayer::new("e", 4, 2, 12, &mut rng).unwrap();
            let x = random_input(seq, 4, &mut rng);
            let w = projection(seq * 4, &mut rng);
            let r = check(
                &mut layer,
                &x,
                |m, x| project(&m.forward(&Matrix::from_vec(seq, 4, x.to_vec()).unwrap(), seq).unwrap().0.data, &w),
                |m, x| {
                    let (_, cache) = m.forward(&Matrix::from_vec(seq, 4, x.to_vec()).unwrap(), seq).unwrap();
                    m.backward(&cache, &Matrix::from_vec(seq, 4, w.clone()).unwrap()).data
                },
                usize::MAX,
            );
            assert!(r.max_rel_error < TOL, "seed {seed}: {}", r.worst);
        }
    }

    #[test]
    fn lstm_gradients() {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let (steps, batch, input, hidden, depth) =
                (rng.gen_range(1..5), rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..3));
            let mut lstm = Lstm::new("l", input, hidden, depth, &mut rng);
            let rows = steps * batch;
            let x = random_input(rows, input, &mut rng);
            let w = projection(rows * hidden, &mut rng);
            let r = check(
                &mut lstm,
                &x,
                |m, x| project(&m.forward(&Matrix::from_vec(rows, input, x.to_vec()).unwrap(), steps).unwrap().0.data, &w),
                |m, x| {
                    let (_, _, cache) = m.forward(&Matrix::from_vec(rows, input, x.to_vec()).unwrap(), steps).unwrap();
                    m.backward(&cache, &Matrix::from_vec(rows, hidden, w.clone()).unwrap()).data
                },
                usize::MAX,
            );
            assert!(r.max_rel_error < TOL, "seed {seed}: {}", r.worst);
        }
    }
}
