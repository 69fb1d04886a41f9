//! Numeric kernels shared by model inference and the micro benchmark.
//!
//! These are the exact routines the serving path executes, so timing them in
//! isolation (`micro_bench`) gives per-operator costs that line up with the
//! end-to-end stage timings.

use std::hint::black_box;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::error::CoreError;
use crate::metrics::nearest_rank;

/// Row-major matrix multiply: `a` is m*k, `b` is k*n, `out` is m*n.
/// The k-inner loop order keeps `b` accesses sequential.
pub fn dense(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..kk * n + n];
            let orow = &mut out[i * n..i * n + n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

pub fn relu(x: &mut [f32]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn sigmoid(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

/// Numerically stable softmax over each row of an m*n matrix, in place.
pub fn softmax_rows(x: &mut [f32], m: usize, n: usize) {
    debug_assert_eq!(x.len(), m * n);
    for row in x.chunks_mut(n) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub fn elementwise_multiply(a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), out.len());
    for i in 0..a.len() {
        out[i] = a[i] * b[i];
    }
}

/// Kernels exposed to the micro benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Dense,
    Relu,
    Sigmoid,
    Softmax,
    ElementwiseMultiply,
}

impl Kernel {
    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Dense => "dense",
            Kernel::Relu => "relu",
            Kernel::Sigmoid => "sigmoid",
            Kernel::Softmax => "softmax",
            Kernel::ElementwiseMultiply => "elementwise_multiply",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Kernel::Dense),
            "relu" => Ok(Kernel::Relu),
            "sigmoid" => Ok(Kernel::Sigmoid),
            "softmax" => Ok(Kernel::Softmax),
            "elementwise_multiply" => Ok(Kernel::ElementwiseMultiply),
            other => Err(format!(
                "unknown kernel {other:?} (expected dense, relu, sigmoid, softmax, \
                 or elementwise_multiply)"
            )),
        }
    }
}

/// Operand shape: `dense` uses all three extents; the element-wise kernels
/// and softmax treat the data as an m*n matrix and ignore `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

/// Wall-time stats over `reps` kernel invocations plus an output checksum
/// that keeps the optimizer from deleting the work.
#[derive(Debug, Clone, Copy)]
pub struct MicroBenchStats {
    pub reps: usize,
    pub min_ns: u64,
    pub mean_ns: f64,
    pub p99_ns: u64,
    pub checksum: f64,
}

/// Time one kernel at one shape. Inputs are seeded uniform draws in
/// [-1, 1), identical across runs.
pub fn micro_bench(kernel: Kernel, shape: BenchShape, reps: usize) -> Result<MicroBenchStats, CoreError> {
    if reps == 0 {
        return Err(CoreError::InvalidConfig {
            field: "reps",
            reason: "must be positive".into(),
        });
    }
    if shape.m == 0 || shape.n == 0 || (kernel == Kernel::Dense && shape.k == 0) {
        return Err(CoreError::InvalidConfig {
            field: "shape",
            reason: format!("extents must be positive, got {shape:?}"),
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(0x6b65726e);
    let mut draw = |len: usize| -> Vec<f32> {
        (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    };

    let (a, b) = match kernel {
        Kernel::Dense => (draw(shape.m * shape.k), draw(shape.k * shape.n)),
        _ => (draw(shape.m * shape.n), draw(shape.m * shape.n)),
    };
    let mut out = vec![0.0f32; shape.m * shape.n];
    let mut durations = Vec::with_capacity(reps);
    let mut checksum = 0.0f64;

    for _ in 0..reps {
        let start = Instant::now();
        match kernel {
            Kernel::Dense => dense(&a, &b, shape.m, shape.k, shape.n, &mut out),
            Kernel::Relu => {
                out.copy_from_slice(&a);
                relu(&mut out);
            }
            Kernel::Sigmoid => {
                out.copy_from_slice(&a);
                sigmoid(&mut out);
            }
            Kernel::Softmax => {
                out.copy_from_slice(&a);
                softmax_rows(&mut out, shape.m, shape.n);
            }
            Kernel::ElementwiseMultiply => elementwise_multiply(&a, &b, &mut out),
        }
        let elapsed = start.elapsed().as_nanos() as u64;
        black_box(&out);
        durations.push(elapsed);
        checksum = out.iter().map(|&v| v as f64).sum();
    }

    durations.sort_unstable();
    let min_ns = durations[0];
    let mean_ns = durations.iter().sum::<u64>() as f64 / reps as f64;
    let p99_ns = durations[nearest_rank(99.0, durations.len())? - 1];
    Ok(MicroBenchStats {
        reps,
        min_ns,
        mean_ns,
        p99_ns,
        checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook triple loop, the correctness reference for `dense`.
    fn naive_dense(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    fn seeded(len: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn dense_matches_naive_reference() {
        for (m, k, n) in [(1, 1, 1), (2, 3, 4), (8, 8, 8), (5, 17, 3), (32, 32, 32)] {
            let a = seeded(m * k, 1);
            let b = seeded(k * n, 2);
            let mut out = vec![0.0f32; m * n];
            dense(&a, &b, m, k, n, &mut out);
            let want = naive_dense(&a, &b, m, k, n);
            for (g, w) in out.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-6, "got {g}, want {w} at {m}x{k}x{n}");
            }
        }
    }

    #[test]
    fn relu_clamps_exactly() {
        let mut x = vec![-2.0, -0.0, 0.0, 0.5, 3.0, f32::MIN_POSITIVE, -f32::MIN_POSITIVE];
        relu(&mut x);
        assert_eq!(x, vec![0.0, -0.0, 0.0, 0.5, 3.0, f32::MIN_POSITIVE, 0.0]);
    }

    #[test]
    fn sigmoid_matches_closed_form() {
        let vals = [-5.0f32, -1.0, 0.0, 1.0, 5.0];
        let mut x = vals.to_vec();
        sigmoid(&mut x);
        for (got, v) in x.iter().zip(vals) {
            let want = 1.0 / (1.0 + (-v as f64).exp());
            assert!((*got as f64 - want).abs() < 1e-6);
        }
        assert_eq!(x[2], 0.5);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_order_is_preserved() {
        let mut x = seeded(6 * 9, 7);
        let orig = x.clone();
        softmax_rows(&mut x, 6, 9);
        for (r, row) in x.chunks(9).enumerate() {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            // Softmax is monotone: argmax must not move.
            let arg_in = orig[r * 9..r * 9 + 9]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let arg_out = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(arg_in, arg_out);
        }
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let mut x = vec![1000.0f32, 1001.0, 1002.0];
        softmax_rows(&mut x, 1, 3);
        let sum: f32 = x.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn elementwise_multiply_is_exact() {
        let a = seeded(100, 3);
        let b = seeded(100, 4);
        let mut out = vec![0.0f32; 100];
        elementwise_multiply(&a, &b, &mut out);
        for i in 0..100 {
            assert_eq!(out[i], a[i] * b[i]);
        }
    }

    #[test]
    fn micro_bench_is_deterministic_in_checksum() {
        let shape = BenchShape { m: 16, k: 16, n: 16 };
        let a = micro_bench(Kernel::Dense, shape, 10).unwrap();
        let b = micro_bench(Kernel::Dense, shape, 10).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert!(a.min_ns <= a.p99_ns);
        assert!(a.mean_ns > 0.0);
    }

    #[test]
    fn micro_bench_rejects_zero_reps_and_empty_shapes() {
        let shape = BenchShape { m: 4, k: 4, n: 4 };
        assert!(micro_bench(Kernel::Dense, shape, 0).is_err());
        assert!(micro_bench(Kernel::Dense, BenchShape { m: 0, k: 4, n: 4 }, 5).is_err());
    }
}
