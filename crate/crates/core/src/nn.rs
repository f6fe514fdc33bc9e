//! Minimal multilayer-perceptron engine: tanh hidden layers, linear output,
//! Glorot initialization, exact reverse-mode parameter gradients, exact
//! forward-mode input Jacobians, and the combined tangent-adjoint pass needed
//! when a loss depends on the input Jacobian itself.
//!
//! The gradient structure is hand-composed per loss term (the loss set is
//! small and fixed); anything outside the supported primitives fails to
//! build, there is no runtime tape.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Deterministic RNG from a u64 seed.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

// Rational-polynomial tanh (Cephes coefficients), accurate to ~2 ulp.
// The activation sits in the innermost training loops; libm tanh costs more
// than the surrounding 20-wide GEMMs.
mod fast_math {
    const TANH_P: [f64; 3] = [
        -9.643_991_794_250_522_4e-1,
        -9.928_772_310_019_185_9e1,
        -1.614_687_684_417_084_5e3,
    ];
    const TANH_Q: [f64; 3] = [
        1.128_116_784_916_329_3e2,
        2.235_488_390_601_004_5e3,
        4.844_063_053_251_254_9e3,
    ];
    const EXP_C1: f64 = 6.931_457_519_531_25e-1;
    const EXP_C2: f64 = 1.428_606_820_309_417_2e-6;
    const EXP_P: [f64; 3] = [
        1.261_771_930_748_105_9e-4,
        3.029_944_077_074_419_6e-2,
        9.999_999_999_999_999_9e-1,
    ];
    const EXP_Q: [f64; 4] = [
        3.001_985_051_386_644_6e-6,
        2.524_483_403_496_841e-3,
        2.272_655_482_081_550_3e-1,
        2.0,
    ];
    const LOG2E: f64 = std::f64::consts::LOG2_E;

    /// exp(x) for x in roughly [-700, 700]; Cephes rational form.
    #[inline]
    fn exp_approx(x: f64) -> f64 {
        let n = (LOG2E * x + 0.5).floor();
        let px = n;
        let x = x - px * EXP_C1 - px * EXP_C2;
        let xx = x * x;
        let px = x * (EXP_P[0] * xx * xx + EXP_P[1] * xx + EXP_P[2]);
        let q = EXP_Q[0] * xx * xx * xx + EXP_Q[1] * xx * xx + EXP_Q[2] * xx + EXP_Q[3];
        let e = px / (q - px);
        let r = 1.0 + 2.0 * e;
        // scale by 2^n
        let bits = ((n as i64 + 1023) as u64) << 52;
        r * f64::from_bits(bits)
    }

    /// tanh(x) accurate to a couple of ulp across the full range.
    #[inline]
    pub fn tanh(x: f64) -> f64 {
        let z = x.abs();
        if z > 0.625 {
            if z >= 19.061_547_465_398_498 {
                return if x.is_nan() { x } else { 1.0f64.copysign(x) };
            }
            let s = exp_approx(-2.0 * z);
            let y = 1.0 - 2.0 * s / (1.0 + s);
            y.copysign(x)
        } else {
            if x == 0.0 {
                return x;
            }
            let s = x * x;
            let p = (TANH_P[0] * s + TANH_P[1]) * s + TANH_P[2];
            let q = ((s + TANH_Q[0]) * s + TANH_Q[1]) * s + TANH_Q[2];
            x + x * s * (p / q)
        }
    }

    /// Four-lane AVX2 tanh, operation-for-operation the same arithmetic as
    /// the scalar path (plain mul/add, no fused ops), so vector lanes and
    /// scalar evaluation agree bitwise for every normal input.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    pub unsafe fn tanh4(vals: *mut f64) {
        use std::arch::x86_64::*;
        let x = _mm256_loadu_pd(vals);
        let sign_mask = _mm256_set1_pd(-0.0);
        let sign = _mm256_and_pd(x, sign_mask);
        let z = _mm256_andnot_pd(sign_mask, x);

        // rational branch, valid for |x| <= 0.625 (computed on all lanes)
        let s = _mm256_mul_pd(x, x);
        let p = _mm256_add_pd(
            _mm256_mul_pd(
                _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(TANH_P[0]), s), _mm256_set1_pd(TANH_P[1])),
                s,
            ),
            _mm256_set1_pd(TANH_P[2]),
        );
        let q = _mm256_add_pd(
            _mm256_mul_pd(
                _mm256_add_pd(
                    _mm256_mul_pd(_mm256_add_pd(s, _mm256_set1_pd(TANH_Q[0])), s),
                    _mm256_set1_pd(TANH_Q[1]),
                ),
                s,
            ),
            _mm256_set1_pd(TANH_Q[2]),
        );
        let poly = _mm256_add_pd(
            x,
            _mm256_mul_pd(_mm256_mul_pd(x, s), _mm256_div_pd(p, q)),
        );

        // exp branch: 1 - 2 e / (1 + e), e = exp(-2 z), sign restored
        let e = exp4(_mm256_mul_pd(_mm256_set1_pd(-2.0), z));
        let big = _mm256_sub_pd(
            _mm256_set1_pd(1.0),
            _mm256_div_pd(
                _mm256_mul_pd(_mm256_set1_pd(2.0), e),
                _mm256_add_pd(_mm256_set1_pd(1.0), e),
            ),
        );
        let big = _mm256_or_pd(big, sign);
        let one = _mm256_or_pd(_mm256_set1_pd(1.0), sign);

        let sat = _mm256_cmp_pd::<_CMP_GE_OQ>(z, _mm256_set1_pd(19.061_547_465_398_498));
        let upper = _mm256_blendv_pd(big, one, sat);
        let use_upper = _mm256_cmp_pd::<_CMP_GT_OQ>(z, _mm256_set1_pd(0.625));
        let y = _mm256_blendv_pd(poly, upper, use_upper);
        _mm256_storeu_pd(vals, y);
    }

    /// Four-lane exp matching `exp_approx` operation order exactly.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn exp4(x: std::arch::x86_64::__m256d) -> std::arch::x86_64::__m256d {
        use std::arch::x86_64::*;
        let n = _mm256_floor_pd(_mm256_add_pd(
            _mm256_mul_pd(_mm256_set1_pd(LOG2E), x),
            _mm256_set1_pd(0.5),
        ));
        let x = _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(EXP_C1)));
        let x = _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(EXP_C2)));
        let xx = _mm256_mul_pd(x, x);
        // px = x * (P0 xx^2 + P1 xx + P2), left-associated additions
        let px = _mm256_mul_pd(
            x,
            _mm256_add_pd(
                _mm256_add_pd(
                    _mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(EXP_P[0]), xx), xx),
                    _mm256_mul_pd(_mm256_set1_pd(EXP_P[1]), xx),
                ),
                _mm256_set1_pd(EXP_P[2]),
            ),
        );
        // q = Q0 xx^3 + Q1 xx^2 + Q2 xx + Q3
        let q = _mm256_add_pd(
            _mm256_add_pd(
                _mm256_add_pd(
                    _mm256_mul_pd(_mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(EXP_Q[0]), xx), xx), xx),
                    _mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(EXP_Q[1]), xx), xx),
                ),
                _mm256_mul_pd(_mm256_set1_pd(EXP_Q[2]), xx),
            ),
            _mm256_set1_pd(EXP_Q[3]),
        );
        let e = _mm256_div_pd(px, _mm256_sub_pd(q, px));
        let r = _mm256_add_pd(
            _mm256_set1_pd(1.0),
            _mm256_mul_pd(_mm256_set1_pd(2.0), e),
        );
        // scale by 2^n: build the exponent bits from the (small) integer n
        let ni = _mm256_cvtpd_epi32(n);
        let e64 = _mm256_cvtepi32_epi64(ni);
        let bits = _mm256_slli_epi64::<52>(_mm256_add_epi64(e64, _mm256_set1_epi64x(1023)));
        _mm256_mul_pd(r, _mm256_castsi256_pd(bits))
    }
}

/// The hidden-layer activation. On AVX2 machines scalar calls go through the
/// padded 4-lane kernel so every evaluation path yields identical bits.
#[inline]
pub fn activation(x: f64) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if crate::gemm::avx2_available() {
        let mut buf = [x, 0.0, 0.0, 0.0];
        unsafe { fast_math::tanh4(buf.as_mut_ptr()) };
        return buf[0];
    }
    fast_math::tanh(x)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn bias_tanh_row_avx2(row: &mut [f64], bias: f64) {
    use std::arch::x86_64::*;
    let n = row.len();
    let p = row.as_mut_ptr();
    let b = _mm256_set1_pd(bias);
    let mut i = 0usize;
    while i + 4 <= n {
        let v = _mm256_add_pd(_mm256_loadu_pd(p.add(i)), b);
        _mm256_storeu_pd(p.add(i), v);
        fast_math::tanh4(p.add(i));
        i += 4;
    }
    while i < n {
        let mut buf = [*p.add(i) + bias, 0.0, 0.0, 0.0];
        fast_math::tanh4(buf.as_mut_ptr());
        *p.add(i) = buf[0];
        i += 1;
    }
}

/// Deterministic RNG from a 32-byte derived seed.
pub fn rng_from_bytes(seed: [u8; 32]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(seed)
}

/// Fully connected network parameters: per layer a weight matrix (out x in)
/// and a bias vector. Hidden layers use tanh, the final layer is linear.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradient (or moment) storage shaped like an [`Mlp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `dims` is
    /// `[n_in, hidden..., n_out]`.
    pub fn glorot(dims: &[usize], rng: &mut ChaCha20Rng) -> Mlp {
        assert!(dims.len() >= 2);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((fan_out, fan_in));
            for r in 0..fan_out {
                for c in 0..fan_in {
                    w[[r, c]] = rng.random::<f64>() * 2.0 * bound - bound;
                }
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Mlp { weights, biases }
    }

    /// All-zero parameters with the given dims.
    pub fn zeros(dims: &[usize]) -> Mlp {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            weights.push(Array2::zeros((dims[l + 1], dims[l])));
            biases.push(Array1::zeros(dims[l + 1]));
        }
        Mlp { weights, biases }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].ncols()];
        for w in &self.weights {
            d.push(w.nrows());
        }
        d
    }

    pub fn n_in(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat parameter accessor (weights first, layer by layer row-major, then
    /// biases); used by finite-difference checks.
    pub fn get_param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for w in &self.weights {
            if i < w.len() {
                return w.as_slice().unwrap()[i];
            }
            i -= w.len();
        }
        for b in &self.biases {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for w in &mut self.weights {
            if i < w.len() {
                w.as_slice_mut().unwrap()[i] = value;
                return;
            }
            i -= w.len();
        }
        for b in &mut self.biases {
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// Forward pass on a single input (a one-column batch, so batched and
    /// per-sample evaluation share one computation path).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let col = Array2::from_shape_vec((x.len(), 1), x.to_vec()).unwrap();
        self.forward_batch(&col).column(0).to_vec()
    }

    /// Batched forward; input and output have one column per sample.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut a = crate::gemm::matmul(&self.weights[0], x);
        bias_activation(&mut a, &self.biases[0], last > 0);
        for l in 1..self.weights.len() {
            let mut z = crate::gemm::matmul(&self.weights[l], &a);
            bias_activation(&mut z, &self.biases[l], l < last);
            a = z;
        }
        a
    }

    /// Batched forward keeping the hidden activations for a later backward
    /// (the caller keeps the input and passes it back to
    /// [`Mlp::backward_batch`]).
    pub fn forward_batch_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let last = self.weights.len() - 1;
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut a = crate::gemm::matmul(&self.weights[0], x);
        bias_activation(&mut a, &self.biases[0], last > 0);
        for l in 1..self.weights.len() {
            hidden.push(a);
            let prev = hidden.last().unwrap();
            let mut z = crate::gemm::matmul(&self.weights[l], prev);
            bias_activation(&mut z, &self.biases[l], l < last);
            a = z;
        }
        (a.clone(), ForwardCache { hidden, output: a })
    }

    /// Reverse-mode parameter gradients for a batched forward; `x` is the
    /// input passed to [`Mlp::forward_batch_cached`]. `out_grad` holds
    /// dLoss/d(output) column per sample; gradients accumulate into `grads`.
    pub fn backward_batch(
        &self,
        x: &Array2<f64>,
        cache: &ForwardCache,
        out_grad: &Array2<f64>,
        grads: &mut MlpGrads,
    ) {
        let mut delta = out_grad.clone();
        for l in (0..self.weights.len()).rev() {
            // delta is dL/dz_l here (final layer linear; hidden handled below)
            let input_l: &Array2<f64> = if l == 0 { x } else { &cache.hidden[l - 1] };
            crate::gemm::matmul_abt_add(&delta, input_l, &mut grads.weights[l]);
            let db = delta.sum_axis(ndarray::Axis(1));
            grads.biases[l] += &db;
            if l > 0 {
                let mut prev = crate::gemm::matmul_atb(&self.weights[l], &delta);
                // chain through tanh of the previous layer
                sigma_prime_chain(&mut prev, &cache.hidden[l - 1]);
                delta = prev;
            }
        }
    }

    /// Exact Jacobian of outputs w.r.t. inputs at a single point, via
    /// forward-mode tangents. Returns (output, jacobian n_out x n_in).
    pub fn input_jacobian(&self, x: &[f64]) -> (Vec<f64>, Array2<f64>) {
        let n_in = self.n_in();
        let mut a: Vec<f64> = x.to_vec();
        let mut tan = Array2::eye(n_in);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a_arr = Array1::from_vec(a.clone());
            let mut z = w.dot(&a_arr) + b;
            let zt = w.dot(&tan);
            if l < last {
                z.mapv_inplace(activation);
                let mut t = zt;
                for r in 0..t.nrows() {
                    let s = 1.0 - z[r] * z[r];
                    for c in 0..t.ncols() {
                        t[[r, c]] *= s;
                    }
                }
                tan = t;
            } else {
                tan = zt;
            }
            a = z.to_vec();
        }
        (a, tan)
    }

    /// Batched forward propagating `n_dirs` tangent directions per sample.
    /// `x` is (n_in, B); `tangent_init` is (n_in, n_dirs * B) with each
    /// sample's directions in a contiguous column block.
    pub fn forward_with_tangents(
        &self,
        x: &Array2<f64>,
        tangent_init: &Array2<f64>,
        n_dirs: usize,
    ) -> TangentCache {
        let batch = x.ncols();
        assert_eq!(tangent_init.ncols(), n_dirs * batch);
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len());
        let mut tans = Vec::with_capacity(self.weights.len());
        let mut pre_tans = Vec::with_capacity(self.weights.len());
        let mut a = x.clone();
        let mut at = tangent_init.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            acts.push(a.clone());
            tans.push(at.clone());
            let mut z = crate::gemm::matmul(w, &a);
            add_bias(&mut z, b);
            let zt = crate::gemm::matmul(w, &at);
            if l < last {
                z.mapv_inplace(activation);
                let mut t = zt.clone();
                scale_by_sigma_prime(&mut t, &z, n_dirs);
                pre_tans.push(zt);
                at = t;
            } else {
                pre_tans.push(zt.clone());
                at = zt;
            }
            a = z;
        }
        TangentCache {
            acts,
            tans,
            pre_tans,
            output: a,
            out_tangent: at,
            n_dirs,
        }
    }

    /// Adjoint of [`forward_with_tangents`]: accumulates parameter gradients
    /// for a loss depending on the output (`out_grad`) and on the output
    /// tangents (`tan_grad`, i.e. dLoss/dJacobian entries).
    pub fn backward_with_tangents(
        &self,
        cache: &TangentCache,
        out_grad: &Array2<f64>,
        tan_grad: &Array2<f64>,
        grads: &mut MlpGrads,
    ) {
        let n_dirs = cache.n_dirs;
        let mut delta = out_grad.clone(); // dL/dz_l
        let mut delta_t = tan_grad.clone(); // dL/dZt_l
        for l in (0..self.weights.len()).rev() {
            crate::gemm::matmul_abt_add(&delta, &cache.acts[l], &mut grads.weights[l]);
            crate::gemm::matmul_abt_add(&delta_t, &cache.tans[l], &mut grads.weights[l]);
            grads.biases[l] += &delta.sum_axis(ndarray::Axis(1));
            if l > 0 {
                let mut prev = crate::gemm::matmul_atb(&self.weights[l], &delta);
                let mut prev_t = crate::gemm::matmul_atb(&self.weights[l], &delta_t);
                // chain through the tanh between layer l-1 and l
                let a_prev = &cache.acts[l]; // post-activation a_{l-1}
                let zt_prev = &cache.pre_tans[l - 1]; // pre-activation tangent of layer l-1
                let at_grad = prev_t.clone(); // dL/dAt_{l-1}
                // dL/dz from the value path
                ndarray::Zip::from(&mut prev).and(a_prev).for_each(|p, &a| {
                    *p *= 1.0 - a * a;
                });
                // dL/dz from the tangent path: sigma''(z) * sum_dirs(At_bar * Zt)
                add_sigma_second_term(&mut prev, &at_grad, zt_prev, a_prev, n_dirs);
                // dL/dZt_{l-1} = sigma'(z_{l-1}) * dL/dAt_{l-1}
                scale_by_sigma_prime(&mut prev_t, a_prev, n_dirs);
                delta = prev;
                delta_t = prev_t;
            }
        }
    }
}

/// Hidden activations kept by [`Mlp::forward_batch_cached`];
/// `hidden[l]` is the output of hidden layer l.
pub struct ForwardCache {
    hidden: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Activations and tangents kept by [`Mlp::forward_with_tangents`].
pub struct TangentCache {
    acts: Vec<Array2<f64>>,
    tans: Vec<Array2<f64>>,
    pre_tans: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    /// Output tangents, (n_out, n_dirs * B): the per-sample Jacobian columns.
    pub out_tangent: Array2<f64>,
    n_dirs: usize,
}

fn add_bias(z: &mut Array2<f64>, b: &Array1<f64>) {
    for (mut row, &bv) in z.rows_mut().into_iter().zip(b.iter()) {
        row.mapv_inplace(|v| v + bv);
    }
}

/// One pass: z <- activation(z + bias) (or just the bias add on the linear
/// output layer). Flat-slice loops; rows are contiguous.
fn bias_activation(z: &mut Array2<f64>, b: &Array1<f64>, hidden: bool) {
    let n = z.ncols();
    let zs = z.as_slice_mut().expect("standard layout");
    #[cfg(target_arch = "x86_64")]
    if hidden && crate::gemm::avx2_available() {
        for (r, &bv) in b.iter().enumerate() {
            unsafe { bias_tanh_row_avx2(&mut zs[r * n..(r + 1) * n], bv) };
        }
        return;
    }
    for (r, &bv) in b.iter().enumerate() {
        let row = &mut zs[r * n..(r + 1) * n];
        if hidden {
            for v in row {
                *v = activation(*v + bv);
            }
        } else {
            for v in row {
                *v += bv;
            }
        }
    }
}

/// prev <- prev * (1 - a^2) elementwise, flat slices.
fn sigma_prime_chain(prev: &mut Array2<f64>, a: &Array2<f64>) {
    let ps = prev.as_slice_mut().expect("standard layout");
    let as_ = a.as_slice().expect("standard layout");
    for (p, &av) in ps.iter_mut().zip(as_) {
        *p *= 1.0 - av * av;
    }
}

/// t[:, block j] *= sigma'(z[:, j]) where sigma' = 1 - a^2 and `a` holds the
/// post-activation values.
fn scale_by_sigma_prime(t: &mut Array2<f64>, a: &Array2<f64>, n_dirs: usize) {
    let rows = t.nrows();
    let batch = a.ncols();
    assert_eq!(t.ncols(), n_dirs * batch);
    for r in 0..rows {
        for j in 0..batch {
            let s = 1.0 - a[[r, j]] * a[[r, j]];
            for d in 0..n_dirs {
                t[[r, j * n_dirs + d]] *= s;
            }
        }
    }
}

/// prev[r, j] += sigma''(z) * sum_d at_grad[r, j*n_dirs+d] * zt[r, j*n_dirs+d]
/// with sigma'' = -2 a (1 - a^2).
fn add_sigma_second_term(
    prev: &mut Array2<f64>,
    at_grad: &Array2<f64>,
    zt: &Array2<f64>,
    a: &Array2<f64>,
    n_dirs: usize,
) {
    let rows = prev.nrows();
    let batch = prev.ncols();
    for r in 0..rows {
        for j in 0..batch {
            let av = a[[r, j]];
            let s2 = -2.0 * av * (1.0 - av * av);
            let mut acc = 0.0;
            for d in 0..n_dirs {
                acc += at_grad[[r, j * n_dirs + d]] * zt[[r, j * n_dirs + d]];
            }
            prev[[r, j]] += s2 * acc;
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> MlpGrads {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * s);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * s);
        }
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for w in &self.weights {
            if i < w.len() {
                return w.as_slice().unwrap()[i];
            }
            i -= w.len();
        }
        for b in &self.biases {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("gradient index {idx} out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// A trainable network paired with a frozen, randomly initialized prior of
/// the same architecture; predictions are `trainable(x) + prior_scale * prior(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomizedPriorPair {
    pub trainable: Mlp,
    pub prior: Mlp,
    pub prior_scale: f64,
}

impl RandomizedPriorPair {
    /// Independently Glorot-initialize the trainable and prior networks.
    pub fn init(dims: &[usize], prior_scale: f64, rng: &mut ChaCha20Rng) -> RandomizedPriorPair {
        let trainable = Mlp::glorot(dims, rng);
        let prior = Mlp::glorot(dims, rng);
        RandomizedPriorPair {
            trainable,
            prior,
            prior_scale,
        }
    }
}

/// SHA-256 over the exact parameter bytes; used to verify priors stay frozen.
pub fn params_checksum(mlp: &Mlp) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for w in &mlp.weights {
        for v in w.iter() {
            h.update(v.to_le_bytes());
        }
    }
    for b in &mlp.biases {
        for v in b.iter() {
            h.update(v.to_le_bytes());
        }
    }
    crate::hash::hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fast_tanh_matches_libm() {
        let mut worst = 0.0f64;
        let mut x = -25.0;
        while x < 25.0 {
            let err = (activation(x) - x.tanh()).abs();
            worst = worst.max(err);
            x += 0.000313;
        }
        assert!(worst < 5e-16, "worst abs error {worst:e}");
        assert_eq!(activation(0.0), 0.0);
        assert_eq!(activation(40.0), 1.0);
        assert_eq!(activation(-40.0), -1.0);
        assert!(activation(f64::NAN).is_nan());
        // odd symmetry
        for &v in &[0.1, 0.5, 0.625, 0.626, 2.0, 10.0] {
            assert_eq!(activation(-v), -activation(v));
        }
    }

    #[test]
    fn vector_and_scalar_activation_agree_bitwise() {
        let mut rng = seeded_rng(120);
        let mut values: Vec<f64> = (0..4003)
            .map(|_| (rng.random::<f64>() - 0.5) * 50.0)
            .collect();
        values.extend([0.0, -0.0, 0.624, 0.626, -0.625, 19.1, -19.1, 1e-300]);
        // slice path (vector main loop + padded tail)
        let mut z = Array2::from_shape_vec((1, values.len()), values.clone()).unwrap();
        bias_activation(&mut z, &Array1::zeros(1), true);
        for (c, &x) in values.iter().enumerate() {
            let direct = activation(x);
            assert!(
                z[[0, c]] == direct || (z[[0, c]].is_nan() && direct.is_nan()),
                "lane/scalar mismatch at {x}: {} vs {direct}",
                z[[0, c]]
            );
        }
    }

    #[test]
    fn glorot_statistics() {
        let mut rng = seeded_rng(11);
        // large fan-in/out so the empirical variance is tight
        let mlp = Mlp::glorot(&[200, 500], &mut rng);
        let w = &mlp.weights[0];
        let n = w.len() as f64;
        let mean: f64 = w.iter().sum::<f64>() / n;
        let var: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 2.0 / (200.0 + 500.0);
        assert!(
            (var - expect).abs() / expect < 0.03,
            "variance {var} vs {expect}"
        );
        assert!(mlp.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn glorot_is_deterministic() {
        let a = Mlp::glorot(&[3, 8, 1], &mut seeded_rng(5));
        let b = Mlp::glorot(&[3, 8, 1], &mut seeded_rng(5));
        assert_eq!(a, b);
    }

    #[test]
    fn forward_zero_weights_returns_bias() {
        let mut mlp = Mlp::zeros(&[4, 3, 2]);
        mlp.biases[1] = array![1.5, -2.5];
        let y = mlp.forward(&[0.3, -0.4, 0.5, 0.9]);
        assert_eq!(y, vec![1.5, -2.5]);
    }

    #[test]
    fn single_linear_layer_is_matvec() {
        let mut mlp = Mlp::zeros(&[2, 2]);
        mlp.weights[0] = array![[1.0, 2.0], [3.0, 4.0]];
        let y = mlp.forward(&[1.0, 1.0]);
        assert_eq!(y, vec![3.0, 7.0]);
        let (_, jac) = mlp.input_jacobian(&[0.2, 0.4]);
        assert_eq!(jac, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn batched_forward_equals_per_sample() {
        let mut rng = seeded_rng(3);
        let mlp = Mlp::glorot(&[5, 12, 12, 2], &mut rng);
        let x = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64).sin());
        let batch = mlp.forward_batch(&x);
        for j in 0..7 {
            let col: Vec<f64> = x.column(j).to_vec();
            let single = mlp.forward(&col);
            for r in 0..2 {
                assert_eq!(batch[[r, j]], single[r], "exact equality expected");
            }
        }
    }

    #[test]
    fn jacobian_of_tanh_chain_at_zero_is_weight_product() {
        let mut rng = seeded_rng(9);
        let mut mlp = Mlp::glorot(&[3, 4, 1], &mut rng);
        for b in &mut mlp.biases {
            b.fill(0.0);
        }
        let (_, jac) = mlp.input_jacobian(&[0.0, 0.0, 0.0]);
        let expect = mlp.weights[1].dot(&mlp.weights[0]);
        for (a, b) in jac.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(17);
        let mlp = Mlp::glorot(&[3, 6, 5, 1], &mut rng);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| 0.3 * (i as f64) - 0.2 * (j as f64));
        let target = Array1::from_vec(vec![0.1, -0.4, 0.7, 0.2]);

        let loss = |m: &Mlp| -> f64 {
            let y = m.forward_batch(&x);
            let mut acc = 0.0;
            for j in 0..4 {
                let r = y[[0, j]] - target[j];
                acc += r * r;
            }
            acc
        };

        let (y, cache) = mlp.forward_batch_cached(&x);
        let mut out_grad = Array2::zeros((1, 4));
        for j in 0..4 {
            out_grad[[0, j]] = 2.0 * (y[[0, j]] - target[j]);
        }
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward_batch(&x, &cache, &out_grad, &mut grads);

        let h = 1e-6;
        let mut rng2 = seeded_rng(99);
        for _ in 0..40 {
            let idx = rng2.random_range(0..mlp.param_count());
            let mut mp = mlp.clone();
            let v = mp.get_param(idx);
            mp.set_param(idx, v + h);
            let lp = loss(&mp);
            mp.set_param(idx, v - h);
            let lm = loss(&mp);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get_param(idx);
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1e-7),
                "param {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut rng = seeded_rng(23);
        let mlp = Mlp::glorot(&[3, 8, 8, 2], &mut rng);
        let x = [0.2, -0.5, 0.8];
        let (_, jac) = mlp.input_jacobian(&x);
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x;
            xp[c] += h;
            let yp = mlp.forward(&xp);
            let mut xm = x;
            xm[c] -= h;
            let ym = mlp.forward(&xm);
            for r in 0..2 {
                let fd = (yp[r] - ym[r]) / (2.0 * h);
                assert!(
                    (fd - jac[[r, c]]).abs() <= 1e-5 * jac[[r, c]].abs().max(1e-7),
                    "({r},{c}): fd {fd} vs {}",
                    jac[[r, c]]
                );
            }
        }
    }

    #[test]
    fn tangent_adjoint_matches_finite_differences() {
        // loss = sum of squares of the physical-gradient entries; exercises
        // the second-order (reverse-over-forward) path
        let mut rng = seeded_rng(31);
        let mlp = Mlp::glorot(&[3, 5, 4, 1], &mut rng);
        let x = Array2::from_shape_fn((3, 2), |(i, j)| 0.4 * i as f64 - 0.3 * j as f64);
        let scale = [0.5, 2.0, 1.0];
        let mut tan0 = Array2::zeros((3, 6));
        for j in 0..2 {
            for d in 0..3 {
                tan0[[d, j * 3 + d]] = scale[d];
            }
        }

        let loss = |m: &Mlp| -> f64 {
            let mut acc = 0.0;
            for j in 0..2 {
                let col: Vec<f64> = x.column(j).to_vec();
                let (_, jac) = m.input_jacobian(&col);
                for d in 0..3 {
                    let g = jac[[0, d]] * scale[d];
                    acc += g * g;
                }
            }
            acc
        };

        let cache = mlp.forward_with_tangents(&x, &tan0, 3);
        let mut tan_grad = Array2::zeros((1, 6));
        for j in 0..2 {
            for d in 0..3 {
                tan_grad[[0, j * 3 + d]] = 2.0 * cache.out_tangent[[0, j * 3 + d]];
            }
        }
        let out_grad = Array2::zeros((1, 2));
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward_with_tangents(&cache, &out_grad, &tan_grad, &mut grads);

        let h = 1e-6;
        let mut rng2 = seeded_rng(77);
        for _ in 0..40 {
            let idx = rng2.random_range(0..mlp.param_count());
            let mut mp = mlp.clone();
            let v = mp.get_param(idx);
            mp.set_param(idx, v + h);
            let lp = loss(&mp);
            mp.set_param(idx, v - h);
            let lm = loss(&mp);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get_param(idx);
            assert!(
                (fd - an).abs() <= 2e-5 * an.abs().max(1e-7),
                "param {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn prior_pair_members_differ_and_checksum_is_stable() {
        let mut rng = seeded_rng(41);
        let p = RandomizedPriorPair::init(&[3, 8, 1], 1e-3, &mut rng);
        assert_ne!(p.trainable, p.prior);
        let c1 = params_checksum(&p.prior);
        let c2 = params_checksum(&p.prior);
        assert_eq!(c1, c2);
    }
}
