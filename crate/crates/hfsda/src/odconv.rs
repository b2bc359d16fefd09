//! Omni-dimensional dynamic convolution.
//!
//! A bank of `n` kernels is reweighted per input: global average pooling
//! feeds a bottleneck MLP whose four heads emit attention over the kernel's
//! temporal axis, its frequency axis, the output channels (all sigmoid), and
//! across the kernels themselves (softmax). The attention-weighted kernel
//! sum is then convolved with the input, so the effective kernel adapts to
//! every sample.

use rand_chacha::ChaCha20Rng;

use crate::autograd::{Graph, Tid};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};

/// Hyperparameters of one dynamic-convolution layer.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdconvHyper {
    pub n_kernels: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k_t: usize,
    pub k_f: usize,
    pub stride: usize,
    /// Bottleneck reduction ratio of the attention MLP.
    pub reduction: usize,
    /// When false the layer is a plain static convolution with one kernel
    /// and no attention network (the ablation variant).
    pub dynamic: bool,
}

impl Default for OdconvHyper {
    fn default() -> Self {
        Self {
            n_kernels: 4,
            c_in: 1,
            c_out: 8,
            k_t: 3,
            k_f: 3,
            stride: 1,
            reduction: 4,
            dynamic: true,
        }
    }
}

impl OdconvHyper {
    pub fn bottleneck_width(&self) -> usize {
        (self.c_in.div_ceil(self.reduction)).max(4)
    }

    /// Same-padding for odd kernel sizes.
    pub fn same_pad(&self) -> (usize, usize) {
        (self.k_t / 2, self.k_f / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_kernels == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Config("kernel/channel counts must be positive".into()));
        }
        if self.k_t == 0 || self.k_f == 0 || self.stride == 0 || self.reduction == 0 {
            return Err(Error::Config("kernel size, stride and reduction must be positive".into()));
        }
        Ok(())
    }

    /// Register this layer's parameters under `prefix`.
    pub fn init_params(&self, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha20Rng) {
        let fan_in = self.c_in * self.k_t * self.k_f;
        let a = 1.0 / (fan_in as f64).sqrt();
        if !self.dynamic {
            store.init_uniform(
                &format!("{prefix}.kernel"),
                &[self.c_out, self.c_in, self.k_t, self.k_f],
                a,
                rng,
            );
            return;
        }
        store.init_uniform(
            &format!("{prefix}.kernels"),
            &[self.n_kernels, self.c_out, self.c_in, self.k_t, self.k_f],
            a,
            rng,
        );
        let h = self.bottleneck_width();
        store.init_linear(&format!("{prefix}.attn.w_reduce"), self.c_in, h, rng);
        store.init_zeros(&format!("{prefix}.attn.b_reduce"), &[h]);
        for (head, width) in [
            ("s", self.n_kernels * self.k_t),
            ("c", self.n_kernels * self.k_f),
            ("f", self.n_kernels * self.c_out),
            ("w", self.n_kernels),
        ] {
            store.init_linear(&format!("{prefix}.attn.w_{head}"), h, width, rng);
            store.init_zeros(&format!("{prefix}.attn.b_{head}"), &[width]);
        }
    }
}

/// Graph handles for the four attention tensors of one layer invocation.
#[derive(Clone, Copy)]
pub struct OmniAttention {
    /// `(n, k_t)` — kernel-temporal attention, sigmoid.
    pub alpha_s: Tid,
    /// `(n, k_f)` — kernel-frequency attention, sigmoid.
    pub alpha_c: Tid,
    /// `(n, c_out)` — output-channel attention, sigmoid.
    pub alpha_f: Tid,
    /// `(n,)` — kernel-selection attention, softmax.
    pub alpha_w: Tid,
}

impl OmniAttention {
    /// All-ones attention (softmax slot forced to a one-hot/uniform-free
    /// identity); used by degeneracy tests where the dynamic layer must
    /// collapse to a static convolution.
    pub fn forced_ones(g: &mut Graph, hyper: &OdconvHyper) -> Self {
        use crate::autograd::Arr;
        use ndarray::IxDyn;
        let n = hyper.n_kernels;
        Self {
            alpha_s: g.constant(Arr::from_elem(IxDyn(&[n, hyper.k_t]), 1.0)),
            alpha_c: g.constant(Arr::from_elem(IxDyn(&[n, hyper.k_f]), 1.0)),
            alpha_f: g.constant(Arr::from_elem(IxDyn(&[n, hyper.c_out]), 1.0)),
            alpha_w: g.constant(Arr::from_elem(IxDyn(&[n]), 1.0)),
        }
    }
}

/// Pool the input and run the attention MLP: returns the four attention
/// tensors for this sample.
pub fn compute_attention(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    hyper: &OdconvHyper,
) -> Result<OmniAttention> {
    hyper.validate()?;
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[0] != hyper.c_in {
        return Err(Error::Dimension(format!(
            "expected ({}, T, F) input, got {:?}",
            hyper.c_in, shape
        )));
    }
    if g.value(x).iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite values in attention input".into()));
    }

    // Global average pool over time and frequency → (1, c_in).
    let pooled = g.mean_axis(x, 2);
    let pooled = g.mean_axis(pooled, 1);
    let pooled = g.reshape(pooled, &[1, hyper.c_in]);

    let z = g.linear(
        pooled,
        bound.tid(&format!("{prefix}.attn.w_reduce")),
        bound.tid(&format!("{prefix}.attn.b_reduce")),
    );
    let z = g.relu(z);

    let head = |g: &mut Graph, name: &str| {
        g.linear(
            z,
            bound.tid(&format!("{prefix}.attn.w_{name}")),
            bound.tid(&format!("{prefix}.attn.b_{name}")),
        )
    };
    let n = hyper.n_kernels;
    let s = head(g, "s");
    let s = g.sigmoid(s);
    let alpha_s = g.reshape(s, &[n, hyper.k_t]);
    let c = head(g, "c");
    let c = g.sigmoid(c);
    let alpha_c = g.reshape(c, &[n, hyper.k_f]);
    let f = head(g, "f");
    let f = g.sigmoid(f);
    let alpha_f = g.reshape(f, &[n, hyper.c_out]);
    let w = head(g, "w");
    let w = g.softmax_lastdim(w);
    let alpha_w = g.reshape(w, &[n]);

    Ok(OmniAttention { alpha_s, alpha_c, alpha_f, alpha_w })
}

/// Weighted kernel aggregation: every kernel is scaled along its temporal,
/// frequency and output-channel axes and by its kernel weight, then the bank
/// is summed into one `(c_out, c_in, k_t, k_f)` kernel.
pub fn assemble_kernel(
    g: &mut Graph,
    kernels: Tid,
    attn: &OmniAttention,
    hyper: &OdconvHyper,
) -> Result<Tid> {
    let ks = g.shape(kernels).to_vec();
    let expect = [hyper.n_kernels, hyper.c_out, hyper.c_in, hyper.k_t, hyper.k_f];
    if ks != expect {
        return Err(Error::Dimension(format!(
            "kernel bank shape {:?} does not match hyperparameters {:?}",
            ks, expect
        )));
    }
    let n = hyper.n_kernels;
    let aw = g.reshape(attn.alpha_w, &[n, 1, 1, 1, 1]);
    let af = g.reshape(attn.alpha_f, &[n, hyper.c_out, 1, 1, 1]);
    let ac = g.reshape(attn.alpha_c, &[n, 1, 1, 1, hyper.k_f]);
    let a_s = g.reshape(attn.alpha_s, &[n, 1, 1, hyper.k_t, 1]);
    let k = g.mul(kernels, aw);
    let k = g.mul(k, af);
    let k = g.mul(k, ac);
    let k = g.mul(k, a_s);
    Ok(g.sum_axis(k, 0))
}

/// Full dynamic layer: attention → kernel assembly → convolution.
pub fn odconv_forward(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    hyper: &OdconvHyper,
) -> Result<Tid> {
    if !hyper.dynamic {
        return static_forward(g, x, bound, prefix, hyper);
    }
    let attn = compute_attention(g, x, bound, prefix, hyper)?;
    forward_with_attention(g, x, bound, prefix, hyper, &attn)
}

/// Convolve with an externally supplied attention (tests force identities
/// through this path).
pub fn forward_with_attention(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    hyper: &OdconvHyper,
    attn: &OmniAttention,
) -> Result<Tid> {
    let kernels = bound.tid(&format!("{prefix}.kernels"));
    let k = assemble_kernel(g, kernels, attn, hyper)?;
    conv_checked(g, x, k, hyper)
}

/// Static ablation path: one fixed kernel, no attention.
pub fn static_forward(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    hyper: &OdconvHyper,
) -> Result<Tid> {
    let k = bound.tid(&format!("{prefix}.kernel"));
    conv_checked(g, x, k, hyper)
}

fn conv_checked(g: &mut Graph, x: Tid, kernel: Tid, hyper: &OdconvHyper) -> Result<Tid> {
    let (ph, pw) = hyper.same_pad();
    let xs = g.shape(x);
    if xs[1] + 2 * ph < hyper.k_t || xs[2] + 2 * pw < hyper.k_f {
        return Err(Error::Dimension(format!(
            "kernel ({}, {}) larger than padded input ({}, {})",
            hyper.k_t,
            hyper.k_f,
            xs[1] + 2 * ph,
            xs[2] + 2 * pw
        )));
    }
    Ok(g.conv2d(x, kernel, hyper.stride, (ph, pw)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Arr;
    use crate::testkit::{self, BruteAttention, GradCheckSpec};
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn tiny_hyper() -> OdconvHyper {
        OdconvHyper {
            n_kernels: 2,
            c_in: 2,
            c_out: 3,
            k_t: 3,
            k_f: 3,
            stride: 1,
            reduction: 4,
            dynamic: true,
        }
    }

    fn rand_input(shape: &[usize], seed: u64) -> Arr {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Arr::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_kernel_softmax_is_exactly_one() {
        let hyper = OdconvHyper { n_kernels: 1, ..tiny_hyper() };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(rand_input(&[2, 4, 5], 2));
        let attn = compute_attention(&mut g, x, &bound, "od", &hyper).unwrap();
        assert_eq!(g.value(attn.alpha_w).as_slice().unwrap(), &[1.0]);
    }

    #[test]
    fn zero_input_with_zero_biases_gives_neutral_attention() {
        let hyper = tiny_hyper();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(Arr::zeros(IxDyn(&[2, 4, 5])));
        let attn = compute_attention(&mut g, x, &bound, "od", &hyper).unwrap();
        for t in [attn.alpha_s, attn.alpha_c, attn.alpha_f] {
            assert!(g.value(t).iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
        assert!(g.value(attn.alpha_w).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn kernel_attention_sums_to_one_on_random_input() {
        let hyper = OdconvHyper { n_kernels: 4, ..tiny_hyper() };
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        for seed in 0..5u64 {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let x = g.constant(rand_input(&[2, 6, 7], 100 + seed));
            let attn = compute_attention(&mut g, x, &bound, "od", &hyper).unwrap();
            let sum: f64 = g.value(attn.alpha_w).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            // Sigmoid heads stay strictly inside (0, 1).
            for t in [attn.alpha_s, attn.alpha_c, attn.alpha_f] {
                assert!(g.value(t).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let hyper = tiny_hyper();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let mut bad = Arr::zeros(IxDyn(&[2, 4, 5]));
        bad[[0, 0, 0]] = f64::NAN;
        let x = g.constant(bad);
        assert!(matches!(
            compute_attention(&mut g, x, &bound, "od", &hyper),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn forced_unit_attention_reduces_to_the_plain_kernel() {
        let hyper = OdconvHyper { n_kernels: 1, ..tiny_hyper() };
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let attn = OmniAttention::forced_ones(&mut g, &hyper);
        let k = assemble_kernel(&mut g, bound.tid("od.kernels"), &attn, &hyper).unwrap();
        let bank = store.get("od.kernels");
        for (a, b) in g.value(k).iter().zip(bank.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_kernel_attention_selects_that_kernel() {
        let hyper = tiny_hyper();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let mut attn = OmniAttention::forced_ones(&mut g, &hyper);
        attn.alpha_w = g.constant(ndarray::arr1(&[0.0, 1.0]).into_dyn());
        let k = assemble_kernel(&mut g, bound.tid("od.kernels"), &attn, &hyper).unwrap();
        let bank = store.get("od.kernels");
        let second = bank.index_axis(ndarray::Axis(0), 1);
        for (a, b) in g.value(k).iter().zip(second.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn assembly_matches_bruteforce_oracle_on_random_instances() {
        for seed in 0..5u64 {
            let hyper = tiny_hyper();
            let mut rng = ChaCha20Rng::seed_from_u64(40 + seed);
            let mut store = ParamStore::new();
            hyper.init_params(&mut store, "od", &mut rng);
            let x_arr = rand_input(&[2, 5, 6], 60 + seed);

            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let x = g.constant(x_arr.clone());
            let attn = compute_attention(&mut g, x, &bound, "od", &hyper).unwrap();
            let y = forward_with_attention(&mut g, x, &bound, "od", &hyper, &attn).unwrap();

            let to2 = |t: Tid, g: &Graph| {
                g.value(t).clone().into_dimensionality::<ndarray::Ix2>().unwrap()
            };
            let brute = testkit::bruteforce_eq1(
                store.get("od.kernels"),
                &BruteAttention {
                    alpha_s: to2(attn.alpha_s, &g),
                    alpha_c: to2(attn.alpha_c, &g),
                    alpha_f: to2(attn.alpha_f, &g),
                    alpha_w: g
                        .value(attn.alpha_w)
                        .clone()
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap(),
                },
                &x_arr,
                hyper.stride,
                hyper.same_pad(),
            )
            .unwrap();
            for (a, b) in g.value(y).iter().zip(brute.iter()) {
                assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn assemble_then_convolve_equals_convolve_then_sum() {
        let hyper = tiny_hyper();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let x_arr = rand_input(&[2, 4, 5], 12);

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(x_arr);
        let attn = compute_attention(&mut g, x, &bound, "od", &hyper).unwrap();
        let y_assembled = forward_with_attention(&mut g, x, &bound, "od", &hyper, &attn).unwrap();

        // Other reading: convolve with each weighted kernel, then sum.
        let kernels = bound.tid("od.kernels");
        let mut y_summed = None;
        for i in 0..hyper.n_kernels {
            let bank_i = g.slice_axis(kernels, 0, i, i + 1);
            let one = OmniAttention {
                alpha_s: g.slice_axis(attn.alpha_s, 0, i, i + 1),
                alpha_c: g.slice_axis(attn.alpha_c, 0, i, i + 1),
                alpha_f: g.slice_axis(attn.alpha_f, 0, i, i + 1),
                alpha_w: g.slice_axis(attn.alpha_w, 0, i, i + 1),
            };
            let single = OdconvHyper { n_kernels: 1, ..hyper };
            let k_i = assemble_kernel(&mut g, bank_i, &one, &single).unwrap();
            let y_i = g.conv2d(x, k_i, hyper.stride, hyper.same_pad());
            y_summed = Some(match y_summed {
                None => y_i,
                Some(acc) => g.add(acc, y_i),
            });
        }
        let y_summed = y_summed.unwrap();
        for (a, b) in g.value(y_assembled).iter().zip(g.value(y_summed).iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_kernel_with_unit_attention_preserves_input() {
        let hyper = OdconvHyper { n_kernels: 1, c_in: 1, c_out: 1, ..tiny_hyper() };
        let mut store = ParamStore::new();
        let mut delta = Arr::zeros(IxDyn(&[1, 1, 1, 3, 3]));
        delta[[0, 0, 0, 1, 1]] = 1.0;
        store.insert("od.kernels", delta);
        let x_arr = rand_input(&[1, 6, 7], 13);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(x_arr.clone());
        let attn = OmniAttention::forced_ones(&mut g, &hyper);
        let y = forward_with_attention(&mut g, x, &bound, "od", &hyper, &attn).unwrap();
        assert_eq!(g.value(y), &x_arr);
    }

    #[test]
    fn same_padding_preserves_spatial_shape() {
        let hyper = OdconvHyper { c_in: 1, c_out: 8, n_kernels: 4, ..tiny_hyper() };
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(rand_input(&[1, 151, 200], 18));
        let y = odconv_forward(&mut g, x, &bound, "od", &hyper).unwrap();
        assert_eq!(g.shape(y), &[8, 151, 200]);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let hyper = tiny_hyper();
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let mut store = ParamStore::new();
        hyper.init_params(&mut store, "od", &mut rng);
        let x_arr = rand_input(&[2, 5, 6], 20);
        let weights = rand_input(&[3, 5, 6], 21);

        let eval = |s: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let bound = s.bind(&mut g);
            let x = g.constant(x_arr.clone());
            let y = odconv_forward(&mut g, x, &bound, "od", &hyper).unwrap();
            let w = g.constant(weights.clone());
            let wy = g.mul(y, w);
            let l = g.sum_all(wy);
            g.value(l)[[]]
        };

        // Analytic gradients for every parameter.
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(x_arr.clone());
        let y = odconv_forward(&mut g, x, &bound, "od", &hyper).unwrap();
        let w = g.constant(weights.clone());
        let wy = g.mul(y, w);
        let loss = g.sum_all(wy);
        let grads = g.backward(loss);
        let mut analytic = BTreeMap::new();
        for (name, tid) in bound.iter() {
            let grad = grads
                .get(tid)
                .cloned()
                .unwrap_or_else(|| Arr::zeros(g.value(tid).raw_dim()));
            analytic.insert(name.to_string(), grad);
        }

        testkit::check_param_grads(&store, &GradCheckSpec::default(), eval, &analytic).unwrap();
    }
}
