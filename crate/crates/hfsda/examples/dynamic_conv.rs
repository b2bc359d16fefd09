//! Demonstrate the dynamic convolution layer: the four attention branches,
//! their normalization guarantees, and the collapse to a static convolution
//! when the attentions are forced to identity.
//!
//! Usage: cargo run --example dynamic_conv

use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use hfsda::autograd::{Arr, Graph};
use hfsda::odconv::{self, OdconvHyper, OmniAttention};
use hfsda::params::ParamStore;

fn main() -> hfsda::Result<()> {
    let hyper = OdconvHyper {
        n_kernels: 4,
        c_in: 1,
        c_out: 3,
        k_t: 3,
        k_f: 3,
        stride: 1,
        reduction: 2,
        dynamic: true,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    hyper.init_params(&mut store, "conv", &mut rng);
    println!("parameters:");
    for (name, v) in store.iter() {
        println!("  {:<22} {:?}", name, v.shape());
    }

    // Run the attention heads on a random input and check their ranges.
    let input = Arr::from_shape_fn(IxDyn(&[1, 12, 16]), |_| rng.gen_range(-1.0..1.0));
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let x = g.constant(input.clone());
    let attn = odconv::compute_attention(&mut g, x, &bound, "conv", &hyper)?;
    let alpha_w = g.value(attn.alpha_w).clone();
    println!("\nkernel attention alpha_w = {:.4}", alpha_w);
    let sum: f64 = alpha_w.iter().sum();
    println!("sum(alpha_w) = {sum:.12} (softmax head, sums to one)");
    for (label, tid) in
        [("alpha_s", attn.alpha_s), ("alpha_c", attn.alpha_c), ("alpha_f", attn.alpha_f)]
    {
        let v = g.value(tid);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        println!("{label}: {} values in [{lo:.4}, {hi:.4}] (sigmoid heads)", v.len());
    }
    let out = odconv::forward_with_attention(&mut g, x, &bound, "conv", &hyper, &attn)?;
    println!("dynamic output shape: {:?}", g.shape(out));

    // Forced-identity attentions with one kernel reduce the layer to a plain
    // convolution with that kernel.
    let single = OdconvHyper { n_kernels: 1, ..hyper };
    let mut store1 = ParamStore::new();
    single.init_params(&mut store1, "dyn", &mut rng);
    let mut g1 = Graph::new();
    let bound1 = store1.bind(&mut g1);
    let x1 = g1.constant(input);
    let ones = OmniAttention::forced_ones(&mut g1, &single);
    let dynamic_out = odconv::forward_with_attention(&mut g1, x1, &bound1, "dyn", &single, &ones)?;

    let kernel = store1
        .get("dyn.kernels")
        .as_ref()
        .clone()
        .into_shape(IxDyn(&[3, 1, 3, 3]))
        .expect("kernel bank reshapes to a single kernel");
    let k = g1.constant(kernel);
    let static_out = g1.conv2d(x1, k, single.stride, single.same_pad());
    let diff = (g1.value(dynamic_out).clone() - g1.value(static_out))
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    println!("\nforced-identity dynamic vs static convolution: max |diff| = {diff:.3e}");
    Ok(())
}
