//! Demonstrate the dual-attention block: frequency attention that is exactly
//! permutation-invariant over time, row-stochastic temporal attention, and
//! the parameter saving over a Conformer block of the same width.
//!
//! Usage: cargo run --example attention_block

use ndarray::IxDyn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use hfsda::autograd::{Arr, Graph};
use hfsda::dda::{self, BlockCfg, BlockKind, TrainCtx};
use hfsda::params::ParamStore;

fn fa_vector(store: &ParamStore, x: &Arr) -> Vec<f64> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let xt = g.constant(x.clone());
    let u = dda::fa_weights(&mut g, xt, &bound, "fa").unwrap();
    g.value(u).iter().copied().collect()
}

fn main() -> hfsda::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let dim = 32;

    // --- Frequency attention: time-permutation invariance -----------------
    let mut fa_store = ParamStore::new();
    dda::init_fa(&mut fa_store, "fa", dim, &mut rng);
    let x = Arr::from_shape_fn(IxDyn(&[20, dim]), |_| rng.gen_range(-1.0..1.0));
    let baseline = fa_vector(&fa_store, &x);

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut rng);
        let mut shuffled = Arr::zeros(IxDyn(&[20, dim]));
        for (dst, &src) in order.iter().enumerate() {
            for f in 0..dim {
                shuffled[[dst, f]] = x[[src, f]];
            }
        }
        let permuted = fa_vector(&fa_store, &shuffled);
        let diff = baseline
            .iter()
            .zip(&permuted)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(diff);
    }
    println!("frequency attention under 20 time shuffles: max |delta| = {worst:.1e} (exact)");
    let (lo, hi) = baseline.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    println!("attention weights lie in [{lo:.4}, {hi:.4}] (sigmoid gate)");

    // --- Temporal attention: every row of every head is a distribution ----
    let cfg = BlockCfg { dim, heads: 4, ff_expansion: 2, kind: BlockKind::Dda, conv_kernel: 31 };
    let mut store = ParamStore::new();
    dda::init_mhsa(&mut store, "mhsa", &cfg, &mut rng);
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let xt = g.constant(x.clone());
    let mhsa = dda::mhsa_forward(&mut g, xt, &bound, "mhsa", cfg.heads, &mut TrainCtx::inference())?;
    let mut worst_row: f64 = 0.0;
    for &head in &mhsa.attn {
        for row in g.value(head).rows() {
            worst_row = worst_row.max((row.sum() - 1.0).abs());
        }
    }
    println!(
        "temporal attention: {} heads x 20 rows, max |row sum - 1| = {worst_row:.1e}",
        mhsa.attn.len()
    );

    // --- Whole block: shape-preserving map, cheaper than a Conformer ------
    let count = |kind: BlockKind| {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let block_cfg = BlockCfg { dim: 256, heads: 4, ff_expansion: 4, kind, conv_kernel: 31 };
        dda::init_block(&mut store, "b", &block_cfg, &mut rng);
        store.n_scalars("b.")
    };
    let dda_params = count(BlockKind::Dda);
    let conformer_params = count(BlockKind::Conformer);
    println!(
        "block parameters at width 256: dual-attention {dda_params}, conformer {conformer_params} \
         ({:.1}% saved)",
        100.0 * (conformer_params - dda_params) as f64 / conformer_params as f64
    );

    let mut block_store = ParamStore::new();
    dda::init_block(&mut block_store, "blk", &cfg, &mut rng);
    let mut g2 = Graph::new();
    let bound2 = block_store.bind(&mut g2);
    let x2 = g2.constant(x);
    let y = dda::block_forward(&mut g2, x2, &bound2, "blk", &cfg, &mut TrainCtx::inference())?;
    println!("block maps (20, {dim}) -> {:?}", g2.shape(y));
    Ok(())
}
