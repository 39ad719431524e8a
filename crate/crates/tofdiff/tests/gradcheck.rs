//! Central finite-difference verification of every hand-written backward
//! pass, at f64 precision.

use tofdiff::nn::{
    backward_guided, forward_guided, init_base, init_guidance, GuidanceNet, ModelConfig,
    ParamBlocks, UNet,
};
use tofdiff::rng;
use tofdiff::tensor::Tensor;
use tofdiff::training::loss_eps;

fn perturb_all<P: ParamBlocks<f64>>(p: &mut P, seed: u64, scale: f64) {
    let mut r = rng::stream(seed, &[0x9e47]);
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v += scale * (rand::Rng::gen::<f64>(&mut r) - 0.5);
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Checks every base parameter of a small net against central differences.
#[test]
fn base_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        in_channels: 1,
        base_width: 1,
        depth_levels: 2,
        time_embed_dim: 2,
        guidance_channels: 2,
    };
    let mut net: UNet<f64> = init_base(&cfg, 3).unwrap();
    perturb_all(&mut net, 7, 0.4);
    let mut r = rng::stream(21, &[]);
    let x = Tensor::<f64>::randn(1, 4, 4, &mut r);
    let target = Tensor::<f64>::randn(1, 4, 4, &mut r);
    let t = 5usize;

    let loss_of = |net: &UNet<f64>| -> f64 {
        let (pred, _) = net.forward_base(&x, t).unwrap();
        loss_eps(&target, &pred).unwrap()
    };

    let (pred, cache) = net.forward_base(&x, t).unwrap();
    let mut grads = net.zeros_like();
    // d(loss)/d(pred) for mean squared error
    let scale = 2.0 / pred.len() as f64;
    let dl = {
        let mut d = pred.clone();
        for (dv, &tv) in d.data_mut().iter_mut().zip(target.data()) {
            *dv = (*dv - tv) * scale;
        }
        d
    };
    net.backward_base(&cache, &dl, &mut grads);

    let h = 1e-5;
    let analytic = grads.named_blocks();
    let count = net.param_count();
    assert!(count <= 500, "miniature net has {count} params");
    let mut worst = 0.0f64;
    for (bi, (name, gblock)) in analytic.iter().enumerate() {
        for j in 0..gblock.len() {
            let mut plus = net.clone();
            plus.blocks_mut()[bi][j] += h;
            let up = loss_of(&plus);
            let mut minus = net.clone();
            minus.blocks_mut()[bi][j] -= h;
            let down = loss_of(&minus);
            let fd = (up - down) / (2.0 * h);
            let re = rel_err(gblock[j], fd);
            worst = worst.max(re);
            assert!(
                re < 1e-4,
                "{name}[{j}]: analytic {} vs fd {} (rel {re})",
                gblock[j],
                fd
            );
        }
    }
    println!("base gradcheck: {count} params, worst rel err {worst:.3e}");
}

/// Checks every guidance parameter through the frozen decoder path.
#[test]
fn guidance_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        in_channels: 1,
        base_width: 1,
        depth_levels: 2,
        time_embed_dim: 2,
        guidance_channels: 2,
    };
    let mut base: UNet<f64> = init_base(&cfg, 4).unwrap();
    perturb_all(&mut base, 8, 0.4);
    let mut guide: GuidanceNet<f64> = init_guidance(&base);
    // move zero convolutions off zero so every gradient path is live
    perturb_all(&mut guide, 9, 0.4);

    let mut r = rng::stream(22, &[]);
    let x = Tensor::<f64>::randn(1, 4, 4, &mut r);
    let g = Tensor::<f64>::randn(2, 4, 4, &mut r);
    let target = Tensor::<f64>::randn(1, 4, 4, &mut r);
    let t = 3usize;

    let loss_of = |guide: &GuidanceNet<f64>| -> f64 {
        let (pred, _) = forward_guided(&base, guide, &x, t, &g).unwrap();
        loss_eps(&target, &pred).unwrap()
    };

    let (pred, cache) = forward_guided(&base, &guide, &x, t, &g).unwrap();
    let mut grads = guide.zeros_like();
    let scale = 2.0 / pred.len() as f64;
    let dl = {
        let mut d = pred.clone();
        for (dv, &tv) in d.data_mut().iter_mut().zip(target.data()) {
            *dv = (*dv - tv) * scale;
        }
        d
    };
    backward_guided(&base, &guide, &cache, &dl, &mut grads);

    let h = 1e-5;
    let analytic = grads.named_blocks();
    let mut worst = 0.0f64;
    for (bi, (name, gblock)) in analytic.iter().enumerate() {
        for j in 0..gblock.len() {
            let mut plus = guide.clone();
            plus.blocks_mut()[bi][j] += h;
            let up = loss_of(&plus);
            let mut minus = guide.clone();
            minus.blocks_mut()[bi][j] -= h;
            let down = loss_of(&minus);
            let fd = (up - down) / (2.0 * h);
            let re = rel_err(gblock[j], fd);
            worst = worst.max(re);
            assert!(
                re < 1e-4,
                "{name}[{j}]: analytic {} vs fd {} (rel {re})",
                gblock[j],
                fd
            );
        }
    }
    println!(
        "guidance gradcheck: {} params, worst rel err {worst:.3e}",
        guide.param_count()
    );
}

/// Spot-checks a three-level net so the cross-level bookkeeping (skips,
/// upsampling, concat splits) is exercised; samples a parameter subset.
#[test]
fn deep_net_gradients_spot_check() {
    let cfg = ModelConfig {
        in_channels: 2,
        base_width: 2,
        depth_levels: 3,
        time_embed_dim: 4,
        guidance_channels: 3,
    };
    let mut net: UNet<f64> = init_base(&cfg, 5).unwrap();
    perturb_all(&mut net, 11, 0.3);
    let mut r = rng::stream(23, &[]);
    let x = Tensor::<f64>::randn(2, 8, 8, &mut r);
    let target = Tensor::<f64>::randn(2, 8, 8, &mut r);
    let t = 9usize;

    let loss_of = |net: &UNet<f64>| -> f64 {
        let (pred, _) = net.forward_base(&x, t).unwrap();
        loss_eps(&target, &pred).unwrap()
    };
    let (pred, cache) = net.forward_base(&x, t).unwrap();
    let mut grads = net.zeros_like();
    let scale = 2.0 / pred.len() as f64;
    let dl = {
        let mut d = pred.clone();
        for (dv, &tv) in d.data_mut().iter_mut().zip(target.data()) {
            *dv = (*dv - tv) * scale;
        }
        d
    };
    net.backward_base(&cache, &dl, &mut grads);

    let h = 1e-5;
    let analytic = grads.named_blocks();
    let nblocks = analytic.len();
    for bi in 0..nblocks {
        let (name, gblock) = &analytic[bi];
        // first, middle, last element of every block
        let picks = [0, gblock.len() / 2, gblock.len() - 1];
        for &j in picks.iter() {
            let mut plus = net.clone();
            plus.blocks_mut()[bi][j] += h;
            let up = loss_of(&plus);
            let mut minus = net.clone();
            minus.blocks_mut()[bi][j] -= h;
            let down = loss_of(&minus);
            let fd = (up - down) / (2.0 * h);
            let re = rel_err(gblock[j], fd);
            assert!(re < 1e-4, "{name}[{j}]: rel {re}");
        }
    }
}
