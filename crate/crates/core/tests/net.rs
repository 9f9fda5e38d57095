use lmnet::net::{
    forward, infer, loss, pointwise_weights, ForwardOptions, LMNetParams, LossTargets, NetConfig, NetOutput,
    CONTEXT_LAYERS, DILATIONS,
};
use lmnet::tensor::{conv2d, receptive_field, relu, softmax_channels, ConvAlgo, ConvSpec, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn targets(h: usize, w: usize, seed: u64) -> LossTargets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h * w;
    let mut classes = vec![0u8; n];
    let mut valid = vec![true; n];
    let mut sizes = vec![0.0f32; n];
    let mut corners = Tensor::full(&[24, h, w], f32::NAN);
    for p in 0..n {
        let r: f32 = rng.random();
        if r < 0.15 {
            valid[p] = false;
        } else if r < 0.4 {
            classes[p] = rng.random_range(1..4);
            sizes[p] = rng.random_range(1.0..30.0f32).round();
            for ch in 0..24 {
                corners.data_mut()[ch * n + p] = rng.random_range(-2.0..2.0);
            }
        }
    }
    // Guarantee both sets are non-empty.
    classes[0] = 1;
    valid[0] = true;
    sizes[0] = sizes[0].max(1.0);
    for ch in 0..24 {
        corners.data_mut()[ch * n] = 0.5;
    }
    classes[1] = 0;
    valid[1] = true;
    LossTargets {
        height: h,
        width: w,
        classes,
        valid,
        corners,
        instance_size: sizes,
        class_mean_size: [0.0, 12.0, 4.0, 8.0],
    }
}

proptest! {
    #[test]
    fn larger_m_adds_background_mass_only(seed in any::<u64>(), m in 0.1f32..8.0, extra in 0.1f32..4.0) {
        let t = targets(6, 10, seed);
        let a = pointwise_weights(&t, m).unwrap();
        let b = pointwise_weights(&t, m + extra).unwrap();
        let mass = |w: &[f32]| -> f64 {
            (0..w.len()).filter(|&p| t.valid[p] && t.classes[p] == 0).map(|p| w[p] as f64).sum()
        };
        prop_assert!(mass(&b.objectness) > mass(&a.objectness));
        for p in 0..t.classes.len() {
            if t.classes[p] != 0 {
                prop_assert_eq!(a.objectness[p], b.objectness[p]);
                prop_assert_eq!(a.corners[p], b.corners[p]);
            }
        }
    }

    #[test]
    fn loss_is_non_negative(seed in any::<u64>()) {
        let t = targets(8, 16, seed);
        let params = LMNetParams::build_with(NetConfig::reduced(4, 8), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::from_vec(&[5, 8, 16], (0..640).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out = infer(&params, &x, ConvAlgo::Im2col).unwrap();
        let l = loss(&out, &t, &pointwise_weights(&t, 4.0).unwrap()).unwrap();
        prop_assert!(l.total >= 0.0 && l.objectness >= 0.0 && l.corners >= 0.0);
    }
}

#[test]
fn loss_vanishes_only_at_the_targets() {
    let t = targets(4, 6, 7);
    let w = pointwise_weights(&t, 4.0).unwrap();
    let n = 24;
    let mut logits = Tensor::zeros(&[4, 4, 6]);
    for p in 0..n {
        logits.data_mut()[t.classes[p] as usize * n + p] = 200.0;
    }
    let corners = Tensor::from_vec(
        &[24, 4, 6],
        t.corners
            .data()
            .iter()
            .map(|v| if v.is_finite() { *v } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let exact = NetOutput {
        objectness: softmax_channels(&logits).unwrap(),
        logits,
        corners,
    };
    assert_eq!(loss(&exact, &t, &w).unwrap().total, 0.0);
    let mut off = exact.clone();
    off.corners.data_mut()[0] += 0.1;
    assert!(loss(&off, &t, &w).unwrap().total > 0.0);
}

#[test]
fn inference_is_bit_identical() {
    let params = LMNetParams::build_with(NetConfig::reduced(8, 16), 4).unwrap();
    let x = Tensor::from_vec(
        &[5, 16, 64],
        (0..5 * 16 * 64).map(|i| ((i * 37) % 101) as f32 / 50.0 - 1.0).collect(),
    )
    .unwrap();
    let (a, _) = forward(&params, &x, &ForwardOptions::inference()).unwrap();
    let (b, _) = forward(&params, &x, &ForwardOptions::inference()).unwrap();
    assert_eq!(a, b);
}

/// Perturbs one cell of a positive map and measures how far the change
/// spreads through the dilated stack. Positive weights keep every ReLU open,
/// so the footprint is the full receptive field.
#[test]
fn dilated_stack_footprint_matches_receptive_field() {
    let specs: Vec<ConvSpec> = DILATIONS.iter().map(|&d| ConvSpec::same(2, 2, 3, d)).collect();
    assert_eq!(specs.len(), CONTEXT_LAYERS - 1);
    let size = 160;
    let run = |x: &Tensor| {
        specs.iter().fold(x.clone(), |h, s| {
            let w = Tensor::full(&s.weight_shape(), 0.05);
            relu(&conv2d(&h, &w, &Tensor::full(&[2], 0.01), s).unwrap())
        })
    };
    let base = Tensor::full(&[2, size, size], 1.0);
    let mut bumped = base.clone();
    let centre = size / 2;
    bumped.set3(0, centre, centre, 2.0);
    let (a, b) = (run(&base), run(&bumped));
    let (mut rows, mut cols) = ((usize::MAX, 0), (usize::MAX, 0));
    for y in 0..size {
        for x in 0..size {
            if (0..2).any(|c| a.at3(c, y, x) != b.at3(c, y, x)) {
                rows = (rows.0.min(y), rows.1.max(y));
                cols = (cols.0.min(x), cols.1.max(x));
            }
        }
    }
    let extent = (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1);
    assert_eq!(extent, receptive_field(&specs));
    assert_eq!(extent, (129, 129));
}
