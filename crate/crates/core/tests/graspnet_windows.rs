mod common;

use common::{window_attention_errors, WindowCase};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn window_attention_matches_reference_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let case = WindowCase::random(&mut rng);
        let (w, sw) = window_attention_errors(case, &mut rng);
        assert!(w < 1e-10 && sw < 1e-10, "{case:?}: w-msa {w:e} sw-msa {sw:e}");
    }
}

#[test]
fn shifted_window_differs_from_plain_on_large_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let case = WindowCase { batch: 1, h: 8, w: 8, heads: 2, head_dim: 2, window: 4 };
    let c = case.channels();
    let params = common::rand_attention_params("a", c, 2, 4, &mut rng);
    let x = common::rand_tensor(&[1, 8, 8, c], &mut rng);
    let ap = common::windows::AttnParams::from_set(&params, "a");
    let plain = common::windows::dense_block_masked(&x, &ap, 2, 4);
    let shifted = common::windows::explicit_shifted(&x, &ap, 2, 4);
    assert!(plain.max_abs_diff(&shifted) > 1e-3);
}
