use mirrornet::mirrornet::gradcheck::{encoder_error, layer_cases, micro_model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

fn run_case(prefix: &str) {
    let cases: Vec<_> = layer_cases().into_iter().filter(|(n, _)| n.starts_with(prefix)).collect();
    assert!(!cases.is_empty());
    for (name, case) in cases {
        for seed in 0..SEEDS {
            let err = case(&mut ChaCha8Rng::seed_from_u64(seed));
            assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn conv_pointwise() {
    run_case("conv k=1");
}

#[test]
fn conv_dilated() {
    run_case("conv k=3");
}

#[test]
fn avgpool() {
    run_case("avgpool");
}

#[test]
fn upsample() {
    run_case("upsample");
}

#[test]
fn relu() {
    run_case("relu");
}

#[test]
fn sigmoid() {
    run_case("sigmoid");
}

#[test]
fn mse_both_arguments() {
    run_case("mse");
}

#[test]
fn encoder_stack() {
    let cfg = micro_model();
    cfg.validate().unwrap();
    for seed in 0..SEEDS {
        let err = encoder_error(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        assert!(err < TOL, "encoder stack seed {seed}: relative error {err:e}");
    }
}
