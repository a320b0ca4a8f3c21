#[macro_use]
mod common;

use common::oracles;

#[test]
fn dft_matches_naive_transform_on_random_images() {
    oracles::dft_oracle().unwrap();
}

#[test]
fn mmd_matches_double_sum() {
    oracles::mmd_oracle().unwrap();
}

#[test]
fn auc_matches_pairwise_count() {
    oracles::auc_oracle().unwrap();
}

#[test]
fn mlp_gradient_matches_central_differences() {
    oracles::mlp_gradient_oracle().unwrap();
}

#[test]
fn gbt_root_gain_matches_hand_computation() {
    oracles::gbt_gain_oracle().unwrap();
}
