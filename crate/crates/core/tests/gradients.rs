mod common;

use common::grads;

#[test]
fn diffusion_loss_gradients() {
    grads::diffusion_loss_gradients();
}

#[test]
fn reconstruction_loss_gradients() {
    grads::reconstruction_loss_gradients();
}

#[test]
fn contrastive_loss_gradients() {
    grads::contrastive_loss_gradients();
}

#[test]
fn matching_bpr_gradients() {
    grads::matching_bpr_gradients();
}

#[test]
fn item_bpr_gradients() {
    grads::item_bpr_gradients();
}

#[test]
fn item_predictor_gradients() {
    grads::item_predictor_gradients();
}
