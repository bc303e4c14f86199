mod common;

use common::oracles;

#[test]
fn every_single_user_instance_up_to_six_items() {
    oracles::every_single_user_instance_up_to_six_items();
}

#[test]
fn every_four_user_instance_on_three_items() {
    oracles::every_four_user_instance_on_three_items();
}

#[test]
fn sampled_four_user_instances_on_six_items() {
    oracles::sampled_four_user_instances_on_six_items();
}

#[test]
fn hand_cases() {
    oracles::hand_cases();
}

#[test]
fn topk_matches_full_sort_and_tie_rule() {
    oracles::topk_matches_full_sort_and_tie_rule();
}
