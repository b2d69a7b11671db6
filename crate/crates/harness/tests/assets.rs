//! Files shipped alongside the harness.

use sit_core::fte::FteWeights;

#[test]
fn shipped_weights_match_the_built_in_kernel() {
    let bytes = include_bytes!("../weights/fte_default.sitw");
    assert_eq!(&bytes[..], &FteWeights::default_kernel().to_bytes()[..]);
    assert_eq!(FteWeights::from_bytes(bytes).unwrap(), FteWeights::default_kernel());
}
