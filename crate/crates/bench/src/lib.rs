//! Fixtures for the criterion benches.

use spanet_core::blocks::random_params;
use spanet_core::{BlockKind, BlockParams, BlockSpec, FeatureMap, Result, Rng};

/// Block shape on a square `side x side` map.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub side: usize,
    pub channels: usize,
    pub inner: usize,
    pub k: usize,
}

impl Shape {
    pub fn positions(&self) -> usize {
        self.side * self.side
    }
}

/// The cost-model example (n = 1024, c_i = 64, k = 64) and a later-stage
/// shape where the two blocks cost about the same.
pub const SHAPES: [Shape; 2] = [
    Shape { side: 32, channels: 128, inner: 64, k: 64 },
    Shape { side: 8, channels: 256, inner: 128, k: 16 },
];

/// Seeded parameters and a standard-normal input.
pub fn fixture(kind: BlockKind, shape: Shape, seed: u64) -> Result<(BlockParams, FeatureMap)> {
    let spec = BlockSpec::new(kind, shape.channels, shape.k).with_inner(shape.inner);
    let params = random_params(&spec, seed)?;
    let mut rng = Rng::new(seed ^ 1);
    let len = shape.channels * shape.positions();
    let x = FeatureMap::new(shape.channels, shape.side, shape.side, (0..len).map(|_| rng.normal()).collect())?;
    Ok((params, x))
}
