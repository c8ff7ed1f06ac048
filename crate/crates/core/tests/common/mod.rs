#![allow(dead_code)]

use std::sync::Arc;

use eigenlane::io::{generate_synthetic, DatasetRecord, SyntheticSpec};
use eigenlane::{Lane, SamplingGrid};

/// Per-image lanes of a synthetic dataset on its default grid.
pub struct LaneSet {
    pub grid: Arc<SamplingGrid>,
    pub records: Vec<DatasetRecord>,
    pub images: Vec<Vec<Lane>>,
}

impl LaneSet {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        let grid = Arc::new(spec.grid().unwrap());
        let records = generate_synthetic(spec).unwrap();
        let images = records.iter().map(|r| r.to_lanes(&grid).unwrap()).collect();
        Self {
            grid,
            records,
            images,
        }
    }

    pub fn lanes(&self) -> Vec<Lane> {
        self.images.iter().flatten().cloned().collect()
    }
}

pub fn spec(count: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        count,
        seed,
        ..Default::default()
    }
}
