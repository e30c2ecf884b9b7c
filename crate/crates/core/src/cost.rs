//! Layer cost model.
//!
//! Costs are dimensionless operation counts: `k_h * k_w * c_in * c_out` for a
//! convolution, `n_in * n_out` for a fully connected layer and the parameter
//! count for anything else. Spatial extent is deliberately not part of the
//! convolution cost.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::manifest::{LayerKind, LayerRange, LayerSpec, ModelManifest};
use crate::{Error, Result};

pub fn layer_cost(layer: &LayerSpec) -> u64 {
    match layer.kind {
        LayerKind::Conv2d {
            kernel_h,
            kernel_w,
            c_in,
            c_out,
        } => kernel_h
            .saturating_mul(kernel_w)
            .saturating_mul(c_in)
            .saturating_mul(c_out),
        LayerKind::Linear { n_in, n_out } => n_in.saturating_mul(n_out),
        LayerKind::Other => layer.param_count,
    }
}

/// Per-layer costs of a manifest and their prefix sums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostProfile {
    per_layer: Vec<u64>,
    cumulative: Vec<u64>,
    total: u64,
}

impl CostProfile {
    pub fn from_costs(per_layer: Vec<u64>) -> Self {
        let mut cumulative = Vec::with_capacity(per_layer.len());
        let mut running = 0u64;
        for &c in &per_layer {
            running = running.saturating_add(c);
            cumulative.push(running);
        }
        CostProfile {
            per_layer,
            cumulative,
            total: running,
        }
    }

    pub fn per_layer(&self) -> &[u64] {
        &self.per_layer
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }

    /// Sum of the costs of the layers in `range`.
    pub fn range_cost(&self, range: LayerRange) -> u64 {
        let hi = self.cumulative[range.end];
        if range.start == 0 {
            hi
        } else {
            hi - self.cumulative[range.start - 1]
        }
    }

    /// Share of the total carried by each layer. Falls back to a uniform
    /// `1/n` when the total is zero.
    pub fn relative(&self) -> Vec<f64> {
        let n = self.per_layer.len();
        if self.total == 0 {
            return vec![1.0 / n as f64; n];
        }
        let total = self.total as f64;
        self.per_layer.iter().map(|&c| c as f64 / total).collect()
    }

    /// Costs the partitioner works on: the real costs, or unit costs when
    /// every layer is free so that splits stay equal-count.
    pub(crate) fn effective_costs(&self) -> Vec<u64> {
        if self.total == 0 {
            vec![1; self.per_layer.len()]
        } else {
            self.per_layer.clone()
        }
    }
}

pub fn cost_profile(manifest: &ModelManifest) -> CostProfile {
    CostProfile::from_costs(manifest.layers().iter().map(layer_cost).collect())
}

/// Average cost per partition, `total / num_partitions`.
pub fn target_cost(profile: &CostProfile, num_partitions: usize) -> Result<f64> {
    if num_partitions == 0 {
        return Err(Error::ZeroPartitions);
    }
    Ok(profile.total() as f64 / num_partitions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn layer_cost_cases() {
        assert_eq!(layer_cost(&LayerSpec::conv2d(0, (3, 3), 3, 32, 0)), 864);
        assert_eq!(layer_cost(&LayerSpec::linear(0, 1280, 1000, 0)), 1_280_000);
        assert_eq!(layer_cost(&LayerSpec::other(0, 0)), 0);
        assert_eq!(layer_cost(&LayerSpec::other(0, 2560)), 2560);
    }

    #[test]
    fn conv_cost_ignores_param_count() {
        // depthwise convs list c_in == c_out; the formula does not see groups
        assert_eq!(layer_cost(&LayerSpec::conv2d(0, (3, 3), 960, 960, 8640)), 8_294_400);
    }

    #[test]
    fn scale_monotone() {
        let a = layer_cost(&LayerSpec::conv2d(0, (3, 3), 16, 24, 0));
        let b = layer_cost(&LayerSpec::conv2d(0, (3, 3), 16, 48, 0));
        assert_eq!(b, 2 * a);
        let a = layer_cost(&LayerSpec::linear(0, 100, 7, 0));
        let b = layer_cost(&LayerSpec::linear(0, 200, 7, 0));
        assert_eq!(b, 2 * a);
    }

    #[test]
    fn two_layer_profile() {
        let m = ModelManifest::new(
            "two",
            vec![
                LayerSpec::conv2d(0, (3, 3), 3, 32, 864),
                LayerSpec::linear(1, 1280, 1000, 0),
            ],
        )
        .unwrap();
        let p = cost_profile(&m);
        assert_eq!(p.per_layer(), &[864, 1_280_000]);
        assert_eq!(p.cumulative(), &[864, 1_280_864]);
        assert_eq!(p.total(), 1_280_864);
        assert_eq!(target_cost(&p, 2).unwrap(), 640_432.0);
        assert_eq!(p.range_cost(LayerRange::new(1, 1)), 1_280_000);
    }

    #[test]
    fn zero_total_is_uniform() {
        let p = CostProfile::from_costs(vec![0, 0, 0, 0]);
        assert_eq!(p.total(), 0);
        assert_eq!(p.relative(), vec![0.25; 4]);
        assert_eq!(target_cost(&p, 3).unwrap(), 0.0);
    }

    #[test]
    fn target_cost_division() {
        let p = CostProfile::from_costs(vec![47, 47, 47]);
        assert_eq!(target_cost(&p, 3).unwrap(), 47.0);
        assert_eq!(target_cost(&p, 0), Err(Error::ZeroPartitions));
    }
}
