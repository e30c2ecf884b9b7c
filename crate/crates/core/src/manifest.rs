//! Sequential model descriptions.
//!
//! A [`ModelManifest`] is an ordered list of [`LayerSpec`]s whose order is the
//! execution order. Only the attributes the cost model needs are kept: kernel
//! and channel sizes for convolutions, feature sizes for fully connected
//! layers and a parameter count for everything.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Layer type together with the size attributes that type requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        kernel_h: u64,
        kernel_w: u64,
        c_in: u64,
        c_out: u64,
    },
    Linear {
        n_in: u64,
        n_out: u64,
    },
    /// Activations, normalization, pooling, dropout and anything else. Costed
    /// by its parameter count alone.
    Other,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub param_count: u64,
}

impl LayerSpec {
    pub fn conv2d(index: usize, kernel: (u64, u64), c_in: u64, c_out: u64, param_count: u64) -> Self {
        LayerSpec {
            index,
            kind: LayerKind::Conv2d {
                kernel_h: kernel.0,
                kernel_w: kernel.1,
                c_in,
                c_out,
            },
            param_count,
        }
    }

    pub fn linear(index: usize, n_in: u64, n_out: u64, param_count: u64) -> Self {
        LayerSpec {
            index,
            kind: LayerKind::Linear { n_in, n_out },
            param_count,
        }
    }

    pub fn other(index: usize, param_count: u64) -> Self {
        LayerSpec {
            index,
            kind: LayerKind::Other,
            param_count,
        }
    }

    /// Checks the per-kind size attributes are all at least 1.
    pub fn validate(&self) -> Result<()> {
        let zero = |field: &str| Error::InvalidLayer {
            index: self.index,
            reason: format!("{field} must be >= 1"),
        };
        match self.kind {
            LayerKind::Conv2d {
                kernel_h,
                kernel_w,
                c_in,
                c_out,
            } => {
                for (name, v) in [
                    ("kernel_h", kernel_h),
                    ("kernel_w", kernel_w),
                    ("c_in", c_in),
                    ("c_out", c_out),
                ] {
                    if v == 0 {
                        return Err(zero(name));
                    }
                }
            }
            LayerKind::Linear { n_in, n_out } => {
                if n_in == 0 {
                    return Err(zero("n_in"));
                }
                if n_out == 0 {
                    return Err(zero("n_out"));
                }
            }
            LayerKind::Other => {}
        }
        Ok(())
    }
}

/// Inclusive interval of layer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        LayerRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// A validated, immutable sequential model description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    name: String,
    layers: Vec<LayerSpec>,
}

impl ModelManifest {
    /// Builds a manifest, checking that there is at least one layer, that
    /// indices run 0, 1, 2, ... and that every layer carries valid sizes.
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyManifest);
        }
        for (position, layer) in layers.iter().enumerate() {
            if layer.index != position {
                return Err(Error::NonContiguousIndex {
                    position,
                    found: layer.index,
                });
            }
            layer.validate()?;
        }
        Ok(ModelManifest {
            name: name.into(),
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn full_range(&self) -> LayerRange {
        LayerRange::new(0, self.layers.len() - 1)
    }

    /// Extracts the layers in `range` as a standalone manifest, re-indexed
    /// from 0 and named `<name>[start-end]`.
    pub fn sub_manifest(&self, range: LayerRange) -> Result<ModelManifest> {
        if range.is_empty() || range.end >= self.layers.len() {
            return Err(Error::RangeOutOfBounds {
                start: range.start,
                end: range.end,
                len: self.layers.len(),
            });
        }
        let layers = self.layers[range.start..=range.end]
            .iter()
            .enumerate()
            .map(|(i, l)| LayerSpec { index: i, ..*l })
            .collect();
        Ok(ModelManifest {
            name: format!("{}[{}]", self.name, range),
            layers,
        })
    }

    pub fn with_name(&self, name: impl ToString) -> ModelManifest {
        ModelManifest {
            name: name.to_string(),
            layers: self.layers.clone(),
        }
    }
}
