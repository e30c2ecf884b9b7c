use alloc::format;
use alloc::string::String;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    High,
    Medium,
    Low,
    Custom,
}

/// Resource limits of a simulated node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub name: ProfileName,
    /// Cores.
    pub cpu: f64,
    pub memory_mib: f64,
}

impl NodeProfile {
    pub const HIGH: NodeProfile = NodeProfile {
        name: ProfileName::High,
        cpu: 1.0,
        memory_mib: 1024.0,
    };
    pub const MEDIUM: NodeProfile = NodeProfile {
        name: ProfileName::Medium,
        cpu: 0.6,
        memory_mib: 512.0,
    };
    pub const LOW: NodeProfile = NodeProfile {
        name: ProfileName::Low,
        cpu: 0.4,
        memory_mib: 512.0,
    };

    pub fn custom(cpu: f64, memory_mib: f64) -> Result<Self> {
        if !(cpu.is_finite() && cpu > 0.0 && memory_mib.is_finite() && memory_mib > 0.0) {
            return Err(Error::InvalidNode(format!(
                "custom profile needs cpu > 0 and memory > 0, got ({cpu}, {memory_mib})"
            )));
        }
        Ok(NodeProfile {
            name: ProfileName::Custom,
            cpu,
            memory_mib,
        })
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "high" => Some(Self::HIGH),
            "medium" => Some(Self::MEDIUM),
            "low" => Some(Self::LOW),
            _ => None,
        }
    }
}

/// Execution-time model of the simulator.
///
/// `time = cost * base / cpu * pressure * (1 + jitter)`, where `pressure` is
/// `memory_pressure_factor` when the task's working set exceeds
/// `memory_pressure_threshold` of node memory and 1 otherwise, and `jitter`
/// is uniform in `[-jitter_pct, +jitter_pct]` percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecModel {
    /// Milliseconds per cost unit on one full core.
    pub base_ms_per_cost_unit: f64,
    pub memory_pressure_factor: f64,
    /// Fraction of node memory above which `memory_pressure_factor` applies.
    pub memory_pressure_threshold: f64,
    pub jitter_pct: f64,
}

impl Default for ExecModel {
    /// Calibrated so the bundled MobileNetV2 manifest (44,049,952 cost units)
    /// takes about 229 ms on a 1.0-core node.
    fn default() -> Self {
        ExecModel {
            base_ms_per_cost_unit: 5.2e-6,
            memory_pressure_factor: 1.5,
            memory_pressure_threshold: 0.5,
            jitter_pct: 5.0,
        }
    }
}

impl ExecModel {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidExecModel(m));
        if !(self.base_ms_per_cost_unit.is_finite() && self.base_ms_per_cost_unit > 0.0) {
            return err(format!(
                "base_ms_per_cost_unit must be > 0, got {}",
                self.base_ms_per_cost_unit
            ));
        }
        if !(self.memory_pressure_factor.is_finite() && self.memory_pressure_factor >= 1.0) {
            return err(format!(
                "memory_pressure_factor must be >= 1, got {}",
                self.memory_pressure_factor
            ));
        }
        if !(self.memory_pressure_threshold > 0.0 && self.memory_pressure_threshold <= 1.0) {
            return err(format!(
                "memory_pressure_threshold must lie in (0, 1], got {}",
                self.memory_pressure_threshold
            ));
        }
        if !(0.0..=50.0).contains(&self.jitter_pct) {
            return err(format!("jitter_pct must lie in [0, 50], got {}", self.jitter_pct));
        }
        Ok(())
    }
}

/// Uniform draw in [0, 1) from the top 53 bits.
pub(crate) fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Simulated execution time in ms of `cost` units with a `working_set_mib`
/// footprint. Always consumes exactly one draw from `rng`.
pub fn exec_time(
    cost: f64,
    working_set_mib: f64,
    node: &NodeProfile,
    model: &ExecModel,
    rng: &mut impl RngCore,
) -> Result<f64> {
    if node.cpu.is_nan() || node.cpu <= 0.0 {
        return Err(Error::ZeroCpu);
    }
    let u = unit_f64(rng);
    let jitter = (2.0 * u - 1.0) * model.jitter_pct / 100.0;
    let pressure = if working_set_mib > model.memory_pressure_threshold * node.memory_mib {
        model.memory_pressure_factor
    } else {
        1.0
    };
    Ok(cost * model.base_ms_per_cost_unit / node.cpu * pressure * (1.0 + jitter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn still() -> ExecModel {
        ExecModel {
            jitter_pct: 0.0,
            ..ExecModel::default()
        }
    }

    #[test]
    fn identity_without_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = still();
        let full = NodeProfile::custom(1.0, 1024.0).unwrap();
        let t = exec_time(1000.0, 0.0, &full, &m, &mut rng).unwrap();
        assert_eq!(t, 1000.0 * m.base_ms_per_cost_unit);
    }

    #[test]
    fn doubling_cpu_halves_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = still();
        let a = exec_time(5e6, 0.0, &NodeProfile::custom(0.5, 512.0).unwrap(), &m, &mut rng).unwrap();
        let b = exec_time(5e6, 0.0, &NodeProfile::custom(1.0, 512.0).unwrap(), &m, &mut rng).unwrap();
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn profile_ordering() {
        let m = ExecModel::default();
        let cost = 44_049_952.0;
        let mut times = [0.0; 3];
        for (i, p) in [NodeProfile::HIGH, NodeProfile::MEDIUM, NodeProfile::LOW]
            .iter()
            .enumerate()
        {
            // same seed for every profile: identical jitter
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            times[i] = exec_time(cost, 64.0, p, &m, &mut rng).unwrap();
        }
        assert!(times[0] < times[1] && times[1] < times[2], "{times:?}");
        assert!((200.0..280.0).contains(&times[0]));
    }

    #[test]
    fn jitter_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ExecModel {
            jitter_pct: 10.0,
            ..ExecModel::default()
        };
        let base = 1e6 * m.base_ms_per_cost_unit;
        for _ in 0..1000 {
            let t = exec_time(1e6, 0.0, &NodeProfile::HIGH, &m, &mut rng).unwrap();
            assert!(t >= base * 0.9 && t <= base * 1.1);
        }
    }

    #[test]
    fn memory_pressure_applies_above_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = still();
        let small = exec_time(1e6, 100.0, &NodeProfile::LOW, &m, &mut rng).unwrap();
        let big = exec_time(1e6, 300.0, &NodeProfile::LOW, &m, &mut rng).unwrap();
        assert_eq!(big, small * 1.5);
    }

    #[test]
    fn validation() {
        assert!(ExecModel::default().validate().is_ok());
        let bad = ExecModel {
            jitter_pct: 60.0,
            ..ExecModel::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExecModel {
            memory_pressure_factor: 0.5,
            ..ExecModel::default()
        };
        assert!(bad.validate().is_err());
        assert!(NodeProfile::custom(0.0, 10.0).is_err());
        let zero = NodeProfile {
            cpu: 0.0,
            ..NodeProfile::HIGH
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            exec_time(1.0, 0.0, &zero, &ExecModel::default(), &mut rng),
            Err(Error::ZeroCpu)
        );
    }
}
