//! Per-satellite training workload, time and energy for CPU-only and
//! GPU-equipped satellites.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ComputeError {
    #[error("satellite {id}: {what}")]
    Profile { id: usize, what: &'static str },
    #[error("local epochs must be at least 1")]
    ZeroEpochs,
    #[error("cpu fraction must lie in [0, 1], got {0}")]
    CpuFraction(f64),
    #[error("empty range for {0}")]
    EmptyRange(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardware {
    Cpu,
    Gpu,
}

impl Hardware {
    pub const ALL: [Hardware; 2] = [Hardware::Cpu, Hardware::Gpu];

    pub fn index(self) -> usize {
        match self {
            Hardware::Cpu => 0,
            Hardware::Gpu => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteProfile<S: Scalar> {
    pub id: usize,
    pub n_samples: u64,
    pub hardware: Hardware,
    pub alpha_flops_per_s: S,
    pub fan_out: usize,
    /// Effective switched capacitance (CPU only).
    #[serde(default)]
    pub gamma: S,
    #[serde(default)]
    pub cycles_per_sample: S,
    #[serde(default)]
    pub freq_hz: S,
    /// Average board power while training (GPU only).
    #[serde(default)]
    pub p_avg_w: S,
    pub c_flop: S,
}

impl<S: Scalar> SatelliteProfile<S> {
    pub fn validate(&self) -> Result<(), ComputeError> {
        let bad = |what| ComputeError::Profile { id: self.id, what };
        let pos = |v: S| v > S::zero() && v.is_finite();
        if !pos(self.alpha_flops_per_s) {
            return Err(bad("throughput must be positive"));
        }
        if self.fan_out < 1 {
            return Err(bad("fan-out must be at least 1"));
        }
        if !(self.c_flop >= S::zero()) || !self.c_flop.is_finite() {
            return Err(bad("FLOPs per sample must be non-negative"));
        }
        match self.hardware {
            Hardware::Cpu => {
                if !pos(self.gamma) || !pos(self.cycles_per_sample) || !pos(self.freq_hz) {
                    return Err(bad("CPU profile needs positive gamma, cycles and frequency"));
                }
            }
            Hardware::Gpu => {
                if !pos(self.p_avg_w) {
                    return Err(bad("GPU profile needs positive average power"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingCost<S: Scalar> {
    pub t_epoch_s: S,
    pub t_train_s: S,
    pub e_train_j: S,
    pub total_samples: u64,
}

/// Time and energy of one round of `local_epochs` passes over the local data.
pub fn training_cost<S: Scalar>(
    profile: &SatelliteProfile<S>,
    local_epochs: u32,
) -> Result<TrainingCost<S>, ComputeError> {
    if local_epochs == 0 {
        return Err(ComputeError::ZeroEpochs);
    }
    profile.validate()?;
    let flops = S::of_u64(profile.n_samples) * profile.c_flop;
    let t_epoch_s = flops / profile.alpha_flops_per_s;
    let epochs = S::of_u64(local_epochs as u64);
    let t_train_s = epochs * t_epoch_s;
    let total_samples = local_epochs as u64 * profile.n_samples;
    let e_train_j = match profile.hardware {
        Hardware::Cpu => {
            profile.gamma
                * profile.cycles_per_sample
                * S::of_u64(total_samples)
                * profile.freq_hz
                * profile.freq_hz
        }
        Hardware::Gpu => profile.p_avg_w * t_train_s,
    };
    Ok(TrainingCost {
        t_epoch_s,
        t_train_s,
        e_train_j,
        total_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &'static str) -> Result<(), ComputeError> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(ComputeError::EmptyRange(name))
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..self.max)
        }
    }

    fn draw_int(&self, rng: &mut impl Rng) -> u64 {
        let lo = self.min.ceil() as u64;
        let hi = self.max.floor() as u64;
        if hi <= lo {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

/// Uniform ranges used to synthesise satellite profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileDistributions {
    pub n_samples: Span,
    pub fan_out: Span,
    pub c_flop: f64,
    pub cpu_freq_hz: Span,
    /// CPU throughput is `freq_hz * flops_per_cycle`.
    pub cpu_flops_per_cycle: f64,
    pub cpu_gamma: Span,
    pub gpu_alpha_flops_per_s: Span,
    pub gpu_power_w: Span,
}

impl Default for ProfileDistributions {
    fn default() -> Self {
        Self {
            n_samples: Span::new(200.0, 600.0),
            fan_out: Span::new(4.0, 8.0),
            c_flop: 1e7,
            cpu_freq_hz: Span::new(1.0e9, 2.0e9),
            cpu_flops_per_cycle: 8.0,
            cpu_gamma: Span::new(0.5e-26, 1.5e-26),
            gpu_alpha_flops_per_s: Span::new(2.0e11, 4.0e11),
            gpu_power_w: Span::new(30.0, 60.0),
        }
    }
}

impl ProfileDistributions {
    pub fn validate(&self) -> Result<(), ComputeError> {
        self.n_samples.check("n_samples")?;
        self.fan_out.check("fan_out")?;
        if self.fan_out.min < 1.0 {
            return Err(ComputeError::EmptyRange("fan_out"));
        }
        self.cpu_freq_hz.check("cpu_freq_hz")?;
        self.cpu_gamma.check("cpu_gamma")?;
        self.gpu_alpha_flops_per_s.check("gpu_alpha_flops_per_s")?;
        self.gpu_power_w.check("gpu_power_w")?;
        if !(self.c_flop >= 0.0) || !(self.cpu_flops_per_cycle > 0.0) {
            return Err(ComputeError::EmptyRange("c_flop / cpu_flops_per_cycle"));
        }
        Ok(())
    }
}

/// Draws `count` profiles, exactly `round(count * cpu_fraction)` of them CPU.
///
/// Every satellite draws both its CPU and GPU parameters in a fixed order, and
/// the CPU set is a prefix of a seeded permutation. Lowering `cpu_fraction`
/// under the same seed therefore turns CPU satellites into GPU ones without
/// touching any other value.
pub fn sample_profiles(
    count: usize,
    cpu_fraction: f64,
    seed: u64,
    dist: &ProfileDistributions,
) -> Result<Vec<SatelliteProfile<f64>>, ComputeError> {
    if !(0.0..=1.0).contains(&cpu_fraction) {
        return Err(ComputeError::CpuFraction(cpu_fraction));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de));
    let n_cpu = (count as f64 * cpu_fraction).round() as usize;
    let mut is_cpu = vec![false; count];
    for &i in &order[..n_cpu] {
        is_cpu[i] = true;
    }

    let cycles = dist.c_flop / dist.cpu_flops_per_cycle;
    let profiles = (0..count)
        .map(|id| {
            let n_samples = dist.n_samples.draw_int(&mut rng);
            let fan_out = dist.fan_out.draw_int(&mut rng) as usize;
            let freq = dist.cpu_freq_hz.draw(&mut rng);
            let gamma = dist.cpu_gamma.draw(&mut rng);
            let gpu_alpha = dist.gpu_alpha_flops_per_s.draw(&mut rng);
            let gpu_power = dist.gpu_power_w.draw(&mut rng);
            if is_cpu[id] {
                SatelliteProfile {
                    id,
                    n_samples,
                    hardware: Hardware::Cpu,
                    alpha_flops_per_s: freq * dist.cpu_flops_per_cycle,
                    fan_out,
                    gamma,
                    cycles_per_sample: cycles,
                    freq_hz: freq,
                    p_avg_w: 0.0,
                    c_flop: dist.c_flop,
                }
            } else {
                SatelliteProfile {
                    id,
                    n_samples,
                    hardware: Hardware::Gpu,
                    alpha_flops_per_s: gpu_alpha,
                    fan_out,
                    gamma: 0.0,
                    cycles_per_sample: 0.0,
                    freq_hz: 0.0,
                    p_avg_w: gpu_power,
                    c_flop: dist.c_flop,
                }
            }
        })
        .collect();
    Ok(profiles)
}
