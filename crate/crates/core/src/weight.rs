//! Positive mean-one weight processes `W_t` whose logarithm has independent
//! increments, one independent copy per tree vertex.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::noise::{keyed_stream, VertexNoiseKey};
use crate::tree_flow::TreeArray;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    /// `W_t = exp(B_t - t/2)`.
    #[default]
    Gaussian,
    /// `log W_t` is a compound Poisson process with Normal(`jump_mean`, `jump_sd`)
    /// jumps at `rate`, minus the drift that makes `E[W_t] = 1`.
    CompoundPoisson {
        #[serde(default = "default_rate")]
        rate: f64,
        #[serde(default)]
        jump_mean: f64,
        #[serde(default = "default_jump_sd")]
        jump_sd: f64,
    },
}

fn default_rate() -> f64 {
    1.0
}

fn default_jump_sd() -> f64 {
    0.3
}

impl WeightSpec {
    pub fn compound_poisson_default() -> Self {
        WeightSpec::CompoundPoisson {
            rate: default_rate(),
            jump_mean: 0.0,
            jump_sd: default_jump_sd(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let WeightSpec::CompoundPoisson {
            rate,
            jump_mean,
            jump_sd,
        } = *self
        {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(CascadeError::Config(format!(
                    "rate must be positive, got {rate}"
                )));
            }
            if !jump_mean.is_finite() || !(jump_sd >= 0.0 && jump_sd.is_finite()) {
                return Err(CascadeError::Config(format!(
                    "invalid jump law N({jump_mean}, {jump_sd}^2)"
                )));
            }
        }
        Ok(())
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, WeightSpec::Gaussian)
    }

    /// Jump moment generating function `E[e^{hJ}]`.
    fn jump_mgf(jump_mean: f64, jump_sd: f64, h: f64) -> f64 {
        (h * jump_mean + 0.5 * h * h * jump_sd * jump_sd).exp()
    }

    /// `log E[W_t^h]`.
    pub fn log_moment(&self, t: f64, h: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(CascadeError::OutOfRange(format!("time t = {t}")));
        }
        if !h.is_finite() {
            return Err(CascadeError::MomentDomain(h));
        }
        Ok(match *self {
            WeightSpec::Gaussian => 0.5 * t * h * (h - 1.0),
            WeightSpec::CompoundPoisson {
                rate,
                jump_mean,
                jump_sd,
            } => {
                let m1 = Self::jump_mgf(jump_mean, jump_sd, 1.0) - 1.0;
                let mh = Self::jump_mgf(jump_mean, jump_sd, h) - 1.0;
                t * rate * (mh - h * m1)
            }
        })
    }

    /// `E[W_t^h]`.
    pub fn moment(&self, t: f64, h: f64) -> Result<f64> {
        Ok(self.log_moment(t, h)?.exp())
    }

    /// `E[W_{t,t+s}^h]`; both built-in kinds have stationary increments.
    pub fn increment_moment(&self, _t: f64, s: f64, h: f64) -> Result<f64> {
        self.moment(s, h)
    }

    /// `E[W_t log W_t]`, the derivative of `h -> E[W_t^h]` at `h = 1`.
    pub fn w_log_w(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(CascadeError::OutOfRange(format!("time t = {t}")));
        }
        Ok(match *self {
            WeightSpec::Gaussian => 0.5 * t,
            WeightSpec::CompoundPoisson {
                rate,
                jump_mean,
                jump_sd,
            } => {
                let m = Self::jump_mgf(jump_mean, jump_sd, 1.0);
                t * rate * ((jump_mean + jump_sd * jump_sd) * m - m + 1.0)
            }
        })
    }

    /// Draw of `log W_{t,t+s}` determined by `key`.
    pub fn sample_log_increment(&self, t: f64, s: f64, key: &VertexNoiseKey) -> Result<f64> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(CascadeError::OutOfRange(format!("duration s = {s}")));
        }
        let sampler = StepSampler::new(self, t, s);
        Ok(sampler.draw(&mut key.stream()))
    }

    /// Draw of `W_{t,t+s}` determined by `key`.
    pub fn sample_increment(&self, t: f64, s: f64, key: &VertexNoiseKey) -> Result<f64> {
        Ok(self.sample_log_increment(t, s, key)?.exp())
    }
}

/// Per-step constants for drawing many increments of the same duration.
enum StepSampler {
    Gaussian {
        sd: f64,
        drift: f64,
    },
    CompoundPoisson {
        count: Option<Poisson<f64>>,
        jump_mean: f64,
        jump_sd: f64,
        drift: f64,
    },
}

impl StepSampler {
    fn new(spec: &WeightSpec, _t: f64, s: f64) -> Self {
        match *spec {
            WeightSpec::Gaussian => StepSampler::Gaussian {
                sd: s.sqrt(),
                drift: -0.5 * s,
            },
            WeightSpec::CompoundPoisson {
                rate,
                jump_mean,
                jump_sd,
            } => StepSampler::CompoundPoisson {
                count: Poisson::new(rate * s).ok(),
                jump_mean,
                jump_sd,
                drift: -s * rate * (WeightSpec::jump_mgf(jump_mean, jump_sd, 1.0) - 1.0),
            },
        }
    }

    #[inline]
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            StepSampler::Gaussian { sd, drift } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z + drift
            }
            StepSampler::CompoundPoisson {
                count,
                jump_mean,
                jump_sd,
                drift,
            } => {
                let n = count.as_ref().map_or(0.0, |p| p.sample(rng));
                if n > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    n * jump_mean + n.sqrt() * jump_sd * z + drift
                } else {
                    *drift
                }
            }
        }
    }
}

/// Source of per-vertex log-increments for the cascade engine.
pub trait IncrementLaw: Sync {
    /// Writes `log W_{t,t+s}(v)` into `out[v]` for every non-root vertex of
    /// `out`, keyed by `(seed, v, step_index)`. The root entry is set to zero.
    fn fill_log_increments(
        &self,
        t: f64,
        s: f64,
        seed: u64,
        step_index: u64,
        out: &mut TreeArray<f64>,
    );

    /// The parametric description, when the law is one of the built-in kinds.
    fn spec(&self) -> Option<WeightSpec> {
        None
    }
}

impl IncrementLaw for WeightSpec {
    fn fill_log_increments(
        &self,
        t: f64,
        s: f64,
        seed: u64,
        step_index: u64,
        out: &mut TreeArray<f64>,
    ) {
        let data = out.as_mut_slice();
        data[0] = 0.0;
        if s == 0.0 {
            data.fill(0.0);
            return;
        }
        let sampler = StepSampler::new(self, t, s);
        for (i, x) in data.iter_mut().enumerate().skip(1) {
            *x = sampler.draw(&mut keyed_stream(seed, i as u64, step_index));
        }
    }

    fn spec(&self) -> Option<WeightSpec> {
        Some(*self)
    }
}
