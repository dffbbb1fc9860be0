//! V2X channel: feature compression, transmission and idle delay, and pose
//! noise on shared metadata.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::Pose2;
use crate::numerics::{relu, Dense, SeededRng};

/// Communication-layer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Link rate in megabits per second.
    pub rate_mbps: f64,
    /// Channel reduction factor `C / C'`.
    pub compression_rate: usize,
    /// Upper bound of the uniform idle delay, milliseconds.
    pub idle_delay_ms: f64,
    /// Sensor frame period, milliseconds; delays are rounded up to it.
    pub frame_period_ms: f64,
    /// Positional noise std, metres.
    pub sigma_xy: f64,
    /// Heading noise std, degrees.
    pub sigma_heading: f64,
    /// Bits per transmitted feature value.
    pub bits_per_value: u32,
    /// When set, replaces the sampled raw delay (milliseconds).
    pub fixed_delay_ms: Option<f64>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            rate_mbps: 27.0,
            compression_rate: 32,
            idle_delay_ms: 200.0,
            frame_period_ms: 100.0,
            sigma_xy: 0.2,
            sigma_heading: 0.2,
            bits_per_value: 32,
            fixed_delay_ms: None,
        }
    }
}

impl ChannelParams {
    /// Noise-free channel: no idle delay, no pose noise, zero payload.
    pub fn ideal() -> Self {
        ChannelParams {
            idle_delay_ms: 0.0,
            sigma_xy: 0.0,
            sigma_heading: 0.0,
            bits_per_value: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let nonneg = [
            self.rate_mbps,
            self.idle_delay_ms,
            self.frame_period_ms,
            self.sigma_xy,
            self.sigma_heading,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("channel parameters must be finite and nonnegative"));
        }
        if self.fixed_delay_ms.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
            return Err(Error::config("fixed delay must be finite and nonnegative"));
        }
        if self.frame_period_ms <= 0.0 {
            return Err(Error::config("frame period must be positive"));
        }
        let r = self.compression_rate;
        if r == 0 || !r.is_power_of_two() || channels % r != 0 {
            return Err(Error::config(format!(
                "compression rate {r} must be a power of two dividing {channels} channels"
            )));
        }
        Ok(())
    }

    /// Payload size of an `h×w×c` feature map.
    pub fn feature_bits(&self, h: usize, w: usize, c: usize) -> u64 {
        (h * w * c) as u64 * self.bits_per_value as u64
    }
}

/// Encoder/decoder pair of `1×1` convolutions around the link.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorWeights {
    /// `C → C'`, followed by ReLU.
    pub encode: Dense,
    /// `C' → C`.
    pub decode: Dense,
}

impl CompressorWeights {
    pub fn new(encode: Dense, decode: Dense) -> Result<Self> {
        if encode.output_dim() != decode.input_dim() || encode.input_dim() != decode.output_dim() {
            return Err(Error::dim("compressor encode/decode dimensions do not mirror"));
        }
        Ok(CompressorWeights { encode, decode })
    }

    pub fn random(channels: usize, rate: usize, rng: &mut SeededRng) -> Result<Self> {
        if rate == 0 || channels % rate != 0 {
            return Err(Error::config(format!("rate {rate} does not divide {channels}")));
        }
        let reduced = channels / rate;
        Self::new(
            Dense::random(channels, reduced, rng),
            Dense::random(reduced, channels, rng),
        )
    }

    pub fn channels(&self) -> usize {
        self.encode.input_dim()
    }

    pub fn reduced_channels(&self) -> usize {
        self.encode.output_dim()
    }

    pub fn rate(&self) -> usize {
        self.channels() / self.reduced_channels()
    }
}

pub fn compress(f: &FeatureMap, w: &CompressorWeights) -> Result<FeatureMap> {
    Ok(f.with_data(w.encode.forward(&f.data)?.map(relu)))
}

pub fn decompress(f: &FeatureMap, w: &CompressorWeights) -> Result<FeatureMap> {
    Ok(f.with_data(w.decode.forward(&f.data)?))
}

/// `f_s / v` in milliseconds.
pub fn transmission_time(feature_bits: u64, params: &ChannelParams) -> Result<f64> {
    if !(params.rate_mbps > 0.0) {
        return Err(Error::config("transmission rate must be positive"));
    }
    Ok(feature_bits as f64 / (params.rate_mbps * 1e6) * 1e3)
}

/// One realized link delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub transmission_ms: f64,
    pub idle_ms: f64,
    /// `transmission_ms + idle_ms`.
    pub raw_ms: f64,
    /// Raw delay rounded up to the frame grid.
    pub total_ms: f64,
}

/// Rounds `ms` up to the next multiple of `period`.
pub fn discretize_delay(ms: f64, period: f64) -> f64 {
    (ms / period).ceil() * period
}

/// Draws `t_c + U(0, idle)` and rounds it up to the frame period.
pub fn sample_total_delay(
    feature_bits: u64,
    params: &ChannelParams,
    rng: &mut SeededRng,
) -> Result<DelaySample> {
    if !(params.frame_period_ms > 0.0) {
        return Err(Error::config("frame period must be positive"));
    }
    let transmission_ms = transmission_time(feature_bits, params)?;
    let idle_ms = rng.uniform() * params.idle_delay_ms;
    let raw_ms = params.fixed_delay_ms.unwrap_or(transmission_ms + idle_ms);
    Ok(DelaySample {
        transmission_ms,
        idle_ms,
        raw_ms,
        total_ms: discretize_delay(raw_ms, params.frame_period_ms),
    })
}

/// Perturbs x and y with `N(0, σ_xy²)` and yaw with `N(0, σ_heading²)`
/// (the latter given in degrees).
pub fn inject_pose_noise(p: &Pose2, params: &ChannelParams, rng: &mut SeededRng) -> Pose2 {
    let (nx, ny, nyaw) = (rng.normal(), rng.normal(), rng.normal());
    let mut out = *p;
    if params.sigma_xy > 0.0 {
        out.x += params.sigma_xy * nx;
        out.y += params.sigma_xy * ny;
    }
    if params.sigma_heading > 0.0 {
        out = Pose2::new(out.x, out.y, out.yaw + params.sigma_heading.to_radians() * nyaw);
    }
    out
}
