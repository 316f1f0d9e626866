//! Run configuration: flat, versioned JSON with total validation.

use crate::coords::{EnuOrigin, EARTH_RADIUS_KM};
use crate::error::{Error, Result};
use crate::morton::max_level;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Dimensional mixing mode: the producer can be a 2D axisymmetric domain, a
/// full 3D domain, or a 2D domain extruded along north while the consumer
/// stays 3D.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "3d-extruded")]
    ThreeDExtruded,
}

impl Mode {
    pub fn producer_dim(self) -> usize {
        match self {
            Mode::TwoD | Mode::ThreeDExtruded => 2,
            Mode::ThreeD => 3,
        }
    }

    pub fn consumer_dim(self) -> usize {
        match self {
            Mode::TwoD => 2,
            Mode::ThreeD | Mode::ThreeDExtruded => 3,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(Mode::TwoD),
            "3d" => Ok(Mode::ThreeD),
            "3d-extruded" => Ok(Mode::ThreeDExtruded),
            other => Err(Error::Config {
                field: "mode".into(),
                message: format!("unknown mode '{other}' (expected 2d, 3d or 3d-extruded)"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub mode: Mode,
    /// Simulated rank count.
    pub ranks: usize,
    pub seed: u64,

    /// Producer domain in producer physical coordinates (km).
    pub producer_origin: [f64; 3],
    pub producer_extent: [f64; 3],
    pub producer_level: u8,
    pub producer_max_level: u8,
    pub producer_cells: [usize; 3],
    /// Envelope-gradient magnitude above which a producer leaf refines.
    pub producer_refine_tol: f64,

    /// Consumer dipole box.
    pub consumer_q_range: [f64; 2],
    pub consumer_p_range: [f64; 2],
    pub consumer_lambda_range: [f64; 2],
    pub consumer_level: u8,
    pub consumer_max_level: u8,
    pub consumer_cells: [usize; 3],
    /// Received |rho_pert| above which a consumer leaf refines.
    pub consumer_refine_threshold: f64,

    /// ENU tangent-plane anchor (radians; plane at the Earth's surface).
    pub enu_lat0: f64,
    pub enu_lon0: f64,

    pub pulse_origin: [f64; 3],
    /// km/s
    pub pulse_speed: f64,
    /// km
    pub pulse_sigma: f64,
    pub pulse_amplitude: f64,

    pub dt_producer: f64,
    pub dt_consumer: f64,
    /// Synchronization time threshold (s).
    pub t_sync: f64,
    pub t_end: f64,
}

impl RunConfig {
    pub fn default_for_mode(mode: Mode) -> RunConfig {
        let (producer_origin, producer_extent, pulse_origin) = match mode {
            Mode::TwoD => ([0.0, 0.0, 0.0], [400.0, 400.0, 1.0], [0.0, 0.0, 0.0]),
            Mode::ThreeD => (
                [-200.0, -200.0, 0.0],
                [400.0, 400.0, 400.0],
                [0.0, 0.0, 0.0],
            ),
            Mode::ThreeDExtruded => ([-200.0, 0.0, 0.0], [400.0, 400.0, 1.0], [0.0, 0.0, 0.0]),
        };
        let (consumer_q_range, consumer_level, consumer_cells) = match mode {
            Mode::TwoD => ([0.0, 0.05], 2, [8, 16, 1]),
            _ => ([-0.03, 0.03], 1, [4, 8, 4]),
        };
        RunConfig {
            config_version: CONFIG_VERSION,
            mode,
            ranks: 8,
            seed: 1,
            producer_origin,
            producer_extent,
            producer_level: if mode.producer_dim() == 2 { 4 } else { 3 },
            producer_max_level: 7,
            producer_cells: [8, 8, if mode.producer_dim() == 3 { 8 } else { 1 }],
            producer_refine_tol: 0.01,
            consumer_q_range,
            consumer_p_range: [1.005, 1.06],
            consumer_lambda_range: [-0.03, 0.03],
            consumer_level,
            consumer_max_level: consumer_level + 3,
            consumer_cells,
            consumer_refine_threshold: 0.05,
            enu_lat0: 0.0,
            enu_lon0: 0.0,
            pulse_origin,
            pulse_speed: 0.3,
            pulse_sigma: 10.0,
            pulse_amplitude: 1.0,
            dt_producer: 1.0,
            dt_consumer: 0.7,
            t_sync: 10.0,
            t_end: 50.0,
        }
    }

    pub fn enu_origin(&self) -> EnuOrigin {
        EnuOrigin {
            lat0: self.enu_lat0,
            lon0: self.enu_lon0,
            r0: EARTH_RADIUS_KM,
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        RunConfig::from_json(&std::fs::read_to_string(path)?)
    }

    // Negated comparisons are deliberate: they reject NaN as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| -> Result<()> {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.config_version != CONFIG_VERSION {
            return fail(
                "config_version",
                format!("expected {CONFIG_VERSION}, got {}", self.config_version),
            );
        }
        if self.ranks == 0 {
            return fail("ranks", "must be at least 1".into());
        }
        let pd = self.mode.producer_dim();
        let cd = self.mode.consumer_dim();
        for i in 0..pd {
            if !(self.producer_extent[i] > 0.0) {
                return fail("producer_extent", format!("component {i} must be positive"));
            }
            if self.producer_cells[i] == 0 {
                return fail("producer_cells", format!("component {i} must be >= 1"));
            }
        }
        for i in 0..cd {
            if self.consumer_cells[i] == 0 {
                return fail("consumer_cells", format!("component {i} must be >= 1"));
            }
        }
        if self.producer_level > self.producer_max_level {
            return fail("producer_level", "exceeds producer_max_level".into());
        }
        if self.producer_max_level > max_level(pd) {
            return fail(
                "producer_max_level",
                format!("exceeds maximum level {}", max_level(pd)),
            );
        }
        if self.consumer_level > self.consumer_max_level {
            return fail("consumer_level", "exceeds consumer_max_level".into());
        }
        if self.consumer_max_level > max_level(cd) {
            return fail(
                "consumer_max_level",
                format!("exceeds maximum level {}", max_level(cd)),
            );
        }
        if !(self.consumer_q_range[1] > self.consumer_q_range[0]) {
            return fail("consumer_q_range", "must be increasing".into());
        }
        if !(self.consumer_p_range[1] > self.consumer_p_range[0])
            || !(self.consumer_p_range[0] > 0.0)
        {
            return fail("consumer_p_range", "must be increasing and positive".into());
        }
        if cd == 3 && !(self.consumer_lambda_range[1] > self.consumer_lambda_range[0]) {
            return fail("consumer_lambda_range", "must be increasing".into());
        }
        if self.enu_lat0.abs() > std::f64::consts::FRAC_PI_2 {
            return fail("enu_lat0", "latitude outside [-pi/2, pi/2]".into());
        }
        if !(self.pulse_speed > 0.0) {
            return fail("pulse_speed", "must be positive".into());
        }
        if !(self.pulse_sigma > 0.0) {
            return fail("pulse_sigma", "must be positive".into());
        }
        if !(self.producer_refine_tol > 0.0) {
            return fail("producer_refine_tol", "must be positive".into());
        }
        if !(self.consumer_refine_threshold > 0.0) {
            return fail("consumer_refine_threshold", "must be positive".into());
        }
        if !(self.dt_producer > 0.0) {
            return fail("dt_producer", "must be positive".into());
        }
        if !(self.dt_consumer > 0.0) {
            return fail("dt_consumer", "must be positive".into());
        }
        if !(self.t_sync > 0.0) {
            return fail("t_sync", "must be positive".into());
        }
        if !(self.t_end > 0.0) {
            return fail("t_end", "must be positive".into());
        }
        if self.t_sync < self.dt_producer.max(self.dt_consumer) {
            log::warn!(
                "t_sync {} is below the largest solver dt; every sync will take a single step",
                self.t_sync
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_in_all_modes() {
        for mode in [Mode::TwoD, Mode::ThreeD, Mode::ThreeDExtruded] {
            RunConfig::default_for_mode(mode).validate().unwrap();
        }
    }

    #[test]
    fn json_roundtrip() {
        let config = RunConfig::default_for_mode(Mode::ThreeD);
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn zero_t_end_rejected_with_field_name() {
        let mut config = RunConfig::default_for_mode(Mode::TwoD);
        config.t_end = 0.0;
        match config.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "t_end"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_rejected() {
        let mut config = RunConfig::default_for_mode(Mode::TwoD);
        config.config_version = 99;
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut value = serde_json::to_value(RunConfig::default_for_mode(Mode::TwoD)).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(RunConfig::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn mode_parse() {
        assert_eq!("2d".parse::<Mode>().unwrap(), Mode::TwoD);
        assert_eq!("3d-extruded".parse::<Mode>().unwrap(), Mode::ThreeDExtruded);
        assert!("4d".parse::<Mode>().is_err());
    }
}
