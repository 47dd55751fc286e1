//! Architectural template: core dimensions, derived buffers, area and power.
//!
//! A design is the tuple `<#TC, TC rows x cols, #VC, VC width>`. Buffer sizes
//! follow from the dimensions; area and TDP are linear in core counts with
//! per-unit terms for PEs, vector lanes and SRAM plus a fixed uncore term.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MB: f64 = 1024.0 * 1024.0;

/// Tensor core L1 register file, identical for every design.
pub const TC_L1_BYTES: u64 = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid system config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoreDims {
    pub tc_rows: u32,
    pub tc_cols: u32,
    pub vc_width: u32,
}

impl CoreDims {
    pub const fn new(tc_rows: u32, tc_cols: u32, vc_width: u32) -> Self {
        Self {
            tc_rows,
            tc_cols,
            vc_width,
        }
    }

    pub fn pes(&self) -> u64 {
        u64::from(self.tc_rows) * u64::from(self.tc_cols)
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.tc_rows == 0 || self.tc_cols == 0 || self.vc_width == 0 {
            return Err(ArchError::InvalidDesign(format!(
                "zero dimension in {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for CoreDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}/{}", self.tc_rows, self.tc_cols, self.vc_width)
    }
}

impl std::str::FromStr for CoreDims {
    type Err = ArchError;

    /// Parses the display form `RxC/W`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad =
            || ArchError::InvalidDesign(format!("core dimensions `{s}` are not of the form RxC/W"));
        let (tc, w) = s.split_once('/').ok_or_else(bad)?;
        let (r, c) = tc.split_once('x').ok_or_else(bad)?;
        let num = |x: &str| x.trim().parse::<u32>().map_err(|_| bad());
        let dims = CoreDims::new(num(r)?, num(c)?, num(w)?);
        dims.validate()?;
        Ok(dims)
    }
}

/// Analytical coefficients for area, power and energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub a_pe_mm2: f64,
    pub a_lane_mm2: f64,
    pub a_sram_mm2_per_mb: f64,
    pub a_fixed_mm2: f64,
    pub p_pe_w: f64,
    pub p_lane_w: f64,
    pub p_sram_w_per_mb: f64,
    pub p_fixed_w: f64,
    pub e_mac_pj: f64,
    pub e_vec_pj: f64,
    pub e_hbm_pj_per_byte: f64,
    pub e_sram_pj_per_byte: f64,
    pub tile_depth_factor: u64,
    pub vc_l2_factor: u64,
    pub optimizer_state_multiplier: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            a_pe_mm2: 0.0006,
            a_lane_mm2: 0.002,
            a_sram_mm2_per_mb: 0.4,
            a_fixed_mm2: 10.0,
            p_pe_w: 1.2e-3,
            p_lane_w: 4e-3,
            p_sram_w_per_mb: 0.3,
            p_fixed_w: 20.0,
            e_mac_pj: 1.0,
            e_vec_pj: 2.0,
            e_hbm_pj_per_byte: 7.0,
            e_sram_pj_per_byte: 1.0,
            tile_depth_factor: 64,
            vc_l2_factor: 1024,
            optimizer_state_multiplier: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub hbm_bytes: u64,
    pub hbm_bw_bytes_per_s: f64,
    pub clock_hz: f64,
    pub area_budget_mm2: f64,
    pub power_budget_w: f64,
    pub interconnect_bw_bytes_per_s: f64,
    pub element_bytes: u64,
    pub cost_model: CostModel,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            hbm_bytes: 16 * 1024 * 1024 * 1024,
            hbm_bw_bytes_per_s: 900e9,
            clock_hz: 940e6,
            area_budget_mm2: 400.0,
            power_budget_w: 250.0,
            interconnect_bw_bytes_per_s: 100e9,
            element_bytes: 2,
            cost_model: CostModel::default(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ArchError> {
        let cm = &self.cost_model;
        let positive = [
            ("hbm_bw_bytes_per_s", self.hbm_bw_bytes_per_s),
            ("clock_hz", self.clock_hz),
            ("area_budget_mm2", self.area_budget_mm2),
            ("power_budget_w", self.power_budget_w),
            (
                "interconnect_bw_bytes_per_s",
                self.interconnect_bw_bytes_per_s,
            ),
            ("a_pe_mm2", cm.a_pe_mm2),
            ("a_lane_mm2", cm.a_lane_mm2),
            ("a_sram_mm2_per_mb", cm.a_sram_mm2_per_mb),
            ("a_fixed_mm2", cm.a_fixed_mm2),
            ("p_pe_w", cm.p_pe_w),
            ("p_lane_w", cm.p_lane_w),
            ("p_sram_w_per_mb", cm.p_sram_w_per_mb),
            ("p_fixed_w", cm.p_fixed_w),
            ("e_mac_pj", cm.e_mac_pj),
            ("e_vec_pj", cm.e_vec_pj),
            ("e_hbm_pj_per_byte", cm.e_hbm_pj_per_byte),
            ("e_sram_pj_per_byte", cm.e_sram_pj_per_byte),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ArchError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        let counts = [
            ("hbm_bytes", self.hbm_bytes),
            ("element_bytes", self.element_bytes),
            ("tile_depth_factor", cm.tile_depth_factor),
            ("vc_l2_factor", cm.vc_l2_factor),
            ("optimizer_state_multiplier", cm.optimizer_state_multiplier),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ArchError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    /// Parses TOML or JSON (chosen by the first non-blank character).
    pub fn from_str_any(src: &str) -> Result<Self, ArchError> {
        let cfg: SystemConfig = if src.trim_start().starts_with('{') {
            serde_json::from_str(src).map_err(|e| ArchError::InvalidConfig(e.to_string()))?
        } else {
            toml::from_str(src).map_err(|e| ArchError::InvalidConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `(tc_l2_bytes, vc_l2_bytes)` for the given dimensions.
pub fn derive_buffers(dims: CoreDims, cfg: &SystemConfig) -> (u64, u64) {
    let cm = &cfg.cost_model;
    let tc_l2 = 3 * dims.pes() * cfg.element_bytes * cm.tile_depth_factor;
    let vc_l2 = cm.vc_l2_factor * u64::from(dims.vc_width) * cfg.element_bytes;
    (tc_l2, vc_l2)
}

/// Area and power of one core instance of each type at the given dims.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitCosts {
    pub tc_area_mm2: f64,
    pub vc_area_mm2: f64,
    pub tc_power_w: f64,
    pub vc_power_w: f64,
    pub fixed_area_mm2: f64,
    pub fixed_power_w: f64,
}

impl UnitCosts {
    pub fn new(dims: CoreDims, cfg: &SystemConfig) -> Self {
        let cm = &cfg.cost_model;
        let (tc_l2, vc_l2) = derive_buffers(dims, cfg);
        let (tc_mb, vc_mb) = (tc_l2 as f64 / MB, vc_l2 as f64 / MB);
        let width = f64::from(dims.vc_width);
        Self {
            tc_area_mm2: cm.a_pe_mm2 * dims.pes() as f64 + cm.a_sram_mm2_per_mb * tc_mb,
            vc_area_mm2: cm.a_lane_mm2 * width + cm.a_sram_mm2_per_mb * vc_mb,
            tc_power_w: cm.p_pe_w * dims.pes() as f64 + cm.p_sram_w_per_mb * tc_mb,
            vc_power_w: cm.p_lane_w * width + cm.p_sram_w_per_mb * vc_mb,
            fixed_area_mm2: cm.a_fixed_mm2,
            fixed_power_w: cm.p_fixed_w,
        }
    }

    pub fn area(&self, num_tc: u32, num_vc: u32) -> f64 {
        f64::from(num_tc) * self.tc_area_mm2
            + f64::from(num_vc) * self.vc_area_mm2
            + self.fixed_area_mm2
    }

    pub fn power(&self, num_tc: u32, num_vc: u32) -> f64 {
        f64::from(num_tc) * self.tc_power_w
            + f64::from(num_vc) * self.vc_power_w
            + self.fixed_power_w
    }

    /// Core budget left for cores once the fixed term is paid: `(area, power)`.
    pub fn core_budget(&self, cfg: &SystemConfig) -> (f64, f64) {
        (
            cfg.area_budget_mm2 - self.fixed_area_mm2,
            cfg.power_budget_w - self.fixed_power_w,
        )
    }

    pub fn fits(&self, num_tc: u32, num_vc: u32, cfg: &SystemConfig) -> bool {
        self.area(num_tc, num_vc) <= cfg.area_budget_mm2
            && self.power(num_tc, num_vc) <= cfg.power_budget_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub num_tc: u32,
    pub dims: CoreDims,
    pub num_vc: u32,
    pub tc_l1_bytes: u64,
    pub tc_l2_bytes: u64,
    pub vc_l2_bytes: u64,
    pub area_mm2: f64,
    pub tdp_watts: f64,
}

impl DesignPoint {
    pub fn new(
        num_tc: u32,
        dims: CoreDims,
        num_vc: u32,
        cfg: &SystemConfig,
    ) -> Result<Self, ArchError> {
        dims.validate()?;
        if num_tc + num_vc == 0 {
            return Err(ArchError::InvalidDesign(
                "a design needs at least one core".into(),
            ));
        }
        let (tc_l2, vc_l2) = derive_buffers(dims, cfg);
        let unit = UnitCosts::new(dims, cfg);
        Ok(Self {
            num_tc,
            dims,
            num_vc,
            tc_l1_bytes: TC_L1_BYTES,
            tc_l2_bytes: tc_l2,
            vc_l2_bytes: vc_l2,
            area_mm2: unit.area(num_tc, num_vc),
            tdp_watts: unit.power(num_tc, num_vc),
        })
    }

    /// TPUv2-like `<2, 128x128, 2, 128>`.
    pub fn tpu_v2_like(cfg: &SystemConfig) -> Self {
        Self::new(2, CoreDims::new(128, 128, 128), 2, cfg).expect("valid reference design")
    }

    /// NVDLA-like scaled for training, `<1, 256x256, 1, 256>`.
    pub fn nvdla_like(cfg: &SystemConfig) -> Self {
        Self::new(1, CoreDims::new(256, 256, 256), 1, cfg).expect("valid reference design")
    }

    pub fn tuple(&self) -> DesignTuple {
        DesignTuple {
            num_tc: self.num_tc,
            dims: self.dims,
            num_vc: self.num_vc,
        }
    }

    /// True when the stored area and TDP match a fresh recomputation.
    pub fn is_consistent(&self, cfg: &SystemConfig) -> bool {
        Self::new(self.num_tc, self.dims, self.num_vc, cfg)
            .map(|d| d == *self)
            .unwrap_or(false)
    }
}

/// The searched tuple without derived fields; used as an identity key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DesignTuple {
    pub num_tc: u32,
    pub dims: CoreDims,
    pub num_vc: u32,
}

impl fmt::Display for DesignTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<{}, {}x{}, {}, {}>",
            self.num_tc, self.dims.tc_rows, self.dims.tc_cols, self.num_vc, self.dims.vc_width
        )
    }
}

pub fn area_of(d: &DesignPoint, cfg: &SystemConfig) -> Result<f64, ArchError> {
    DesignPoint::new(d.num_tc, d.dims, d.num_vc, cfg).map(|d| d.area_mm2)
}

pub fn tdp_of(d: &DesignPoint, cfg: &SystemConfig) -> Result<f64, ArchError> {
    DesignPoint::new(d.num_tc, d.dims, d.num_vc, cfg).map(|d| d.tdp_watts)
}

pub fn within_budget(d: &DesignPoint, cfg: &SystemConfig) -> bool {
    d.area_mm2 <= cfg.area_budget_mm2 && d.tdp_watts <= cfg.power_budget_w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dims_round_trip_through_display() {
        let d = CoreDims::new(128, 64, 32);
        assert_eq!(d.to_string().parse::<CoreDims>().unwrap(), d);
        assert!("128x64".parse::<CoreDims>().is_err());
        assert!("0x64/8".parse::<CoreDims>().is_err());
    }

    #[test]
    fn buffer_closed_forms() {
        let cfg = SystemConfig::default();
        let (tc, vc) = derive_buffers(CoreDims::new(128, 128, 256), &cfg);
        assert_eq!(tc, 6_291_456);
        assert_eq!(vc, 524_288);

        let mut unit = SystemConfig::default();
        unit.cost_model.tile_depth_factor = 1;
        unit.cost_model.vc_l2_factor = 1;
        assert_eq!(derive_buffers(CoreDims::new(1, 1, 1), &unit), (6, 2));
    }

    #[test]
    fn zero_cores_is_invalid() {
        let cfg = SystemConfig::default();
        assert!(matches!(
            DesignPoint::new(0, CoreDims::new(8, 8, 8), 0, &cfg),
            Err(ArchError::InvalidDesign(_))
        ));
    }

    #[test]
    fn doubling_tensor_cores_doubles_tensor_area_term() {
        let cfg = SystemConfig::default();
        let dims = CoreDims::new(64, 32, 16);
        let base = DesignPoint::new(0, dims, 1, &cfg).unwrap().area_mm2;
        let one = DesignPoint::new(3, dims, 1, &cfg).unwrap().area_mm2 - base;
        let two = DesignPoint::new(6, dims, 1, &cfg).unwrap().area_mm2 - base;
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-12);
    }

    #[test]
    fn reference_designs_share_pe_area() {
        let cfg = SystemConfig::default();
        let tpu = DesignPoint::tpu_v2_like(&cfg);
        let nvdla = DesignPoint::nvdla_like(&cfg);
        let pe_area =
            |d: &DesignPoint| f64::from(d.num_tc) * d.dims.pes() as f64 * cfg.cost_model.a_pe_mm2;
        // two 128x128 arrays hold half the PEs of one 256x256 array
        assert_relative_eq!(2.0 * pe_area(&tpu), pe_area(&nvdla), max_relative = 1e-12);
        let four = DesignPoint::new(4, CoreDims::new(128, 128, 128), 2, &cfg).unwrap();
        assert_relative_eq!(pe_area(&four), pe_area(&nvdla), max_relative = 1e-12);
        assert_eq!(tpu.tc_l1_bytes, 512);
        assert!(within_budget(&tpu, &cfg) && within_budget(&nvdla, &cfg));
    }

    #[test]
    fn budget_edges() {
        let cfg = SystemConfig::default();
        let big = DesignPoint::new(4, CoreDims::new(256, 256, 256), 4, &cfg).unwrap();
        let tight = SystemConfig {
            area_budget_mm2: big.area_mm2,
            power_budget_w: big.tdp_watts,
            ..cfg
        };
        assert!(within_budget(&big, &tight));
        let zero = SystemConfig {
            area_budget_mm2: 0.0,
            power_budget_w: 0.0,
            ..cfg
        };
        assert!(!within_budget(&big, &zero));
    }

    #[test]
    fn config_parses_toml_and_json() {
        let t = SystemConfig::from_str_any("clock_hz = 1e9\n[cost_model]\na_fixed_mm2 = 5.0\n")
            .unwrap();
        assert_eq!(t.clock_hz, 1e9);
        assert_eq!(t.cost_model.a_fixed_mm2, 5.0);
        assert_eq!(t.hbm_bytes, SystemConfig::default().hbm_bytes);
        let j = SystemConfig::from_str_any(r#"{"power_budget_w": 100.0}"#).unwrap();
        assert_eq!(j.power_budget_w, 100.0);
        assert!(SystemConfig::from_str_any("clock_hz = -1.0").is_err());
        assert!(SystemConfig::from_str_any("bogus = 1").is_err());
    }

    proptest! {
        #[test]
        fn stored_costs_are_recomputable(tc in 0u32..8, vc in 0u32..8, r in 0u32..9, c in 0u32..9, w in 0u32..9) {
            prop_assume!(tc + vc > 0);
            let cfg = SystemConfig::default();
            let d = DesignPoint::new(tc, CoreDims::new(1 << r, 1 << c, 1 << w), vc, &cfg).unwrap();
            prop_assert!(d.is_consistent(&cfg));
            prop_assert_eq!(area_of(&d, &cfg).unwrap(), d.area_mm2);
            prop_assert_eq!(tdp_of(&d, &cfg).unwrap(), d.tdp_watts);
        }
    }
}
