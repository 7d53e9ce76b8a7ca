use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::CellValue;
use crate::motion::ProcessNoise;
use crate::rpe::GicpConfig;

/// Every tunable of a localization run. Serialized as a flat TOML table; keys
/// that are absent take their defaults, unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_particles: usize,
    pub seed: u64,
    /// Scan period in seconds.
    pub dt: f64,

    pub d_max: f64,
    pub sigma: f64,
    /// Distance grid resolution.
    pub grid_delta: f64,
    /// Voxel size applied to the map and to every incoming scan.
    pub voxel_res: f64,

    pub q_diag: [f64; 11],
    pub forward_only: bool,
    pub v_max: f64,
    /// Height of the initial particle box above the lowest map point.
    pub init_z_span: f64,

    pub window_lx: f64,
    pub window_ly: f64,
    pub d_theta_deg: f64,
    /// Base cell size of the matching pyramid.
    pub d_m: f64,
    pub binary_cells: bool,
    pub nz_threshold: f64,
    pub normal_k: usize,
    /// Scan BEV points closer than this are merged before matching.
    pub bev_res: f64,
    /// Steps between issuing a scan-to-map match and applying its result.
    pub sim_s2m_latency: u64,

    pub gicp_tol: f64,
    pub gicp_max_iter: usize,
    pub gicp_trim: f64,
    pub gicp_epsilon: f64,
    pub gicp_k: usize,
    pub gicp_max_corr_dist: f64,
    pub rpe_log_capacity: usize,

    pub loc_std: f64,
    pub loc_steps: usize,
    pub loc_dist: f64,
    pub loc_turn_deg: f64,
    pub reset_std: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let noise = ProcessNoise::reference();
        let gicp = GicpConfig::default();
        Self {
            n_particles: 1000,
            seed: 0,
            dt: 0.1,
            d_max: 5.0,
            sigma: 0.5,
            grid_delta: 0.2,
            voxel_res: 0.5,
            q_diag: noise.q_diag,
            forward_only: noise.forward_only,
            v_max: 20.0,
            init_z_span: 3.0,
            window_lx: 50.0,
            window_ly: 50.0,
            d_theta_deg: 2.5,
            d_m: 1.0,
            binary_cells: false,
            nz_threshold: 0.75,
            normal_k: 16,
            bev_res: 0.25,
            sim_s2m_latency: 3,
            gicp_tol: gicp.tol,
            gicp_max_iter: gicp.max_iter,
            gicp_trim: gicp.trim_fraction,
            gicp_epsilon: gicp.epsilon,
            gicp_k: gicp.k,
            gicp_max_corr_dist: gicp.max_corr_dist,
            rpe_log_capacity: 256,
            loc_std: 10.0,
            loc_steps: 10,
            loc_dist: 10.0,
            loc_turn_deg: 30.0,
            reset_std: 50.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let position = match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "config".to_string(),
            };
            Error::format(position, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn noise(&self) -> ProcessNoise {
        ProcessNoise { q_diag: self.q_diag, forward_only: self.forward_only }
    }

    pub fn cell_value(&self) -> CellValue {
        if self.binary_cells {
            CellValue::Binary
        } else {
            CellValue::Count
        }
    }

    /// Settings for scan-to-scan alignment of raw scans.
    pub fn rpe_gicp(&self) -> GicpConfig {
        GicpConfig {
            voxel: self.voxel_res,
            tol: self.gicp_tol,
            max_iter: self.gicp_max_iter,
            trim_fraction: self.gicp_trim,
            epsilon: self.gicp_epsilon,
            k: self.gicp_k,
            max_corr_dist: self.gicp_max_corr_dist,
        }
    }

    /// Settings for clouds that were already downsampled.
    pub fn prepared_gicp(&self) -> GicpConfig {
        GicpConfig { voxel: 0.0, ..self.rpe_gicp() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("d_max", self.d_max),
            ("sigma", self.sigma),
            ("grid_delta", self.grid_delta),
            ("voxel_res", self.voxel_res),
            ("init_z_span", self.init_z_span),
            ("d_theta_deg", self.d_theta_deg),
            ("d_m", self.d_m),
            ("bev_res", self.bev_res),
            ("loc_std", self.loc_std),
            ("reset_std", self.reset_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let non_negative = [
            ("v_max", self.v_max),
            ("window_lx", self.window_lx),
            ("window_ly", self.window_ly),
            ("loc_dist", self.loc_dist),
            ("loc_turn_deg", self.loc_turn_deg),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles must be at least 1"));
        }
        if self.loc_steps == 0 {
            return Err(Error::invalid("loc_steps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.nz_threshold) {
            return Err(Error::invalid(format!("nz_threshold must lie in [0, 1], got {}", self.nz_threshold)));
        }
        if self.normal_k < 3 {
            return Err(Error::invalid("normal_k must be at least 3"));
        }
        if self.rpe_log_capacity <= self.sim_s2m_latency as usize {
            return Err(Error::invalid(format!(
                "rpe_log_capacity {} cannot cover a latency of {} steps",
                self.rpe_log_capacity, self.sim_s2m_latency
            )));
        }
        self.noise().validate()?;
        self.rpe_gicp().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let cfg = PipelineConfig::from_toml_str("n_particles = 50\nsim_s2m_latency = 0\n").unwrap();
        assert_eq!(cfg.n_particles, 50);
        assert_eq!(cfg.sim_s2m_latency, 0);
        assert_eq!(cfg.sigma, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        match PipelineConfig::from_toml_str("sigma = 0.5\nbogus = 1\n") {
            Err(Error::Format { position, .. }) => assert_eq!(position, "line 2"),
            other => panic!("{other:?}"),
        }
        assert!(PipelineConfig::from_toml_str("sigma = -1.0").is_err());
        assert!(PipelineConfig::from_toml_str("n_particles = 0").is_err());
        assert!(PipelineConfig::from_toml_str("rpe_log_capacity = 3").is_err());
    }
}
