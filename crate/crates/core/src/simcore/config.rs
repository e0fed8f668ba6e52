use serde::{Deserialize, Serialize};

use crate::metrics::PowerProfile;
use crate::netmodel::{Area, Placement, Position};
use crate::protocol::{ProtocolConfig, Variant};

use super::SimError;

/// Frame sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSizes {
    pub data: u32,
    pub dio: u32,
    pub dao: u32,
    pub dis: u32,
    pub dao_ack: u32,
}

impl Default for PacketSizes {
    fn default() -> Self {
        Self {
            data: 50,
            dio: 80,
            dao: 100,
            dis: 77,
            dao_ack: 80,
        }
    }
}

/// Everything that determines a run, together with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_nodes: usize,
    pub area: Area,
    /// Seconds.
    pub sim_time: f64,
    /// Packets per second per sensor.
    pub lambda: f64,
    /// Bits per second; also the parent capacity in the traffic index.
    pub data_rate: f64,
    /// Metres.
    pub radio_range: f64,
    pub sizes: PacketSizes,
    /// Joules per sensor.
    pub initial_energy: f64,
    pub power: PowerProfile,
    /// Packets per node output queue.
    pub queue_capacity: usize,
    /// Seconds per hop.
    pub proc_delay: f64,
    /// Per-hop loss probability is `loss_scale * (1 - lqi)`.
    pub loss_scale: f64,
    /// Width of the tumbling throughput window for samples, seconds.
    pub metric_dt: f64,
    /// Lifetime credited to survivors; `None` means `sim_time`.
    pub lifetime_cap: Option<f64>,
    pub seed: u64,
    pub placement: Placement,
    /// Fixed layout (sink first); bypasses placement when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Position>>,
    /// Replaces the geometric link quality on every link.
    pub lqi_override: Option<f64>,
    /// Time constant of the decayed load counters, seconds.
    pub ti_tau: f64,
    /// Sources start at a uniform offset in `[0, start_jitter)`.
    pub start_jitter: f64,
    /// Fraction of otherwise idle time spent asleep.
    pub sleep_ratio: f64,
    pub protocol: ProtocolConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_nodes: 50,
            area: Area {
                width: 1000.0,
                height: 1000.0,
            },
            sim_time: 1000.0,
            lambda: 0.1,
            data_rate: 250_000.0,
            radio_range: 100.0,
            sizes: PacketSizes::default(),
            initial_energy: 2.0,
            power: PowerProfile::default(),
            queue_capacity: 10,
            proc_delay: 100e-6,
            loss_scale: 0.2,
            metric_dt: 10.0,
            lifetime_cap: None,
            seed: 1,
            placement: Placement::Connected,
            positions: None,
            lqi_override: None,
            ti_tau: 30.0,
            start_jitter: 1.0,
            sleep_ratio: 0.0,
            protocol: ProtocolConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn variant(&self) -> Variant {
        self.protocol.variant
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.protocol.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn lifetime_cap(&self) -> f64 {
        self.lifetime_cap.unwrap_or(self.sim_time)
    }

    /// Seconds to put `bytes` on the air.
    pub fn airtime(&self, bytes: u32) -> f64 {
        f64::from(bytes) * 8.0 / self.data_rate
    }

    pub fn validate(&self) -> Result<(), SimError> {
        fn positive(name: &str, v: f64) -> Result<(), SimError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be positive, got {v}")))
            }
        }
        fn unit(name: &str, v: f64) -> Result<(), SimError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        }
        if self.n_nodes < 2 {
            return Err(SimError::Config(format!(
                "n_nodes must be at least 2, got {}",
                self.n_nodes
            )));
        }
        positive("area_width", self.area.width)?;
        positive("area_height", self.area.height)?;
        positive("sim_time", self.sim_time)?;
        positive("lambda", self.lambda)?;
        positive("data_rate", self.data_rate)?;
        positive("radio_range", self.radio_range)?;
        positive("initial_energy", self.initial_energy)?;
        positive("metric_dt", self.metric_dt)?;
        positive("ti_tau", self.ti_tau)?;
        for (name, v) in [
            ("p_tx", self.power.tx),
            ("p_rx", self.power.rx),
            ("p_idle", self.power.idle),
            ("p_sleep", self.power.sleep),
            ("proc_delay", self.proc_delay),
            ("start_jitter", self.start_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let s = self.sizes;
        for (name, v) in [
            ("data_size", s.data),
            ("dio_size", s.dio),
            ("dao_size", s.dao),
            ("dis_size", s.dis),
            ("dao_ack_size", s.dao_ack),
        ] {
            if v == 0 {
                return Err(SimError::Config(format!("{name} must be positive")));
            }
        }
        if self.queue_capacity == 0 {
            return Err(SimError::Config("queue_capacity must be positive".into()));
        }
        unit("loss_scale", self.loss_scale)?;
        unit("sleep_ratio", self.sleep_ratio)?;
        if let Some(l) = self.lqi_override {
            unit("lqi_override", l)?;
        }
        if let Some(cap) = self.lifetime_cap {
            positive("lifetime_cap", cap)?;
        }
        if let Some(p) = &self.positions {
            if p.len() != self.n_nodes {
                return Err(SimError::Config(format!(
                    "{} positions for {} nodes",
                    p.len(),
                    self.n_nodes
                )));
            }
        }
        self.protocol
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}
