//! System configuration.
//!
//! All tunables live in one flat struct. The config file is TOML whose keys
//! are exactly the field names below, and every field can also be overridden
//! by a CLI flag of the same name, so there is a single documented schema.

use crate::types::Mode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every knob of the simulated system. Defaults model a 16-tile machine:
/// 4x4 mesh, 32 KiB 4-way L1s, an 8 MiB shared L2 in 16 banks, five virtual
/// channels on 128-bit flits, four corner memory controllers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of cores; must equal `mesh_x * mesh_y` (one core per tile).
    pub cores: usize,
    /// Mesh width (columns, X dimension).
    pub mesh_x: usize,
    /// Mesh height (rows, Y dimension).
    pub mesh_y: usize,
    /// Cache block size in bytes.
    pub block_size: usize,
    /// Private L1 data cache capacity in bytes.
    pub l1_size: usize,
    /// L1 associativity (ways).
    pub l1_assoc: usize,
    /// L1 lookup latency in cycles; charged on hits and on miss-path
    /// request creation, and on every L1-sourced response.
    pub l1_latency: u32,
    /// Miss-status registers per L1 (outstanding fetches plus evictions).
    pub l1_mshrs: usize,
    /// Total shared L2 capacity in bytes, summed over all banks. Recorded
    /// for reporting; the model is always-allocating, so capacity never
    /// forces an L2 eviction at simulated working-set sizes.
    pub l2_size: usize,
    /// L2 associativity (ways); recorded for reporting, see `l2_size`.
    pub l2_assoc: usize,
    /// L2 bank access latency in cycles; charged on every directory-bank
    /// response.
    pub l2_latency: u32,
    /// Virtual channels per router input port. The first is the request
    /// network, the second the forward/invalidate network, the rest the
    /// response network; at least 3 required.
    pub vcs: usize,
    /// Flit buffer depth per virtual channel, in flits.
    pub vc_depth: usize,
    /// Flit width in bits. A data-carrying message is one head flit plus
    /// `ceil(512 / flit_bits)` payload flits.
    pub flit_bits: usize,
    /// Router pipeline depth. The model is a fixed four-stage
    /// route/VC-allocate/switch-allocate/traverse pipeline; validated == 4.
    pub router_pipeline: u32,
    /// Link traversal latency in cycles.
    pub link_latency: u32,
    /// Number of memory controllers; attach at mesh corners (max 4).
    pub mem_controllers: usize,
    /// DRAM access latency in cycles. The controller is single-ported:
    /// one access may begin per cycle.
    pub mem_latency: u32,
    /// Arbitration starvation threshold: a candidate that has waited this
    /// many decisions at one arbitration point is served oldest-first.
    pub starvation_threshold: u32,
    /// Capacity of each bank's inner-phase buffer (tracked addresses).
    pub inner_buffer_entries: usize,
    /// After the trace is exhausted, the system must quiesce within this
    /// many cycles or the run aborts with a deadlock report.
    pub drain_limit: u64,
    /// Arbitration mode: `baseline` (round-robin/FIFO) or `ppb`
    /// (phase-priority).
    pub mode: Mode,
    /// Seed recorded in reports and used by workload generation.
    pub seed: u64,
    /// Energy proxy weight: one flit crossing one link.
    pub e_link: f64,
    /// Energy proxy weight: one flit written into a VC buffer.
    pub e_buf_write: f64,
    /// Energy proxy weight: one flit read out of a VC buffer.
    pub e_buf_read: f64,
    /// Energy proxy weight: one arbitration grant (VC or switch).
    pub e_arb: f64,
    /// Energy proxy weight: one flit through the crossbar.
    pub e_xbar: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            cores: 16,
            mesh_x: 4,
            mesh_y: 4,
            block_size: 64,
            l1_size: 32 * 1024,
            l1_assoc: 4,
            l1_latency: 2,
            l1_mshrs: 8,
            l2_size: 8 * 1024 * 1024,
            l2_assoc: 8,
            l2_latency: 12,
            vcs: 5,
            vc_depth: 4,
            flit_bits: 128,
            router_pipeline: 4,
            link_latency: 2,
            mem_controllers: 4,
            mem_latency: 160,
            starvation_threshold: 64,
            inner_buffer_entries: 32,
            drain_limit: 1_000_000,
            mode: Mode::Baseline,
            seed: 0,
            e_link: 1.0,
            e_buf_write: 1.0,
            e_buf_read: 1.0,
            e_arb: 1.0,
            e_xbar: 1.0,
        }
    }
}

impl SystemConfig {
    /// Loads a TOML config file. Missing keys take their defaults; unknown
    /// keys are rejected.
    pub fn load(path: &std::path::Path) -> Result<SystemConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SystemConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.mesh_x == 0 || self.mesh_y == 0 {
            return fail("mesh dimensions must be nonzero".into());
        }
        if self.cores != self.mesh_x * self.mesh_y {
            return fail(format!(
                "cores ({}) must equal mesh_x * mesh_y ({})",
                self.cores,
                self.mesh_x * self.mesh_y
            ));
        }
        if !self.block_size.is_power_of_two() || self.block_size < 8 {
            return fail(format!("block_size {} must be a power of two >= 8", self.block_size));
        }
        if self.l1_assoc == 0 || self.l1_size % (self.block_size * self.l1_assoc) != 0 {
            return fail(format!(
                "l1_size {} must be a multiple of block_size * l1_assoc",
                self.l1_size
            ));
        }
        if self.l1_mshrs == 0 {
            return fail("l1_mshrs must be nonzero".into());
        }
        if self.vcs < 3 {
            return fail(format!("vcs {} too small: need one per virtual network (3)", self.vcs));
        }
        if self.vc_depth == 0 {
            return fail("vc_depth must be nonzero".into());
        }
        if self.flit_bits == 0 || 512 % self.flit_bits != 0 {
            return fail(format!("flit_bits {} must divide 512", self.flit_bits));
        }
        if self.router_pipeline != 4 {
            return fail(format!(
                "router_pipeline {} unsupported: the router is a fixed 4-stage pipeline",
                self.router_pipeline
            ));
        }
        if self.mem_controllers == 0 || self.mem_controllers > 4 {
            return fail(format!(
                "mem_controllers {} out of range 1..=4 (corner attach points)",
                self.mem_controllers
            ));
        }
        if self.inner_buffer_entries == 0 {
            return fail("inner_buffer_entries must be nonzero".into());
        }
        Ok(())
    }

    /// L1 set count.
    pub fn l1_sets(&self) -> usize {
        self.l1_size / (self.block_size * self.l1_assoc)
    }

    /// Tiles hosting memory controllers, in controller order: the mesh
    /// corners (top-left, top-right, bottom-left, bottom-right), truncated
    /// to `mem_controllers`.
    pub fn mem_tiles(&self) -> Vec<usize> {
        let (x, y) = (self.mesh_x, self.mesh_y);
        let corners = [0, x - 1, x * (y - 1), x * y - 1];
        corners.into_iter().take(self.mem_controllers).collect()
    }

    /// Home L2 bank of a block: block-interleaved across all tiles, so
    /// consecutive blocks live on consecutive banks.
    pub fn home_bank(&self, block: u64) -> usize {
        (block % (self.cores as u64)) as usize
    }

    /// Memory controller owning a block: range-interleaved at 64-block
    /// (4 KiB with 64-byte blocks) granularity.
    pub fn mem_controller_of(&self, block: u64) -> usize {
        ((block / MEM_RANGE_BLOCKS) % (self.mem_controllers as u64)) as usize
    }

    /// Flits in one packet for a message that does / does not carry a
    /// 512-bit data payload.
    pub fn flits_per_packet(&self, carries_data: bool) -> usize {
        if carries_data {
            1 + 512 / self.flit_bits
        } else {
            1
        }
    }
}

/// Blocks per memory-controller interleave range (4 KiB of 64-byte blocks).
pub const MEM_RANGE_BLOCKS: u64 = 64;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_describe_a_16_tile_machine() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.l1_sets(), 128);
        assert_eq!(cfg.mem_tiles(), vec![0, 3, 12, 15]);
        assert_eq!(cfg.flits_per_packet(true), 5);
        assert_eq!(cfg.flits_per_packet(false), 1);
    }

    #[test]
    fn blocks_interleave_across_banks_and_ranges_across_controllers() {
        let cfg = SystemConfig::default();
        assert_eq!(cfg.home_bank(0), 0);
        assert_eq!(cfg.home_bank(1), 1);
        assert_eq!(cfg.home_bank(16), 0);
        assert_eq!(cfg.mem_controller_of(0), 0);
        assert_eq!(cfg.mem_controller_of(63), 0);
        assert_eq!(cfg.mem_controller_of(64), 1);
        assert_eq!(cfg.mem_controller_of(64 * 4), 0);
    }

    #[test]
    fn toml_round_trip_uses_field_names_as_keys() {
        let text = "mode = \"ppb\"\ncores = 4\nmesh_x = 2\nmesh_y = 2\nseed = 9\n";
        let cfg: SystemConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.mode, Mode::Ppb);
        assert_eq!(cfg.cores, 4);
        assert_eq!(cfg.seed, 9);
        // Everything else stays at its default.
        assert_eq!(cfg.mem_latency, SystemConfig::default().mem_latency);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<SystemConfig>("no_such_knob = 1\n").is_err());
    }

    #[test]
    fn mismatched_core_count_is_rejected() {
        let cfg = SystemConfig {
            cores: 8,
            ..SystemConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
