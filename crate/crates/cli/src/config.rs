//! Run configuration. Every section is optional and falls back to the
//! library defaults; unknown keys anywhere are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vidserve_core::codec_sched::{DecodeCostModel, EngineTopology, MemoryPolicy, Policy};
use vidserve_core::gop_planner::SelectionPolicy;
use vidserve_core::pipeline_sim::{ArrivalProcess, Preset, SimConfig, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub selection: SelectionPolicy,
    pub world_size: usize,
    pub engines_per_gpu: usize,
    pub temporal_patch: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            selection: SelectionPolicy::UniformCount(64),
            world_size: 4,
            engines_per_gpu: 5,
            temporal_patch: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub topology: EngineTopology,
    pub costs: DecodeCostModel,
    pub policy: Policy,
    pub memory: MemoryPolicy,
    /// Seconds between consecutive plan arrivals.
    pub arrival_gap: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            topology: EngineTopology::new(4, 5, 4),
            costs: DecodeCostModel::default(),
            policy: Policy::StallFree,
            memory: MemoryPolicy::DeferredPerRank,
            arrival_gap: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub requests: usize,
    pub arrivals: ArrivalProcess,
    /// Replaces the named preset entirely when present.
    pub preset: Option<Preset>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            requests: 40,
            arrivals: ArrivalProcess::Poisson { rate: 0.1 },
            preset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssertConfig {
    /// Allowed relative growth of P99 TTFT and P99 TBT over the baseline.
    pub latency_tolerance: f64,
    /// Allowed absolute drop in SLO attainment.
    pub attainment_tolerance: f64,
}

impl Default for AssertConfig {
    fn default() -> Self {
        AssertConfig {
            latency_tolerance: 0.05,
            attainment_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plan: PlanConfig,
    pub decode: DecodeConfig,
    pub sim: SimConfig,
    pub workload: WorkloadConfig,
    pub sweep: SweepConfig,
    #[serde(rename = "assert")]
    pub assertion: AssertConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn preset(&self, name: &str) -> Result<Preset> {
        let preset = match &self.workload.preset {
            Some(p) => p.clone(),
            None => match Preset::by_name(name) {
                Some(p) => p,
                None => bail!("unknown preset {name:?}; expected one of {:?}", Preset::NAMES),
            },
        };
        preset.validate()?;
        Ok(preset)
    }
}

/// Parses JSON, naming the offending key path on failure.
pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("at `{path}`: {}", e.into_inner())
    })
}
