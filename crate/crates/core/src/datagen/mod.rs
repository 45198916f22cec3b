//! Deterministic planted-task generators and bundle writing.

mod diffusion;
mod ranking;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use diffusion::{
    daily_profile, diffusion_schema, gen_diffusion_task, DiffusionDynamics, SynthDiffusionSpec,
    RELATIONS, SERIES_START_MIN,
};
pub use ranking::{
    gen_ranking_task, planted_score, planted_scores, ranking_schema, SynthRankingSpec,
};

use crate::error::{Error, Result};
use crate::training::{ForecastData, RankingData, Task};

pub const SPEC_FILE: &str = "spec.json";

/// Generator spec, serialized next to the data it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskSpec {
    Ranking(SynthRankingSpec),
    Forecast(SynthDiffusionSpec),
}

impl TaskSpec {
    pub fn task(&self) -> Task {
        match self {
            TaskSpec::Ranking(_) => Task::Ranking,
            TaskSpec::Forecast(_) => Task::Forecast,
        }
    }

    pub fn default_for(task: Task, seed: u64) -> Self {
        match task {
            Task::Ranking => TaskSpec::Ranking(SynthRankingSpec {
                seed,
                ..Default::default()
            }),
            Task::Forecast => TaskSpec::Forecast(SynthDiffusionSpec {
                seed,
                ..Default::default()
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }
}

/// Generated data of either task.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskData {
    Ranking(RankingData),
    Forecast(ForecastData),
}

pub fn generate(spec: &TaskSpec) -> Result<TaskData> {
    Ok(match spec {
        TaskSpec::Ranking(s) => TaskData::Ranking(gen_ranking_task(s)?),
        TaskSpec::Forecast(s) => TaskData::Forecast(gen_diffusion_task(s)?),
    })
}

/// Writes the data bundle and its spec under `dir`.
pub fn write_bundle(dir: &Path, spec: &TaskSpec, data: &TaskData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match data {
        TaskData::Ranking(d) => d.save(dir)?,
        TaskData::Forecast(d) => d.save(dir)?,
    }
    let path = dir.join(SPEC_FILE);
    fs::write(&path, spec.to_json()).map_err(|e| Error::io(&path, e))
}

/// Task of a bundle, from its spec file or, failing that, its layout.
pub fn bundle_task(dir: &Path) -> Result<Task> {
    let spec = dir.join(SPEC_FILE);
    if spec.exists() {
        return Ok(TaskSpec::load(&spec)?.task());
    }
    if dir.join("train").join("instances.csv").exists() {
        Ok(Task::Ranking)
    } else if dir.join("series_nodes.csv").exists() {
        Ok(Task::Forecast)
    } else {
        Err(Error::schema(
            dir.display().to_string(),
            "not a ranking or forecast bundle",
        ))
    }
}

pub fn load_bundle(dir: &Path, task: Task) -> Result<TaskData> {
    Ok(match task {
        Task::Ranking => TaskData::Ranking(RankingData::load(dir)?),
        Task::Forecast => TaskData::Forecast(ForecastData::load(dir)?),
    })
}
