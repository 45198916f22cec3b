//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::comgnn::{AblationConfig, ModelDims};
use crate::error::{Error, Result};
use crate::stcomgnn::STConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Ranking,
    Forecast,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ranking => "ranking",
            Task::Forecast => "forecast",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ranking" => Ok(Task::Ranking),
            "forecast" => Ok(Task::Forecast),
            _ => Err(Error::Config(format!(
                "unknown task {s:?} (expected ranking or forecast)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Samples per optimizer step; 0 means the whole training split.
    pub batch_size: usize,
    /// Forecast training samples drawn per epoch; 0 means all of them.
    pub samples_per_epoch: usize,
    /// Evenly spaced validation samples scored for checkpoint selection
    /// during forecast training; 0 means all. Reported metrics always use
    /// the whole split.
    pub eval_samples: usize,
    pub dims: ModelDims,
    pub st: STConfig,
    pub ablation: AblationConfig,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            learning_rate: 1e-3,
            lambda: 1e-5,
            epochs: 100,
            seed: 0,
            eval_every: 1,
            batch_size: 0,
            samples_per_epoch: 0,
            eval_samples: 0,
            dims: ModelDims::default(),
            st: STConfig::default(),
            ablation: AblationConfig::FULL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.dims.layers == 0 {
            return Err(Error::Config("dims.layers must be at least 1".into()));
        }
        if self.task == Task::Forecast {
            self.st.validate()?;
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
            }
        }
        let d = &mut self.dims;
        let st = &mut self.st;
        match key {
            "task" => self.task = value.parse()?,
            "lr" => self.learning_rate = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "samples_per_epoch" => self.samples_per_epoch = num(key, value)?,
            "eval_samples" => self.eval_samples = num(key, value)?,
            "dims.layers" => d.layers = num(key, value)?,
            "dims.node_dim" => d.node_dim = num(key, value)?,
            "dims.edge_dim" => d.edge_dim = num(key, value)?,
            "dims.node_msg" => d.node_msg = num(key, value)?,
            "dims.edge_msg" => d.edge_msg = num(key, value)?,
            "dims.attn" => d.attn = num(key, value)?,
            "dims.meta_hidden" => d.meta_hidden = num(key, value)?,
            "dims.leaky_slope" => d.leaky_slope = num(key, value)?,
            "st.k_spatial" => st.k_spatial = num(key, value)?,
            "st.kernel" => st.kernel = num(key, value)?,
            "st.n_blocks" => st.n_blocks = num(key, value)?,
            "st.t_recent" => st.t_recent = num(key, value)?,
            "st.t_daily" => st.t_daily = num(key, value)?,
            "st.t_weekly" => st.t_weekly = num(key, value)?,
            "st.step_min" => st.step_min = num(key, value)?,
            "st.day_min" => st.day_min = num(key, value)?,
            "st.week_min" => st.week_min = num(key, value)?,
            "st.channels" => st.channels = num(key, value)?,
            "st.edge_channels" => st.edge_channels = num(key, value)?,
            "st.out_dim" => st.out_dim = num(key, value)?,
            "st.horizons" => {
                st.horizons = value
                    .split(',')
                    .map(|h| num(key, h.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "ablation.no_het" => self.ablation.collapse_types = flag(key, value)?,
            "ablation.no_edge_info" => self.ablation.use_edge_states = !flag(key, value)?,
            "ablation.no_meta_att" => self.ablation.use_meta_attention = !flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text over the defaults. A `task` key overrides
    /// `default_task`.
    pub fn parse(text: &str, default_task: Task) -> Result<Self> {
        let mut cfg = Self::new(default_task);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, default_task: Task) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, default_task)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let st = &self.st;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("task", self.task.as_str().into());
        kv("lr", format!("{:?}", self.learning_rate));
        kv("lambda", format!("{:?}", self.lambda));
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("samples_per_epoch", self.samples_per_epoch.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("dims.layers", d.layers.to_string());
        kv("dims.node_dim", d.node_dim.to_string());
        kv("dims.edge_dim", d.edge_dim.to_string());
        kv("dims.node_msg", d.node_msg.to_string());
        kv("dims.edge_msg", d.edge_msg.to_string());
        kv("dims.attn", d.attn.to_string());
        kv("dims.meta_hidden", d.meta_hidden.to_string());
        kv("dims.leaky_slope", format!("{:?}", d.leaky_slope));
        kv("st.k_spatial", st.k_spatial.to_string());
        kv("st.kernel", st.kernel.to_string());
        kv("st.n_blocks", st.n_blocks.to_string());
        kv("st.t_recent", st.t_recent.to_string());
        kv("st.t_daily", st.t_daily.to_string());
        kv("st.t_weekly", st.t_weekly.to_string());
        kv("st.step_min", st.step_min.to_string());
        kv("st.day_min", st.day_min.to_string());
        kv("st.week_min", st.week_min.to_string());
        let hs: Vec<String> = st.horizons.iter().map(usize::to_string).collect();
        kv("st.horizons", hs.join(","));
        kv("st.channels", st.channels.to_string());
        kv("st.edge_channels", st.edge_channels.to_string());
        kv("st.out_dim", st.out_dim.to_string());
        kv("ablation.no_het", self.ablation.collapse_types.to_string());
        kv(
            "ablation.no_edge_info",
            (!self.ablation.use_edge_states).to_string(),
        );
        kv(
            "ablation.no_meta_att",
            (!self.ablation.use_meta_attention).to_string(),
        );
        s
    }
}
