//! Configuration: defaults < `--config` file < command-line flags.

use std::fs;
use std::path::PathBuf;

use respmodel::evaluation::MotionSource;
use respmodel::phantom::PopulationConfig;
use respmodel::surrogate::SignalSimConfig;
use respmodel::{Error, PipelineConfig, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub population: PopulationConfig,
    pub signal: SignalSimConfig,
    pub motion_source: MotionSource,
}

impl RunConfig {
    pub fn out_dir(&self) -> Result<PathBuf> {
        self.pipeline
            .out
            .as_ref()
            .map(PathBuf::from)
            .ok_or_else(|| Error::InvalidConfig("an output directory is required (--out)".into()))
    }
}

pub fn load(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &o.out {
        cfg.pipeline.out = Some(out.to_string_lossy().into_owned());
    }
    if let Some(r) = o.resolution {
        cfg.pipeline.resolution = r;
    }
    if let Some(s) = o.seed {
        cfg.pipeline.seed = s;
    }
    // one seed drives every random stream
    cfg.signal.seed = cfg.pipeline.seed;
    cfg.population.base.seed = cfg.pipeline.seed;
    cfg.pipeline.validate()?;
    cfg.signal.validate()?;
    Ok(cfg)
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
