//! Command-line driver: configuration, the experiment stages and run
//! manifests.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

pub use config::{load, Branch, ConfigError, EnvOverrides, Loaded, PipelineConfig, Split};
pub use pipeline::{check_matched, Pipeline, PipelineError, Stage};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Runs `stage` and everything before it, then writes the manifest.
/// Returns the manifest path.
pub fn run(config: &PipelineConfig, stage: Stage) -> Result<PathBuf, RunError> {
    if stage == Stage::Compare {
        check_matched(config)?;
    }
    let mut pipeline = Pipeline::new(config);
    pipeline.run(stage)?;
    let manifest = pipeline::manifest(&mut pipeline, stage.as_str())?;
    let path = config.output_dir.join("manifest.txt");
    std::fs::write(&path, manifest.to_text()).map_err(|e| {
        RunError::Pipeline(PipelineError::Io {
            path: path.clone(),
            message: e.to_string(),
        })
    })?;
    Ok(path)
}
