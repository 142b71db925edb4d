//! Saving and loading a fitted model as a directory:
//!
//! | file               | content                                   |
//! |--------------------|-------------------------------------------|
//! | `schema.json`      | covariate schema                          |
//! | `data.csv`         | the dataset the model was fitted to       |
//! | `model.json`       | model structure and MCMC settings         |
//! | `design.json`      | resolved design (knots, reference levels) |
//! | `risks.bin`        | draws x births risk matrix                |
//! | `params.bin`       | draws x parameters matrix                 |
//! | `diagnostics.json` | R-hat, ESS and warnings                   |
//! | `manifest.json`    | draw layout, seed and file hashes         |

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::design::{DesignSpec, ModelDesign};
use super::diagnostics::FitDiagnostics;
use super::posterior::{DrawInfo, ParameterDraws, PosteriorRisks};
use super::sampler::FittedModel;
use super::{McmcSettings, ModelConfig};
use super::density::ParamLayout;
use crate::data::{load_csv, write_csv, CovariateSchema};
use crate::error::{Error, Result};
use crate::manifest::{file_sha256, RunManifest};

pub const FIT_FILES: [&str; 7] = [
    "schema.json",
    "data.csv",
    "model.json",
    "design.json",
    "risks.bin",
    "params.bin",
    "diagnostics.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DrawLayout {
    parameter_names: Vec<String>,
    draws: Vec<DrawInfo>,
}

impl FittedModel {
    /// Writes the model into `dir` (created if needed).
    pub fn save(&self, dir: &Path, mcmc: &McmcSettings, diagnostics: &FitDiagnostics) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let hash = self.dataset.content_hash();
        std::fs::write(dir.join("schema.json"), self.dataset.schema().to_json())?;
        write_csv(&self.dataset, BufWriter::new(File::create(dir.join("data.csv"))?))?;
        let config = ModelConfig {
            model: self.spec.clone(),
            mcmc: mcmc.clone(),
        };
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&config)?)?;
        std::fs::write(dir.join("design.json"), serde_json::to_string_pretty(&self.design.spec)?)?;
        self.risks
            .write_binary(BufWriter::new(File::create(dir.join("risks.bin"))?), &hash)?;
        self.params
            .write_binary(BufWriter::new(File::create(dir.join("params.bin"))?), &hash)?;
        std::fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(diagnostics)?)?;

        let mut manifest = RunManifest::new("fit");
        manifest.seed = Some(mcmc.seed);
        manifest.dataset_hash = Some(hash);
        manifest.settings = serde_json::to_value(DrawLayout {
            parameter_names: self.params.names.clone(),
            draws: self.params.info.clone(),
        })?;
        manifest.add_outputs(dir, &FIT_FILES)?;
        manifest.write(&dir.join("manifest.json"))
    }

    /// Loads a model written by [`FittedModel::save`], checking file hashes
    /// and that both draw matrices belong to the stored dataset.
    pub fn load(dir: &Path) -> Result<(FittedModel, ModelConfig, FitDiagnostics)> {
        let manifest = RunManifest::load(&dir.join("manifest.json"))?;
        for (name, expected) in &manifest.outputs {
            let got = file_sha256(&dir.join(name))?;
            if &got != expected {
                return Err(Error::InvalidInput(format!(
                    "{} does not match its manifest hash",
                    dir.join(name).display()
                )));
            }
        }
        let layout_info: DrawLayout = serde_json::from_value(manifest.settings.clone())?;
        let schema = CovariateSchema::load(&dir.join("schema.json"))?;
        let dataset = load_csv(&dir.join("data.csv"), &schema)?;
        let hash = dataset.content_hash();
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let design_spec: DesignSpec =
            serde_json::from_str(&std::fs::read_to_string(dir.join("design.json"))?)?;
        let design = ModelDesign::with_spec(design_spec, &dataset);
        let layout = ParamLayout::new(&design, config.model.random_effects);
        let (risks, risk_hash) = PosteriorRisks::read_binary(
            BufReader::new(File::open(dir.join("risks.bin"))?),
            layout_info.draws.clone(),
        )?;
        let (params, param_hash) = ParameterDraws::read_binary(
            BufReader::new(File::open(dir.join("params.bin"))?),
            layout_info.parameter_names,
            layout_info.draws,
        )?;
        if risk_hash != hash || param_hash != hash {
            return Err(Error::InvalidInput(
                "posterior draws were produced from a different dataset".into(),
            ));
        }
        if risks.n_births() != dataset.len() || params.dim() != layout.dim() {
            return Err(Error::InvalidInput("posterior draws do not match the model layout".into()));
        }
        let diagnostics: FitDiagnostics =
            serde_json::from_str(&std::fs::read_to_string(dir.join("diagnostics.json"))?)?;
        Ok((
            FittedModel {
                spec: config.model.clone(),
                dataset,
                design,
                layout,
                params,
                risks,
            },
            config,
            diagnostics,
        ))
    }
}
