use std::path::Path;

use serde::Deserialize;

use refine::eval::{EvalConfig, ProbeConfig, RateConfig};
use refine::{DecoderMode, FitOptions, LearnerSpec, SyntheticSpec};

use crate::CliError;

/// Contents of a `--config` file. Every table is optional; subcommands read
/// the tables they need and fall back to library defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: Option<SyntheticSpec>,
    pub learner: Option<LearnerSpec>,
    pub decoder: Option<DecoderMode>,
    pub fit: Option<FitOptions>,
    pub evaluate: Option<EvalConfig>,
    pub rates: Option<RateConfig>,
    pub bench: Option<ProbeConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use refine::{LearnerKind, Nonlinearity};

    #[test]
    fn parses_every_table() {
        let cfg = RunConfig::parse(
            r#"
            decoder = "refit_ols"

            [simulate]
            n = 300
            d = 4
            q = 1
            t = 2
            nonlinearity = "piecewise"
            noise_sd = 0.3

            [learner]
            kind = "random_forest"
            forest = { n_trees = 20, min_leaf = 3 }

            [evaluate]
            n_boot = 5
            variants = [{ learner = "linear", decoder = "invert" }]

            [rates]
            sizes = [100, 400, 1600]

            [bench]
            repeats = 1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.decoder, Some(DecoderMode::RefitOls));
        assert_eq!(cfg.simulate.unwrap().nonlinearity, Nonlinearity::Piecewise);
        let learner = cfg.learner.unwrap();
        assert_eq!(learner.kind, LearnerKind::RandomForest);
        assert_eq!(learner.forest.n_trees, 20);
        assert_eq!(learner.forest.min_leaf, 3);
        let eval = cfg.evaluate.unwrap();
        assert_eq!(eval.n_boot, 5);
        assert_eq!(eval.variants[0].learner, LearnerKind::Linear);
        assert_eq!(cfg.rates.unwrap().sizes, vec![100, 400, 1600]);
        assert_eq!(cfg.bench.unwrap().repeats, 1);
    }

    #[test]
    fn rejects_unknown_tables() {
        assert!(RunConfig::parse("[unknown]\nx = 1").is_err());
    }
}
