use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::ModelConfig;
use crate::numerics::Real;
use crate::pipeline::{evaluate_model, fit, FitOptions, Prepared};

/// One component to switch off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Toggle {
    /// Positional table frozen at zero.
    PosEnc,
    /// Elapsed-time context dropped from the head input.
    Elapsed,
    /// Repeat-count context dropped.
    Repeat,
}

impl Toggle {
    pub fn label(self) -> &'static str {
        match self {
            Toggle::PosEnc => "w/o PosEnc",
            Toggle::Elapsed => "w/o Elapsed",
            Toggle::Repeat => "w/o Repeat",
        }
    }

    pub fn apply(self, mut config: ModelConfig) -> ModelConfig {
        match self {
            Toggle::PosEnc => config.use_positional = false,
            Toggle::Elapsed => config.use_elapsed = false,
            Toggle::Repeat => config.use_repeat = false,
        }
        config
    }
}

impl std::str::FromStr for Toggle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos-enc" => Ok(Toggle::PosEnc),
            "elapsed" => Ok(Toggle::Elapsed),
            "repeat" => Ok(Toggle::Repeat),
            other => Err(format!(
                "unknown ablation toggle {other:?} (pos-enc, elapsed, repeat)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub best_epoch: u64,
    pub val_mrr: f64,
    pub test_mrr: f64,
    /// `test_mrr` minus the base run's.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Trains the base configuration and one variant per toggle with the same
/// seed, and reports test MRR deltas against the base.
pub fn run_ablation<T: Real>(
    base: &ModelConfig,
    data: &Prepared,
    opts: &FitOptions,
    seed: u64,
    toggles: &[Toggle],
) -> Result<AblationTable, EvalError> {
    let variants = std::iter::once(("base".to_string(), base.clone())).chain(
        toggles
            .iter()
            .map(|t| (t.label().to_string(), t.apply(base.clone()))),
    );
    let mut rows: Vec<AblationRow> = Vec::new();
    for (variant, config) in variants {
        let result = fit::<T>(config, data, opts, seed, &mut |_, _, _, _| Ok(()))?;
        let test = evaluate_model(
            &result.model,
            &result.store,
            data,
            &data.test,
            opts.eval_batch_size,
            "",
        )?;
        let delta = rows.first().map_or(0.0, |b| test.mrr - b.test_mrr);
        rows.push(AblationRow {
            variant,
            best_epoch: result.best_epoch,
            val_mrr: result.best_val_mrr,
            test_mrr: test.mrr,
            delta,
        });
    }
    Ok(AblationTable { seed, rows })
}
