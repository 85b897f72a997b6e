use serde::Serialize;

use super::{backend_for, evaluate, EvalSettings, Pipeline, PipelineError};
use crate::corpus::DatasetSplit;
use crate::inference::{EndpointConfig, InferenceClient};
use crate::metrics::ScoreReport;
use crate::templates::{TemplateCompiler, TemplateVariant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotRow {
    /// Position in the endpoint list; breaks ties.
    pub index: usize,
    pub model_name: String,
    pub erc: Option<ScoreReport>,
    pub pairs: Option<ScoreReport>,
    pub endpoint_failures: usize,
}

impl PilotRow {
    fn pair_f1(&self) -> f64 {
        self.pairs.as_ref().map_or(0.0, |s| s.weighted_f1)
    }
}

/// Zero-shot comparison, best pair F1 first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotReport {
    pub rows: Vec<PilotRow>,
}

impl PilotReport {
    pub fn to_json(&self) -> String {
        crate::io::to_sorted_json(self)
    }

    pub fn render_table(&self) -> String {
        let fmt = |s: &Option<ScoreReport>| s.as_ref().map_or_else(|| "-".to_string(), |s| format!("{:.4}", s.weighted_f1));
        let mut out = format!("{:<4} {:<24} {:>8} {:>8}\n", "#", "model", "erc_f1", "pair_f1");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<4} {:<24} {:>8} {:>8}\n",
                row.index,
                row.model_name,
                fmt(&row.erc),
                fmt(&row.pairs)
            ));
        }
        out
    }
}

/// Scores each endpoint on `split` without any training step.
pub async fn run_pilot(
    endpoints: &[EndpointConfig],
    split: &DatasetSplit,
    compiler: &TemplateCompiler,
    variant: TemplateVariant,
    settings: EvalSettings,
) -> Result<PilotReport, PipelineError> {
    if endpoints.is_empty() {
        return Err(PipelineError::Config("pilot needs at least one endpoint".into()));
    }
    let mut rows = Vec::with_capacity(endpoints.len());
    for (index, endpoint) in endpoints.iter().enumerate() {
        let backend = backend_for(endpoint, Some(split))?;
        let client = InferenceClient::new(endpoint.clone(), backend, None)?;
        let pipeline = Pipeline::new(compiler.clone(), client, variant);
        let eval = evaluate(&pipeline, split, settings, None).await?;
        let endpoint_failures = [eval.erc.as_ref().map(|s| &s.report), eval.ecpe.as_ref().map(|s| &s.report), eval.joint.as_ref().map(|s| &s.report)]
            .into_iter()
            .flatten()
            .map(|r| r.endpoint_failures.len())
            .sum();
        rows.push(PilotRow {
            index,
            model_name: endpoint.model_name.clone(),
            erc: eval.erc_score,
            pairs: eval.pair_score,
            endpoint_failures,
        });
    }
    rows.sort_by(|a, b| b.pair_f1().total_cmp(&a.pair_f1()));
    Ok(PilotReport { rows })
}
