use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::templates::Stage;

/// A dataset file handed to the trainer, pinned by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    pub sha256: String,
    pub records: usize,
    pub stage: Stage,
}

/// Recipe for an external LoRA fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingManifest {
    pub learning_rate: f64,
    pub adapter_rank: u32,
    pub adapter_alpha: u32,
    pub adapter_dropout: f64,
    /// Tokens.
    pub max_instruction_length: u32,
    /// Tokens.
    pub max_output_length: u32,
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub epochs: u32,
    pub datasets: Vec<DatasetRef>,
    pub template_version: String,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adapter_rank: 8,
            adapter_alpha: 32,
            adapter_dropout: 0.1,
            max_instruction_length: 2048,
            max_output_length: 128,
            batch_size: 1,
            gradient_accumulation_steps: 1,
            epochs: 2,
            datasets: Vec::new(),
            template_version: String::new(),
        }
    }
}

impl TrainingManifest {
    pub fn validate(&self) -> Result<(), String> {
        let positive_float = [("learning_rate", self.learning_rate), ("adapter_dropout", self.adapter_dropout)];
        for (name, value) in positive_float {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("{name} must be positive, got {value}"));
            }
        }
        if self.adapter_dropout >= 1.0 {
            return Err(format!("adapter_dropout must be below 1, got {}", self.adapter_dropout));
        }
        let positive_int = [
            ("adapter_rank", self.adapter_rank),
            ("adapter_alpha", self.adapter_alpha),
            ("max_instruction_length", self.max_instruction_length),
            ("max_output_length", self.max_output_length),
            ("batch_size", self.batch_size),
            ("gradient_accumulation_steps", self.gradient_accumulation_steps),
            ("epochs", self.epochs),
        ];
        for (name, value) in positive_int {
            if value == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_recipe() {
        let m = TrainingManifest::default();
        assert_eq!(m.learning_rate, 1e-4);
        assert_eq!((m.adapter_rank, m.adapter_alpha), (8, 32));
        assert_eq!(m.adapter_dropout, 0.1);
        assert_eq!((m.max_instruction_length, m.max_output_length), (2048, 128));
        assert_eq!((m.batch_size, m.gradient_accumulation_steps, m.epochs), (1, 1, 2));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn rejects_non_positive_fields() {
        assert!(TrainingManifest { epochs: 0, ..TrainingManifest::default() }.validate().is_err());
        assert!(TrainingManifest { learning_rate: 0.0, ..TrainingManifest::default() }.validate().is_err());
        assert!(TrainingManifest { adapter_dropout: 1.0, ..TrainingManifest::default() }.validate().is_err());
    }
}
