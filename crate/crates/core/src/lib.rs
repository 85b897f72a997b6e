//! Emotion-cause pair extraction with instruction-tuned language models.
//!
//! The crate covers the whole loop around a chat model: loading and
//! validating conversation corpora ([`corpus`]), compiling them into
//! instruction prompts ([`templates`]), querying any chat-completions
//! endpoint with caching and bounded concurrency ([`inference`]), turning
//! replies into labels and cause indices ([`parser`]), scoring the resulting
//! pairs ([`metrics`]) and orchestrating the two-stage workflow, training
//! dataset emission and self-training rounds ([`pipeline`]).
//!
//! ```
//! use emocause::corpus::{demo_conversation, EmotionCategory, EmotionCausePair};
//! use emocause::metrics::score_pairs;
//!
//! let gold = demo_conversation().gold_pairs.unwrap();
//! let pred = [EmotionCausePair::new(4, EmotionCategory::Joy, 2)];
//! let report = score_pairs(&gold, &pred).unwrap();
//! assert_eq!(format!("{:.4}", report.weighted_f1), "0.4444");
//! ```

pub mod corpus;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod parser;
pub mod pipeline;
pub mod templates;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/corpus.md")]
mod book_corpus {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/prompts.md")]
mod book_prompts {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/parsing.md")]
mod book_parsing {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scoring.md")]
mod book_scoring {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/endpoints.md")]
mod book_endpoints {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/workflow.md")]
mod book_workflow {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
