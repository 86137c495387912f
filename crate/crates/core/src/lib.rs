//! Multi-label classification of vaccine-concern tweets.
//!
//! * [`taxonomy`]: the twelve labels, label sets, and label metadata.
//! * [`corpus`]: tweet CSV loading, writing, and summaries.
//! * [`finetune`]: encoder + dense sigmoid head, training and checkpoints.
//! * [`zeroshot`]: prompted chat-completion classification with retries,
//!   caching, and transcripts.
//! * [`metrics`]: macro-F1 and Jaccard similarity.
//! * [`runfile`]: `id,labels` prediction files.

pub mod corpus;
pub mod finetune;
pub mod metrics;
pub mod runfile;
pub mod taxonomy;
pub mod zeroshot;

pub use taxonomy::{LabelId, LabelSet};
