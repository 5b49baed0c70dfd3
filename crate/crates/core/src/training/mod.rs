//! Pretraining and post-training loops, optimizer, schedule and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod model;
pub mod optim;
pub mod posttrain;
pub mod pretrain;
pub mod runner;
pub mod schedule;

pub use checkpoint::Checkpoint;
pub use data::{tokenizer_corpus, vocab_for, Layout, Prepared};
pub use model::Model;
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use posttrain::{action_mse, posttrain_step, predict_actions, PostMetrics, PosttrainState};
pub use pretrain::{draw_batch, pretrain_step, PretrainState, SampleLoss, StepMetrics};
pub use runner::{init_model, model_from_checkpoint, posttrain_metrics_csv, pretrain_metrics_csv, wild_subset_len, Posttrainer, Pretrainer};
pub use schedule::{lr_schedule, warmup_steps};
