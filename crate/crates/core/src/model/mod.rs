//! The multi-timescale sparse self-attention imputer.
//!
//! [`view`] turns a participant and a hold-out set into model inputs,
//! [`attention`] holds the network and its backward pass, [`train`] the
//! optimization loop, and [`attn_map`] the attention-weight export.

pub mod attention;
pub mod attn_map;
pub mod train;
pub mod view;

pub use attention::{assemble_features, AttentionModel, Prediction, Prepared, Role, Trace};
pub use attn_map::{export_attention_maps, AttentionMaps};
pub use train::{fit, grid_search, EpochLog, GridResult, Instance, TrainConfig, TrainLog, TrainingSet};
pub use view::{build_lapr, Lapr, ParticipantView, LAPR_LEN, LAPR_RADIUS};
