// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec_sched;
pub mod container_index;
pub mod embed_buffer;
pub mod gop_planner;
pub mod orchestrator;
pub mod pipeline_sim;
