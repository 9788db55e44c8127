//! File names inside group and model directories. Dataset directories use
//! the names in `pita_core::synth::files`.

pub const GROUPS: &str = "groups.json";
pub const DISTANCES: &str = "distances.bin";
pub const GROUP_DISTANCES: &str = "group_distances.bin";
pub const GROUP_MATRIX: &str = "group_matrix.bin";

pub const CONFIG: &str = "config.json";

pub fn checkpoint(stage: &str) -> String {
    format!("{stage}.ckpt")
}

pub fn log(stage: &str) -> String {
    format!("{stage}_log.jsonl")
}
