//! Play data: rigs, court geometry, events, generation, labels and files.

pub mod events;
pub mod generator;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod sequence;
pub mod topology;

pub use events::{EventKind, EVENT_NAMES, N_EVENTS};
pub use generator::{generate_dataset, generate_play, DatasetSpec, PlayScript, Scenario};
pub use io::{load_dataset, save_dataset};
pub use labels::{find_assists, label_assists, label_picks, AssistConfig, AssistRecord, PickConfig};
pub use sequence::{PlaySequence, ScenarioKind, ShotKind, Team, FRAMES_PER_STEP, STEP_HZ};
pub use topology::SkeletonTopology;
