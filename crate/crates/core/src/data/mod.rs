//! Impression logs, journey construction, covariate vocabularies, dataset
//! splits and the confounded synthetic generator.

mod ingest;
mod io;
mod journeys;
mod split;
mod synthetic;
mod types;
mod vocab;

pub use ingest::{ingest_log, ColumnMap, IngestReport};
pub use io::{
    read_json, read_journeys, read_jsonl, write_json, write_journeys, write_jsonl, SplitManifest,
    JOURNEY_FORMAT_VERSION,
};
pub use journeys::{build_journeys, channel_frequencies, select_random_channels, JourneyStats};
pub use split::{split, DEFAULT_FRACTIONS};
pub use synthetic::{generate_synthetic, ground_truth_attribution, GroundTruth, SyntheticConfig};
pub use types::{Impression, Journey, RawJourney, Touchpoint, DEFAULT_MAX_LEN};
pub use vocab::{VocabMap, OOV_INDEX};
