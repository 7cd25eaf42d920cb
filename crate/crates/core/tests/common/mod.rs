//! Shared fixture plumbing for integration tests.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use medigraph_core::clients::CacheMode;
use medigraph_core::config::PipelineConfig;
use medigraph_core::dialogue::{load_dialogues, Dialogue};
use medigraph_core::pipeline::Engine;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load_fixture_dialogues(name: &str) -> Vec<Dialogue> {
    let file = fs::File::open(fixture_path(name)).expect("fixture dialogue file opens");
    load_dialogues(BufReader::new(file)).expect("fixture dialogues parse")
}

/// Offline config over the shared toy KG: rule chat/search backends, lexicon
/// extractor, cache and outputs under `tmp`.
pub fn base_config(tmp: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.paths.kg_triples = Some(fixture_path("kg_triples.tsv"));
    config.paths.kg_synonyms = Some(fixture_path("kg_synonyms.json"));
    config.paths.kg_types = Some(fixture_path("kg_types.json"));
    config.paths.lexicon = Some(fixture_path("lexicon.json"));
    config.paths.search_fixtures = Some(fixture_path("search_fixtures.json"));
    config.clients.cache_path = tmp.join("cache.jsonl");
    config.output.dir = tmp.join("out");
    config
}

/// Record every external exchange for `dialogues` against the deterministic
/// rule backends, so a replay-mode engine can serve them offline.
pub fn warm_cache(config: &PipelineConfig, dialogues: &[Dialogue]) {
    let mut record = config.clone();
    record.clients.cache_mode = CacheMode::Record;
    let engine = Engine::load(record).expect("record engine loads");
    for dialogue in dialogues {
        engine
            .recommend_dialogue(dialogue)
            .unwrap_or_else(|e| panic!("recording {} failed: {e}", dialogue.id));
    }
}

/// Engine in replay mode over a cache previously warmed with [`warm_cache`].
#[allow(dead_code)] // not every integration target replays
pub fn replay_engine(config: &PipelineConfig) -> Engine {
    let mut replay = config.clone();
    replay.clients.cache_mode = CacheMode::Replay;
    Engine::load(replay).expect("replay engine loads")
}
