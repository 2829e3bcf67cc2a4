//! Every checked-in fuzz seed is a valid input for its target.

use std::path::PathBuf;

use plda_adapt::io;
use plda_adapt::pipeline::ExperimentConfig;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn seeds_parse() {
    for (p, t) in seeds("embeddings") {
        io::parse_embeddings(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("trials") {
        io::parse_trials(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("scores") {
        io::parse_scores(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("model") {
        io::parse_model(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("metrics") {
        io::parse_metrics(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("config") {
        let cfg = ExperimentConfig::from_json(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
