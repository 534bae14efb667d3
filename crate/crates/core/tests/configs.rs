use std::path::Path;

use rolfor_core::trainer::{ExperimentConfig, Variant};

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            c.validate_paths().unwrap();
            assert_eq!(c.adjacency.variant, 3, "{}", path.display());
            assert!(c.train_data.is_some());
            if c.variant == Variant::E2eFinetune {
                assert!(c.init.is_some());
            }
            seen += 1;
        }
    }
    assert!(seen >= 6);
}
