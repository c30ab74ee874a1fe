use std::path::Path;

use frilab_core::harness::{ExperimentConfig, SweepConfig};

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_owned();
        if name.starts_with("sweep") {
            let sw = SweepConfig::load(&p).unwrap();
            assert!(sw.cells().unwrap().iter().all(|(_, c)| c.is_ok()), "{name}");
        } else {
            let c = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(format!("{}.json", c.id()), name);
        }
        n += 1;
    }
    assert!(n >= 8);
}
