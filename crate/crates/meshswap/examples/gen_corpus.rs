//! Regenerate the fuzz corpus seeds under fuzz/corpus/.

use meshswap::config::{Mode, RunConfig};
use meshswap::forest::{Forest, Tree};
use meshswap::snapshot::ForestSnapshot;
use std::collections::BTreeMap;
use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");

    for (name, mode) in [
        ("2d", Mode::TwoD),
        ("3d", Mode::ThreeD),
        ("3d_extruded", Mode::ThreeDExtruded),
    ] {
        let config = RunConfig::default_for_mode(mode);
        let json = serde_json::to_string_pretty(&config).unwrap();
        std::fs::write(
            root.join("config_json")
                .join(format!("default_{name}.json")),
            json,
        )
        .unwrap();
    }

    let tree = Tree::new(0, 2, &[0.0, 10.0], &[100.0, 50.0]).unwrap();
    let forest = Forest::build_uniform(2, vec![tree], 2, &[4, 8], 3).unwrap();
    let (forest, _) = forest.refine(
        |p| p.key.coords()[0] == 0 && p.key.coords()[1] == 0,
        |_, _, _| BTreeMap::new(),
    );
    std::fs::write(
        root.join("snapshot_json").join("refined_2d.json"),
        ForestSnapshot::from_forest(&forest).to_json(),
    )
    .unwrap();

    let tree3 = Tree::new(0, 3, &[-1.0, -1.0, 0.0], &[2.0, 2.0, 4.0]).unwrap();
    let forest3 = Forest::build_uniform(3, vec![tree3], 1, &[2, 2, 2], 2).unwrap();
    std::fs::write(
        root.join("snapshot_json").join("uniform_3d.json"),
        ForestSnapshot::from_forest(&forest3).to_json(),
    )
    .unwrap();

    std::fs::write(
        root.join("payload").join("valid_8_bytes"),
        meshswap::exchange::encode_payload(7, 123),
    )
    .unwrap();
    std::fs::write(root.join("payload").join("short"), [1u8, 2, 3]).unwrap();

    println!("corpus written to {}", root.display());
}
