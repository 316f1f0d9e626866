#![no_main]

use libfuzzer_sys::fuzz_target;
use meshswap::snapshot::ForestSnapshot;

// Snapshot parsing and forest reconstruction must reject malformed input
// with an error, never a panic. Reconstructed forests must satisfy every
// forest invariant and round-trip back to the same snapshot.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(snapshot) = ForestSnapshot::from_json(text) else {
        return;
    };
    if let Ok(forest) = snapshot.to_forest() {
        forest.check_invariants().unwrap();
        assert_eq!(ForestSnapshot::from_forest(&forest), snapshot);
    }
});
