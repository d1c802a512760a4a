#![no_main]
use libfuzzer_sys::fuzz_target;
use scirp::instance::Instance;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(inst) = Instance::from_json(text) else { return };
    // Validation reports problems; it must never panic on parsed input.
    if inst.validate().is_empty() {
        let back = Instance::from_json(&inst.to_json()).expect("own output parses");
        assert_eq!(back, inst);
        let _ = inst.distance_matrix();
    }
});
