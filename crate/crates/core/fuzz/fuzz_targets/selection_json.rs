#![no_main]
use libfuzzer_sys::fuzz_target;
use scirp::setpart::Selection;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sel) = Selection::from_json(text) {
        let back = Selection::from_json(&sel.to_json()).expect("own output parses");
        assert_eq!(back, sel);
    }
});
