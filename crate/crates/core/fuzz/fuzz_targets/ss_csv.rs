#![no_main]
use libfuzzer_sys::fuzz_target;
use scirp::mdp::{parse_ss_csv, ss_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rules) = parse_ss_csv(text) {
        assert_eq!(parse_ss_csv(&ss_csv(&rules)).expect("own output parses"), rules);
    }
});
