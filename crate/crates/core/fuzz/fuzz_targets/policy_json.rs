#![no_main]
use libfuzzer_sys::fuzz_target;
use scirp::mdp::{extract_ss, Policy};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(policy) = Policy::from_json(text) else { return };
    // Lookups clamp off-table positions instead of indexing out of bounds.
    for t in 0..policy.periods {
        for omega2 in [i64::MIN / 4, policy.omega2_min - 1, policy.omega2_min, policy.omega2_max(), i64::MAX / 4] {
            let _ = policy.action(t, omega2);
        }
    }
    let _ = extract_ss(&policy);
    let back = Policy::from_json(&policy.to_json()).expect("own output parses");
    assert_eq!(back.actions, policy.actions);
});
