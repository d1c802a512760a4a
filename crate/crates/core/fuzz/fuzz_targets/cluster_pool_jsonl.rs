#![no_main]
use libfuzzer_sys::fuzz_target;
use scirp::clustergen::ClusterPool;

fuzz_target!(|data: &[u8]| {
    // First byte picks the customer count the pool is checked against.
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let n = usize::from(n % 16) + 1;
    if let Ok(pool) = ClusterPool::from_jsonl(text, n) {
        let back = ClusterPool::from_jsonl(&pool.to_jsonl(), n).expect("own output parses");
        assert_eq!(back.clusters, pool.clusters);
    }
});
