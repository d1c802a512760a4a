use std::path::Path;

use scirp::instance::{generate, GenParams, Instance};

fn load(name: &str) -> Instance {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    Instance::load(path).unwrap()
}

#[test]
fn worked_example_fixtures_are_valid() {
    let a = load("worked_example.json");
    assert!(a.validate().is_empty());
    let b = load("worked_example_u1500.json");
    assert!(b.validate().is_empty());
    assert_eq!(a.producer.capacity, 4500);
    assert_eq!(b.producer.capacity, 1500);
    let mut b = b;
    b.producer.capacity = 4500;
    assert_eq!(a, b);
}

#[test]
fn base_defaults_is_the_seeded_generator_output() {
    let inst = load("base_defaults.json");
    assert_eq!(inst, generate(1, 10, 7, &GenParams::default()).unwrap());
}

#[test]
fn case_fixtures_need_only_distances() {
    for (name, n, supply) in [
        ("case_emmen.json", 10, 500.0),
        ("case_eemshaven1.json", 17, 2195.0),
        ("case_eemshaven2.json", 24, 4670.0),
    ] {
        let inst = load(name);
        assert_eq!(inst.num_customers(), n, "{name}");
        // Base cases: mean supply equals mean total demand.
        let demand: f64 = inst.customers.iter().map(|c| c.mu).sum();
        assert_eq!(demand, supply, "{name}");
        assert_eq!(inst.producer.mu, supply);
        let issues = inst.validate();
        assert_eq!(issues, vec!["no distance matrix and incomplete coordinates".to_string()], "{name}");
        let mut fixed = inst.clone();
        fixed.distances = Some(vec![vec![1.0; n + 1]; n + 1]);
        for (k, row) in fixed.distances.as_mut().unwrap().iter_mut().enumerate() {
            row[k] = 0.0;
        }
        assert!(fixed.validate().is_empty(), "{name}: {:?}", fixed.validate());
    }
}
