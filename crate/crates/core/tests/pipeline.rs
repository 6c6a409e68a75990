use dmlfed_core::dml::{compress, ClassMode, DmlConfig, DmlKind};
use dmlfed_core::federation::wire::{decode_signature, encode_signature};
use dmlfed_core::federation::{run_federated, run_nondistributed, FederationOptions, SiteNode, Transport};
use dmlfed_core::learners::{LearnerConfig, ModelArtifact};
use dmlfed_core::numerics::{Dataset, Matrix, RngHandle};
use dmlfed_core::scenarios::ScenarioSpec;
use proptest::prelude::*;
use rand::Rng;

const KINDS: [DmlKind; 3] = [DmlKind::Kmeans, DmlKind::Kdtree, DmlKind::Rptree];

fn nodes(sites: &[Dataset], dml: &DmlConfig, rng: RngHandle) -> Vec<SiteNode> {
    sites
        .iter()
        .enumerate()
        .map(|(s, d)| {
            let id = format!("site{:02}", s + 1);
            SiteNode::new(id.clone(), d.clone(), dml.clone(), rng.fork_str(&id))
        })
        .collect()
}

fn random_data(n: usize, d: usize, classes: usize, seed: u64) -> Dataset {
    let mut r = RngHandle::new(seed).rng();
    let x: Vec<f64> = (0..n * d).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
    let features = Matrix::from_vec(n, d, x).unwrap();
    if classes == 0 {
        let y = (0..n).map(|i| features.row(i).iter().sum::<f64>() + r.random::<f64>()).collect();
        Dataset::regression(features, y).unwrap()
    } else {
        let labels = (0..n).map(|i| if i < classes { i } else { r.random_range(0..classes) }).collect();
        Dataset::classification(features, labels, classes).unwrap()
    }
}

const TOY: &str = r#"
seed = 3
train = 3000

[generator]
kind = "toy"

[partition]
rule = "by_feature_range"
feature = 0
cuts = [20.0, 80.0]
"#;

#[test]
fn toy_scenario_federated_lines_track_the_pooled_fit() {
    let spec = ScenarioSpec::from_toml_str(TOY, None).unwrap();
    let sc = spec.materialize(0).unwrap();
    assert_eq!(sc.sites.len(), 3);
    let (base, _) = run_nondistributed(&sc.train, &LearnerConfig::Lm, RngHandle::new(0)).unwrap();
    let ModelArtifact::Linear(base) = base else { panic!("linear model expected") };
    for kind in KINDS {
        let ns = nodes(&sc.sites, &DmlConfig::new(kind, 10.0), RngHandle::new(1));
        let (model, report) = run_federated(&ns, &LearnerConfig::Lm, &FederationOptions::default()).unwrap();
        assert_eq!(report.pooled_weight, 3000.0);
        let ModelArtifact::Linear(m) = model else { panic!("linear model expected") };
        // group means of a linear model stay on the line, so only noise moves the slope
        assert!((m.beta()[1] - base.beta()[1]).abs() < 0.02, "{kind}: {:?} vs {:?}", m.beta(), base.beta());
    }
}

#[test]
fn mixture_scenario_over_sockets_matches_in_process() {
    let text = r#"
        seed = 5
        train = 800
        test = 200

        [generator]
        kind = "mixture4"
        rho = 0.3

        [partition]
        rule = "equal_random"
        sites = 3
    "#;
    let sc = ScenarioSpec::from_toml_str(text, None).unwrap().materialize(1).unwrap();
    let learner = LearnerConfig::from_name("rf").unwrap();
    let ns = nodes(&sc.sites, &DmlConfig::new(DmlKind::Rptree, 4.0), RngHandle::new(2));
    let (local, a) = run_federated(&ns, &learner, &FederationOptions::default()).unwrap();
    let socket = FederationOptions {
        transport: Transport::Socket,
        ..Default::default()
    };
    let (remote, b) = run_federated(&ns, &learner, &socket).unwrap();
    assert_eq!(local, remote);
    assert_eq!(a.bytes_to_coordinator, b.bytes_to_coordinator);
    assert_eq!(a.pooled_reps, b.pooled_reps);
    let err = local.test_error(sc.test.as_ref().unwrap()).unwrap();
    assert!(err < 0.5, "test error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn signatures_survive_the_wire(
        n in 1usize..150,
        d in 1usize..5,
        classes in 0usize..4,
        kind in 0usize..3,
        ratio in 1.0f64..9.0,
        pooled in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let classes = if classes == 1 { 2 } else { classes };
        prop_assume!(n >= classes);
        let data = random_data(n, d, classes, seed);
        let cfg = DmlConfig {
            class_mode: if pooled { ClassMode::Pooled } else { ClassMode::Stratified },
            ..DmlConfig::new(KINDS[kind], ratio)
        };
        let mut sig = compress(&data, &cfg, "s", RngHandle::new(seed)).unwrap();
        prop_assert_eq!(sig.total_weight(), n as u64);
        let back = decode_signature(&encode_signature(&sig).unwrap()).unwrap();
        sig.assignment = None;
        prop_assert_eq!(back, sig);
    }

    #[test]
    fn pooled_weight_is_total_rows_and_runs_are_reproducible(
        sizes in proptest::collection::vec(12usize..80, 1..4),
        kind in 0usize..3,
        ratio in 1.0f64..6.0,
        seed in 0u64..1000,
    ) {
        let sites: Vec<Dataset> = sizes.iter().enumerate().map(|(s, &n)| random_data(n, 2, 0, seed + s as u64)).collect();
        let dml = DmlConfig::new(KINDS[kind], ratio);
        let run = || run_federated(&nodes(&sites, &dml, RngHandle::new(seed)), &LearnerConfig::Lm, &FederationOptions::default()).unwrap();
        let (m1, r1) = run();
        let (m2, r2) = run();
        prop_assert_eq!(r1.pooled_weight, sizes.iter().sum::<usize>() as f64);
        prop_assert_eq!(m1.to_json(), m2.to_json());
        prop_assert_eq!(r1.bytes_to_coordinator, r2.bytes_to_coordinator);
    }
}
