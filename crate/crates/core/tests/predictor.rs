use casnsc::context::{FeatureSet, LightState};
use casnsc::dataset::{Branch, Record};
use casnsc::io::model_bytes;
use casnsc::pipeline::{episode, train_all, Protocol};
use casnsc::predictor::{train, TrainConfig, TrainedModel};
use casnsc::scenariosim::{generate_dataset, ScenarioConfig};
use casnsc::trajkit::{Sample, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.cell_width = 2.0;
    cfg.dictionary.lambda = 1.0;
    cfg.dictionary.k_max = 2;
    cfg.gp.max_points = 300;
    cfg.gp.opt_max_points = 120;
    cfg.gp.max_opt_iters = 15;
    cfg
}

fn scenario(n: usize, p_obey: f64, light_split: f64, seed: u64) -> (Vec<Record>, casnsc::context::IntersectionMap) {
    let cfg = ScenarioConfig {
        n_trajectories: n,
        p_obey,
        light_split,
        seed,
        ..Default::default()
    };
    generate_dataset(&cfg).unwrap()
}

#[test]
fn straight_only_data_has_no_transitions() {
    let records: Vec<Record> = (0..20)
        .map(|i| {
            let y = 0.5 + 0.01 * i as f64;
            let pts: Vec<(f64, f64, f64)> = (0..=20).map(|k| (k as f64 * 0.5, 0.7 * k as f64, y)).collect();
            Record::new(i, Trajectory::from_triples(&pts).unwrap())
        })
        .collect();
    let model = train(&records, None, FeatureSet::Asnsc, &small_train_config()).unwrap();
    assert!(model.num_atoms() >= 1);
    assert!(model.transitions.nonzero().all(|(i, j, _)| i == j));
    assert!(model.transitional.is_empty());
    assert_eq!(model.transitions.total(), records.len() as u64);
}

#[test]
fn gated_turns_produce_transitions() {
    let (records, map) = scenario(60, 1.0, 0.5, 4);
    let mut cfg = TrainConfig::default();
    cfg.gp.max_points = 200;
    cfg.gp.max_opt_iters = 5;
    let model = train(&records, Some(&map), FeatureSet::Casnsc3, &cfg).unwrap();
    assert!(model.transitions.nonzero().any(|(i, j, _)| i != j));
    let keys: Vec<(usize, usize)> = model.transitional.iter().map(|t| (t.from, t.to)).collect();
    let expected: Vec<(usize, usize)> = model
        .transitions
        .nonzero()
        .filter(|(i, j, _)| i != j)
        .map(|(i, j, _)| (i, j))
        .collect();
    assert_eq!(keys, expected);
    for r in records.iter().take(10) {
        let ep = episode(r, &Protocol::default()).unwrap();
        let pred = model.predict(&ep.observed, ep.lights, 5.0, 0.5).unwrap();
        let total: f64 = pred.hypotheses.iter().map(|h| h.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(pred.hypotheses.iter().all(|h| h.weight >= 0.0));
    }
}

#[test]
fn two_branches_give_two_primitives() {
    let (records, map) = scenario(60, 1.0, 0.5, 5);
    let model = train(&records, Some(&map), FeatureSet::Asnsc, &small_train_config()).unwrap();
    assert_eq!(model.num_atoms(), 2);
    assert_eq!(model.unitary.len(), 2);
}

fn one_atom_model(fs: FeatureSet) -> (TrainedModel, Vec<Record>) {
    let (records, map) = scenario(60, 0.9, 0.5, 11);
    let mut cfg = small_train_config();
    cfg.dictionary.k_max = 1;
    let model = train(&records, Some(&map), fs, &cfg).unwrap();
    (model, records)
}

#[test]
fn single_outgoing_transition_has_weight_one() {
    let (model, records) = one_atom_model(FeatureSet::Casnsc3);
    assert_eq!(model.num_atoms(), 1);
    let ep = episode(&records[0], &Protocol::default()).unwrap();
    let pred = model.predict(&ep.observed, ep.lights, 5.0, 0.5).unwrap();
    assert_eq!(pred.hypotheses.len(), 1);
    assert_eq!(pred.hypotheses[0].weight, 1.0);
}

#[test]
fn standard_protocol_rolls_out_ten_steps() {
    let (model, records) = one_atom_model(FeatureSet::Casnsc3);
    let protocol = Protocol::default();
    for r in records.iter().take(10) {
        let ep = episode(r, &protocol).unwrap();
        assert!((ep.observed.duration() - 2.5).abs() < 0.5 + 1e-9);
        let pred = model.predict(&ep.observed, ep.lights, protocol.horizon, protocol.dt).unwrap();
        for h in &pred.hypotheses {
            let r = &h.rollout;
            assert_eq!(r.variances.len(), r.steps());
            if !r.truncated {
                assert_eq!(r.steps(), 10);
            }
            assert!(r.steps() <= 10);
        }
    }
    assert!(model.predict(&records[0].trajectory, LightState::from_t1(true), 5.2, 0.5).is_err());
}

#[test]
fn training_is_deterministic() {
    let (records, map) = scenario(40, 0.9, 0.5, 2);
    let cfg = small_train_config();
    let a = train_all(&records, Some(&map), &[FeatureSet::Asnsc, FeatureSet::Casnsc3], &cfg).unwrap();
    let b = train_all(&records, Some(&map), &[FeatureSet::Asnsc, FeatureSet::Casnsc3], &cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(model_bytes(x), model_bytes(y));
    }
}

#[test]
fn asnsc_ignores_the_lights() {
    let (model, records) = one_atom_model(FeatureSet::Asnsc);
    for r in records.iter().take(8) {
        let ep = episode(r, &Protocol::default()).unwrap();
        let a = model.predict(&ep.observed, ep.lights, 5.0, 0.5).unwrap();
        let b = model.predict(&ep.observed, ep.lights.flipped(), 5.0, 0.5).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn classification_recovers_the_training_label() {
    let (records, map) = scenario(100, 1.0, 0.5, 8);
    let model = train(&records, Some(&map), FeatureSet::Asnsc, &small_train_config()).unwrap();
    assert_eq!(model.num_atoms(), 2);
    // The two atoms are the two branches; find which is which from the data.
    let label_of = |r: &Record| model.classify_initial_atom(&r.trajectory, r.lights.unwrap()).unwrap();
    let straight_atom = label_of(records.iter().find(|r| r.branch == Some(Branch::Straight)).unwrap());
    let expected = |r: &Record| {
        if r.branch == Some(Branch::Straight) {
            straight_atom
        } else {
            1 - straight_atom
        }
    };
    let clean = records.iter().filter(|r| label_of(r) == expected(r)).count();
    assert_eq!(clean, records.len());

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let robust = records
        .iter()
        .filter(|r| {
            let pts: Vec<Sample> = r
                .trajectory
                .points()
                .iter()
                .map(|p| Sample::new(p.t, p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
                .collect();
            let noisy = Trajectory::new(pts).unwrap();
            model.classify_initial_atom(&noisy, r.lights.unwrap()).unwrap() == expected(r)
        })
        .count();
    assert!(robust >= 95, "{robust}/100");
}
