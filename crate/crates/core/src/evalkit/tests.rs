use proptest::prelude::*;

use super::*;
use crate::approximator::PolicyShape;
use crate::world::{create_env, Task, WorldConfig, NUM_ACTIONS};

fn pool(task: Task, n: u64, cfg: &WorldConfig) -> Vec<Environment> {
    (0..n).map(|s| create_env(task, 100 + s, cfg).unwrap()).collect()
}

fn record(id: &str, group: Group, successes: usize, episodes: usize, gain: Option<f64>) -> PartnerRecord {
    PartnerRecord {
        partner: id.into(),
        group,
        episodes,
        successes,
        success_rate: successes as f64 / episodes as f64,
        mean_steps_success: None,
        collision_rate: 0.0,
        coord_event_rates: vec![0.25; NUM_EVENT_KINDS],
        partner_event_rates: vec![0.0; NUM_EVENT_KINDS],
        solo_mean_steps: None,
        efficiency_gain: gain,
    }
}

#[test]
fn efficiency_gain_worked_examples() {
    assert_eq!(efficiency_gain(100.0, 80.0), Some(20.0));
    assert_eq!(efficiency_gain(100.0, 100.0), Some(0.0));
    assert_eq!(efficiency_gain(100.0, 113.0), Some(-13.0));
    assert_eq!(efficiency_gain(0.0, 10.0), None);
    assert_eq!(efficiency_gain(f64::NAN, 10.0), None);
}

proptest! {
    #[test]
    fn efficiency_gain_antisymmetric_and_scale_invariant(s in 1.0f64..500.0, d in 0.0f64..0.9, k in 0.1f64..10.0) {
        let up = efficiency_gain(s, s * (1.0 + d)).unwrap();
        let down = efficiency_gain(s, s * (1.0 - d)).unwrap();
        prop_assert!((up + down).abs() < 1e-9);
        let scaled = efficiency_gain(k * s, k * s * (1.0 + d)).unwrap();
        prop_assert!((scaled - up).abs() < 1e-9);
    }

    #[test]
    fn aggregate_is_episode_weighted(rows in prop::collection::vec((0usize..50, 1usize..50), 1..8)) {
        let recs: Vec<_> = rows
            .iter()
            .enumerate()
            .map(|(i, &(s, extra))| record(&format!("p{i}"), Group::Scripted, s, s + extra, None))
            .collect();
        let num: f64 = recs.iter().map(|r| r.success_rate * r.episodes as f64).sum();
        let den: f64 = recs.iter().map(|r| r.episodes as f64).sum();
        let got = weighted_success(&recs).unwrap();
        prop_assert!((got - num / den).abs() < 1e-12);
    }
}

#[test]
fn aggregates_split_scripted_and_learned() {
    let zsc = vec![
        record("s0", Group::Scripted, 10, 20, Some(10.0)),
        record("s1", Group::Scripted, 0, 10, None),
        record("l0", Group::Learned, 30, 30, Some(-4.0)),
    ];
    let a = aggregate(&[], &zsc);
    assert_eq!(a.train_pop_success, None);
    assert_eq!(a.zsc_success, Some(40.0 / 60.0));
    assert_eq!(a.zsc_scripted_success, Some(10.0 / 30.0));
    assert_eq!(a.zsc_learned_success, Some(1.0));
    assert_eq!(a.efficiency_gain, Some(3.0));
}

#[test]
fn idle_partner_leaves_every_event_to_the_worker() {
    let envs = pool(Task::TidyHouse, 4, &WorldConfig::small());
    let eps = play_pairing([ActorRef::Scripted(ScriptKind::FullTask), ActorRef::Scripted(ScriptKind::Noop)], &envs, 12, 5).unwrap();
    for e in &eps {
        assert!(e.events[1].iter().all(|&x| !x));
        if e.success {
            assert!(e.events[0][EventKind::PlacedObject(0).index()] && e.events[0][EventKind::PlacedObject(1).index()]);
        }
    }
    assert!(eps.iter().any(|e| e.success));
}

#[test]
fn complementary_scripts_split_the_work() {
    let envs = pool(Task::TidyHouse, 4, &WorldConfig::small());
    let eps = play_pairing([ActorRef::Scripted(ScriptKind::Object(1)), ActorRef::Scripted(ScriptKind::Object(0))], &envs, 10, 9)
        .unwrap();
    for e in eps.iter().filter(|e| e.success) {
        assert!(e.events[0][EventKind::PickedObject(1).index()]);
        assert!(!e.events[0][EventKind::PickedObject(0).index()]);
        assert!(e.events[1][EventKind::PickedObject(0).index()]);
    }
}

#[test]
fn evaluation_is_deterministic_and_rates_are_proportions() {
    let cfg = WorldConfig::small();
    let envs = pool(Task::TidyHouse, 3, &cfg);
    let coord = PolicyParams::init(PolicyShape::new(envs[0].obs_dim(), 0, NUM_ACTIONS), &mut derived_rng(1, &[1]));
    let partner = Partner { id: "object0".into(), group: Group::Scripted, actor: PartnerActor::Scripted(ScriptKind::Object(0)) };
    let a = evaluate_pairing(&coord, &partner, &envs, 6, 3).unwrap();
    let b = evaluate_pairing(&coord, &partner, &envs, 6, 3).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.success_rate) && (0.0..=1.0).contains(&a.collision_rate));
    assert!(a.coord_event_rates.iter().chain(&a.partner_event_rates).all(|r| (0.0..=1.0).contains(r)));
    let m = SubgoalMatrix::from_records(&[a]);
    assert_eq!((m.rows.len(), m.cols.len()), (NUM_EVENT_KINDS, 1));
}

#[test]
fn observation_mismatch_is_rejected() {
    let oracle = WorldConfig { oracle_state: true, ..WorldConfig::small() };
    let envs = pool(Task::TidyHouse, 1, &oracle);
    let standard = create_env(Task::TidyHouse, 1, &WorldConfig::small()).unwrap();
    let coord = PolicyParams::init(PolicyShape::new(standard.obs_dim(), 0, NUM_ACTIONS), &mut derived_rng(1, &[2]));
    let partner = Partner { id: "noop".into(), group: Group::Scripted, actor: PartnerActor::Scripted(ScriptKind::Noop) };
    assert!(matches!(evaluate_pairing(&coord, &partner, &envs, 2, 0), Err(Error::Incompatible(_))));
}

#[test]
fn total_variation_bounds() {
    assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    let idle = EventProfile { episodes: 4, counts: vec![0; NUM_EVENT_KINDS], idle_episodes: 4 };
    let busy = EventProfile { episodes: 4, counts: vec![4, 0, 4, 0, 0, 0], idle_episodes: 0 };
    assert_eq!(idle.distribution()[NUM_EVENT_KINDS], 1.0);
    assert_eq!(max_pairwise_tv(&[idle.clone(), busy.clone()]), 1.0);
    assert_eq!(max_pairwise_tv(&[busy.clone(), busy]), 0.0);
    assert_eq!(idle.rates(), vec![0.0; NUM_EVENT_KINDS]);
}

#[test]
fn report_files_are_reproducible_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let zsc = vec![record("scripted_noop", Group::Scripted, 5, 10, None), record("learned_s1_p0", Group::Learned, 8, 10, Some(12.5))];
    let reports = vec![EvalReport::new("bdp", "tidy_house", 7, 10, vec![record("m0", Group::TrainPop, 9, 10, None)], zsc)];
    let files = emit_report(&reports, tmp.path()).unwrap();
    assert_eq!(files.len(), 3);
    let first = std::fs::read(tmp.path().join("report.json")).unwrap();
    emit_report(&reports, tmp.path()).unwrap();
    assert_eq!(std::fs::read(tmp.path().join("report.json")).unwrap(), first);
    let csv = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(csv.starts_with(SUMMARY_HEADER));
    assert!(SUMMARY_HEADER.contains("zsc_scripted_success") && SUMMARY_HEADER.contains("zsc_learned_success"));
    assert_eq!(csv.lines().nth(1).unwrap(), "bdp,tidy_house,7,10,0.9000,0.6500,0.5000,0.8000,12.5000");
    assert_eq!(load_reports(&tmp.path().join("report.json")).unwrap(), reports);
    let svg = std::fs::read_to_string(tmp.path().join("heatmaps/bdp_tidy_house_seed7.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("pick:0"));
}

#[test]
fn empty_partner_list_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let reports = vec![EvalReport::new("sp", "tidy_house", 1, 10, vec![], vec![])];
    assert!(emit_report(&reports, tmp.path()).is_err());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
    let envs = pool(Task::TidyHouse, 1, &WorldConfig::small());
    let coord = PolicyParams::init(PolicyShape::new(envs[0].obs_dim(), 0, NUM_ACTIONS), &mut derived_rng(1, &[3]));
    assert!(evaluate_partners(&coord, &[], &envs, 1, 0).is_err());
}
