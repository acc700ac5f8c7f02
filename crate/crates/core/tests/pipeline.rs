//! End-to-end runs of the trainers and the command line at toy budgets.

use std::fs;
use std::path::Path;

use coordlab::checkpoint::{params_digest, Checkpoint};
use coordlab::cli::run_command;
use coordlab::config::RunConfig;
use coordlab::evalkit::load_reports;
use coordlab::holdout::HoldoutSet;
use coordlab::pipeline::{self, RunDir};

fn tiny(algo: &str, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.run.algo = algo.into();
    c.run.seed = seed;
    c.run.deterministic = true;
    c.world.width = 7;
    c.world.height = 7;
    c.world.train_layouts = 4;
    c.ppo.envs_per_update = 2;
    c.ppo.ticks_per_update = 32;
    c.stage1.updates = 4;
    c.stage2.updates = 3;
    c.stage1.checkpoint_every = 2;
    c.discriminator.eval_every = 2;
    c.discriminator.eval_episodes = 2;
    c.eval.layouts = 2;
    c.eval.episodes = 2;
    c.population.size = 2;
    c
}

fn csv_rows(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn bdp_stage_artifacts_and_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny("bdp", 3);
    let summary = pipeline::run_training(&cfg, tmp.path(), false).unwrap();
    assert_eq!(summary.stages.len(), 2);
    for s in &summary.stages {
        assert_eq!(s.ticks, s.updates * 2 * 32);
    }
    let s1 = tmp.path().join("checkpoints/stage1");
    for label in ["start", "middle", "end", "final"] {
        assert!(s1.join(format!("policy0_{label}.ckpt")).exists(), "{label}");
    }
    assert!(s1.join("disc_final.ckpt").exists());
    let disc_rows = csv_rows(&tmp.path().join("logs/stage1_disc.csv"));
    assert_eq!(disc_rows.len(), 1 + 4);
    // Stage-2 logs carry no diversity reward.
    for row in csv_rows(&tmp.path().join("logs/stage2.csv")).iter().skip(1) {
        assert_eq!(row.rsplit(',').next().unwrap(), "0.000000");
    }
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.toml") && manifest.contains("checkpoints/stage2/policy0_final.ckpt"));
    assert_eq!(RunConfig::load(&tmp.path().join("config.toml")).unwrap(), cfg);
}

#[test]
fn stage_two_leaves_partners_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny("bdp", 4);
    cfg.stage2.updates = 0;
    let run = RunDir::open(tmp.path()).unwrap();
    let s1 = pipeline::train_stage1(&cfg, &run, false).unwrap();
    let before: Vec<String> = s1.policies.iter().map(|p| params_digest(&p.data)).collect();
    cfg.stage2.updates = 3;
    let s2 = pipeline::train_stage2(&cfg, &run, &s1, false).unwrap();
    assert_eq!(s2.policies.len(), 1);
    assert_eq!(s2.policies[0].shape.latent_dim, 0);
    let after: Vec<String> = s1.policies.iter().map(|p| params_digest(&p.data)).collect();
    assert_eq!(before, after);
    let on_disk = Checkpoint::load(&tmp.path().join("checkpoints/stage1/policy0_final.ckpt")).unwrap();
    assert_eq!(params_digest(&on_disk.params), before[0]);
}

#[test]
fn self_play_trains_no_discriminator() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny("sp", 5);
    cfg.stage2.updates = 0;
    pipeline::run_training(&cfg, tmp.path(), false).unwrap();
    assert!(!tmp.path().join("logs/stage1_disc.csv").exists());
    assert!(!tmp.path().join("checkpoints/stage1/disc_final.ckpt").exists());
    assert!(tmp.path().join("checkpoints/stage1/policy1_final.ckpt").exists());
}

#[test]
fn fcp_pool_has_three_checkpoints_per_member() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny("fcp", 6);
    cfg.population.size = 4;
    cfg.stage2.updates = 0;
    let run = RunDir::open(tmp.path()).unwrap();
    let s1 = pipeline::train_stage1(&cfg, &run, false).unwrap();
    let (pool, actors) = pipeline::stage2_partners(&cfg, &run, &s1).unwrap();
    assert_eq!((pool.len(), actors.len()), (12, 12));
    fs::remove_file(tmp.path().join("checkpoints/stage1/policy2_middle.ckpt")).unwrap();
    assert!(pipeline::stage2_partners(&cfg, &run, &s1).is_err());
}

#[test]
fn missing_stage_one_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny("pbt", 7);
    let run = RunDir::open(tmp.path()).unwrap();
    let (_, shapes, disc) = pipeline::stage1_shapes(&cfg, 40).unwrap();
    assert!(pipeline::load_stage(&run, "stage1", &shapes, disc).is_err());
}

#[test]
fn resume_appends_and_finishes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny("gtcoord", 8);
    cfg.stage1.updates = 2;
    pipeline::run_training(&cfg, tmp.path(), false).unwrap();
    let rows = csv_rows(&tmp.path().join("logs/gtcoord.csv"));
    assert_eq!(rows.len(), 3);
    // Resuming a completed stage reloads it without training again.
    pipeline::run_training(&cfg, tmp.path(), true).unwrap();
    assert_eq!(csv_rows(&tmp.path().join("logs/gtcoord.csv")), rows);
    // A different configuration is refused.
    cfg.stage1.updates = 5;
    assert!(pipeline::run_training(&cfg, tmp.path(), true).is_err());
}

#[test]
fn interrupted_run_resumes_from_latest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny("solo", 9);
    cfg.stage1.updates = 4;
    pipeline::run_training(&cfg, tmp.path(), false).unwrap();
    // Simulate an interruption after the update-2 checkpoint.
    let dir = tmp.path().join("checkpoints/solo");
    fs::remove_file(dir.join("complete.json")).unwrap();
    for label in ["end", "final"] {
        fs::remove_file(dir.join(format!("policy0_{label}.ckpt"))).unwrap();
    }
    let log = tmp.path().join("logs/solo.csv");
    let rows = csv_rows(&log);
    fs::write(&log, rows[..3].join("\n") + "\n").unwrap();
    let summary = pipeline::run_training(&cfg, tmp.path(), true).unwrap();
    assert_eq!(summary.stages[0].updates, 4);
    let resumed = csv_rows(&log);
    assert_eq!(resumed.len(), 5);
    assert_eq!(resumed[..3], rows[..3]);
    assert!(resumed[3].starts_with("3,"));
}

#[test]
fn oracle_variant_uses_predicate_observations() {
    let cfg = tiny("gtcoord_state", 1);
    assert!(cfg.world_config().oracle_state);
    let plain = pipeline::train_pool(&tiny("gtcoord", 1)).unwrap();
    let oracle = pipeline::train_pool(&cfg).unwrap();
    assert!(oracle[0].obs_dim() > plain[0].obs_dim());
}

#[test]
fn command_line_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("tiny.toml");
    let mut cfg = tiny("pbt", 21);
    cfg.stage1.updates = 2;
    cfg.stage2.updates = 2;
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let run = tmp.path().join("run");
    let holdouts = tmp.path().join("holdouts");

    assert_eq!(run_command(["coordlab", "train", "--config", &s(&cfg_path), "--out", &s(&run)]), 0);
    assert_eq!(
        run_command(["coordlab", "build-holdouts", "--config", &s(&cfg_path), "--seeds", "31,32", "--exclude", "21", "--out", &s(&holdouts)]),
        0
    );
    let reg = holdouts.join("holdouts.json");
    let set = HoldoutSet::load(&reg).unwrap();
    assert_eq!(set.agents.len(), 3 + 4);
    assert_eq!(run_command(["coordlab", "eval-zsc", "--coord", &s(&run), "--holdouts", &s(&reg), "--episodes", "2"]), 0);
    assert_eq!(run_command(["coordlab", "eval-trainpop", "--coord", &s(&run), "--episodes", "2"]), 0);
    assert_eq!(run_command(["coordlab", "analyze-subgoals", "--coord", &s(&run), "--holdouts", &s(&reg), "--episodes", "2"]), 0);
    let zsc = load_reports(&run.join("eval_zsc/report.json")).unwrap();
    assert_eq!(zsc[0].zsc.len(), 7);
    assert!(run.join("subgoals/subgoals.svg").exists());

    let out = tmp.path().join("report");
    assert_eq!(run_command(["coordlab", "report", "--runs", &s(&run), "--out", &s(&out)]), 0);
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let merged = load_reports(&out.join("report.json")).unwrap();
    assert_eq!((merged[0].train_pop.len(), merged[0].zsc.len()), (2, 7));

    let log = tmp.path().join("ep.log");
    assert_eq!(run_command(["coordlab", "replay", "--run", &s(&run), "--episode-log", &s(&log), "--quiet"]), 0);
    assert!(fs::read_to_string(&log).unwrap().starts_with("# replay task=tidy_house"));
    assert_eq!(run_command(["coordlab", "replay", "--episode-log", &s(&log), "--config", &s(&cfg_path), "--quiet"]), 0);

    // Holdout seeds overlapping the evaluated run are refused.
    assert_eq!(
        run_command(["coordlab", "build-holdouts", "--config", &s(&cfg_path), "--seeds", "21", "--exclude", "21", "--out", &s(&holdouts)]),
        1
    );
    assert_eq!(run_command(["coordlab", "eval-zsc", "--holdouts", &s(&reg)]), 1);
    assert_eq!(run_command(["coordlab", "config", "--check", &s(&cfg_path)]), 0);
}

#[test]
fn output_root_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    std::env::set_var("COORDLAB_OUT", tmp.path());
    let code = run_command([
        "coordlab", "train", "--algo", "solo", "--seed", "2", "--set", "stage1.updates=1", "--set", "ppo.envs_per_update=1",
        "--set", "ppo.ticks_per_update=16",
    ]);
    std::env::remove_var("COORDLAB_OUT");
    assert_eq!(code, 0);
    assert!(tmp.path().join("solo_tidy_house_seed2/checkpoints/solo/policy0_final.ckpt").exists());
}
