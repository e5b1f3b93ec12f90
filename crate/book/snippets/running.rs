use growmerge::checkpoint::{decode, encode};
use growmerge::runner::{resume_experiment, run_experiment, run_stages, DataSource, RunConfig};

fn main() {
    let mut cfg = RunConfig {
        data: DataSource::Synthetic { classes: 6, per_class: 60, dim: 8, separation: 8.0 },
        seed: 11,
        ..RunConfig::default()
    };
    cfg.scenario.timesteps = 2;
    cfg.pretrain.epochs = 5;
    cfg.grow.epsilon = 0.2;
    cfg.grow.epochs = 3;
    cfg.merge.epochs = 3;
    cfg.merge.sift_j = 5;

    let full = run_experiment(&cfg).unwrap();
    assert_eq!(full.ledger.records.len(), 3);

    let first = run_stages(&cfg, None, Some(1)).unwrap();
    let restored = decode(&encode(&first.checkpoint)).unwrap();
    let resumed = resume_experiment(&cfg, restored).unwrap();
    assert_eq!(resumed.report(&cfg).to_json(), full.report(&cfg).to_json());
}
