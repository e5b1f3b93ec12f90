use growmerge::scenario::{build_stream, generate_synthetic, ScenarioKind, ScenarioSpec};

fn main() {
    let samples = generate_synthetic(10, 50, 16, 8.0, 7).unwrap();
    let spec = ScenarioSpec { kind: ScenarioKind::CI, timesteps: 3, seed: 7, ..ScenarioSpec::default() };
    let stream = build_stream(&samples, &spec).unwrap();

    assert_eq!(stream.initial_classes().len(), 7);
    for batch in &stream.batches[1..] {
        // one new class per later stage, and no labels in the training data
        assert_eq!(batch.novel_classes.len(), 1);
        assert!(batch.train.iter().all(|s| s.label.is_none()));
    }
    let last = stream.batches.last().unwrap();
    assert_eq!(last.test.len(), 10 * 10);
}
