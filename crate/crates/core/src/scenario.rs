//! Datasets and timestep streams.
//!
//! A stream is an initial labeled stage `t = 0` followed by `T` unlabeled
//! stages. Four compositions are supported:
//!
//! * **CI**: every later stage brings only classes never seen before.
//! * **DI**: every stage draws more data from the same class set.
//! * **MI**: later stages mix leftover known-class data with new classes,
//!   following a per-block proportion table.
//! * **SMI**: MI where a fraction of every later stage keeps its labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::kernel::{norm, squared_euclidean, Vec64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x: Vec64,
    /// `None` is the unlabeled sentinel.
    pub label: Option<usize>,
    pub split: Split,
    /// `None` lets [`build_stream`] assign the stage.
    pub timestep: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScenarioKind {
    #[default]
    CI,
    DI,
    MI,
    SMI,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Stream composition. Omitted proportion vectors fall back to the
/// defaults described on each field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub timesteps: usize,
    /// If set, the number of distinct training classes must match.
    pub total_classes: Option<usize>,
    /// Fraction of classes per stage (CI, MI, SMI). Default: 0.7 initially,
    /// the rest spread evenly.
    pub class_split: Option<Vec<f64>>,
    /// Fraction of each class's data per stage (DI). Default: even.
    pub data_split: Option<Vec<f64>>,
    /// MI/SMI: `mix_table[b][t]` is the fraction of class block `b`'s data
    /// used at stage `t`. Rows are renormalized to sum to one.
    pub mix_table: Option<Vec<Vec<f64>>>,
    /// SMI: fraction of every later stage that keeps labels.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::CI,
            timesteps: 3,
            total_classes: None,
            class_split: None,
            data_split: None,
            mix_table: None,
            labeled_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn class_proportions(&self) -> Vec<f64> {
        self.class_split.clone().unwrap_or_else(|| {
            let t = self.timesteps;
            if t == 0 {
                return vec![1.0];
            }
            let mut v = vec![0.7];
            v.extend(std::iter::repeat_n(0.3 / t as f64, t));
            v
        })
    }

    pub fn data_proportions(&self) -> Vec<f64> {
        self.data_split
            .clone()
            .unwrap_or_else(|| vec![1.0 / (self.timesteps + 1) as f64; self.timesteps + 1])
    }

    /// Row-normalized mix table. The three-step default follows the CIFAR
    /// recipe (87/7/2/3 for the initial block, 70/20/10, 90/10, 100).
    pub fn mix_proportions(&self) -> Vec<Vec<f64>> {
        let t = self.timesteps;
        let raw = self.mix_table.clone().unwrap_or_else(|| {
            if t == 3 {
                vec![
                    vec![87.0, 7.0, 2.0, 3.0],
                    vec![0.0, 70.0, 20.0, 10.0],
                    vec![0.0, 0.0, 90.0, 10.0],
                    vec![0.0, 0.0, 0.0, 100.0],
                ]
            } else {
                (0..=t)
                    .map(|b| {
                        let (head, tail) = if b == 0 { (0.87, 0.13) } else { (0.7, 0.3) };
                        let later = t - b;
                        (0..=t)
                            .map(|s| match s {
                                s if s < b => 0.0,
                                s if s == b && later == 0 => 1.0,
                                s if s == b => head,
                                _ => tail / later as f64,
                            })
                            .collect()
                    })
                    .collect()
            }
        });
        raw.into_iter()
            .map(|row| {
                let sum: f64 = row.iter().sum();
                row.into_iter().map(|v| v / sum).collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != self.timesteps + 1 {
                return Err(GmError::Scenario(format!("{name} needs {} entries, got {}", self.timesteps + 1, v.len())));
            }
            if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(GmError::Scenario(format!("{name} has negative or non-finite entries")));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(GmError::Scenario(format!("{name} sums to {sum}, expected 1")));
            }
            Ok(())
        };
        match self.kind {
            ScenarioKind::DI => check("data_split", &self.data_proportions())?,
            _ => check("class_split", &self.class_proportions())?,
        }
        if let Some(table) = &self.mix_table {
            if table.len() != self.timesteps + 1 {
                return Err(GmError::Scenario("mix_table needs one row per class block".into()));
            }
            for row in table {
                if row.len() != self.timesteps + 1 || row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(GmError::Scenario("malformed mix_table row".into()));
                }
                if row.iter().sum::<f64>() <= 0.0 {
                    return Err(GmError::Scenario("mix_table row with no data".into()));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(GmError::Scenario(format!("labeled_fraction {} outside [0, 1]", self.labeled_fraction)));
        }
        Ok(())
    }
}

/// One stage of the stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamBatch {
    pub t: usize,
    pub train: Vec<Sample>,
    /// Test samples of every class introduced at or before `t`.
    pub test: Vec<Sample>,
    /// Ground-truth classes first appearing at `t` (empty at `t = 0`).
    pub novel_classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub batches: Vec<StreamBatch>,
    /// Stage at which each ground-truth class first appears.
    pub class_origin: BTreeMap<usize, usize>,
}

impl Stream {
    pub fn initial_classes(&self) -> Vec<usize> {
        self.class_origin.iter().filter(|(_, &t)| t == 0).map(|(c, _)| *c).collect()
    }

    pub fn timesteps(&self) -> usize {
        self.batches.len().saturating_sub(1)
    }
}

/// Gaussian blobs with unit variance around means on a sphere of radius
/// `separation`, pairwise at least `separation` apart. The last fifth of
/// each class (at least one sample) is the test split.
pub fn generate_synthetic(classes: usize, per_class: usize, input_dim: usize, separation: f64, seed: u64) -> Result<Vec<Sample>> {
    let (samples, _) = generate_synthetic_with_means(classes, per_class, input_dim, separation, seed)?;
    Ok(samples)
}

/// [`generate_synthetic`] that also returns the generating means.
pub fn generate_synthetic_with_means(
    classes: usize,
    per_class: usize,
    input_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Vec64>)> {
    if classes < 2 || per_class < 2 || input_dim == 0 || !(separation > 0.0 && separation.is_finite()) {
        return Err(GmError::Config(format!(
            "synthetic data needs classes >= 2, per_class >= 2, dim >= 1, separation > 0 \
             (got {classes}, {per_class}, {input_dim}, {separation})"
        )));
    }
    const MAX_TRIES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sq = separation * separation;
    let mut means: Vec<Vec64> = Vec::with_capacity(classes);
    let mut tries = 0;
    while means.len() < classes {
        if tries == MAX_TRIES {
            return Err(GmError::Rejection { classes, separation, tries });
        }
        tries += 1;
        let dir: Vec64 = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&dir);
        if n < 1e-12 {
            continue;
        }
        let m: Vec64 = dir.iter().map(|v| v * separation / n).collect();
        if means.iter().all(|o| squared_euclidean(o, &m) >= min_sq) {
            means.push(m);
        }
    }
    let n_test = ((per_class as f64 * 0.2).round() as usize).clamp(1, per_class - 1);
    let mut samples = Vec::with_capacity(classes * per_class);
    for (c, m) in means.iter().enumerate() {
        for i in 0..per_class {
            let x: Vec64 = m.iter().map(|mu| mu + rng.sample::<f64, _>(StandardNormal)).collect();
            samples.push(Sample {
                id: (c * per_class + i) as u64,
                x,
                label: Some(c),
                split: if i >= per_class - n_test { Split::Test } else { Split::Train },
                timestep: None,
            });
        }
    }
    Ok((samples, means))
}

/// Reads `id,split,timestep,label,f0,...` rows. A header line is accepted
/// if its first field is `id`. Label and timestep `-1` mean "absent".
/// The feature dimension is fixed by the first row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, None)
}

/// Parses CSV text, optionally enforcing the feature dimension.
pub fn parse_csv(text: &str, dim: Option<usize>) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut dim = dim;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GmError::Csv { line: idx + 1, msg: e.to_string() })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if idx == 0 && record.get(0) == Some("id") {
            continue;
        }
        let err = |msg: String| GmError::Csv { line, msg };
        if record.len() < 5 {
            return Err(err(format!("expected at least 5 fields, found {}", record.len())));
        }
        let id: u64 = record[0].parse().map_err(|_| err(format!("bad id {:?}", &record[0])))?;
        let split = match &record[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(err(format!("split must be train or test, found {other:?}"))),
        };
        let timestep: i64 = record[2].parse().map_err(|_| err(format!("bad timestep {:?}", &record[2])))?;
        let label: i64 = record[3].parse().map_err(|_| err(format!("bad label {:?}", &record[3])))?;
        if timestep < -1 || label < -1 {
            return Err(err("timestep and label must be >= -1".into()));
        }
        let x = record
            .iter()
            .skip(4)
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec64>>()
            .ok_or_else(|| err("feature is not a finite number".into()))?;
        match dim {
            Some(d) if d != x.len() => return Err(err(format!("expected {d} features, found {}", x.len()))),
            None => dim = Some(x.len()),
            _ => {}
        }
        out.push(Sample {
            id,
            x,
            label: (label >= 0).then_some(label as usize),
            split,
            timestep: (timestep >= 0).then_some(timestep as usize),
        });
    }
    Ok(out)
}

pub fn write_csv(samples: &[Sample], mut w: impl Write) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    let mut header = String::from("id,split,timestep,label");
    for i in 0..dim {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(w, "{header}")?;
    for s in samples {
        let t = s.timestep.map_or(-1, |t| t as i64);
        let l = s.label.map_or(-1, |l| l as i64);
        write!(w, "{},{},{},{}", s.id, s.split, t, l)?;
        for v in &s.x {
            // `{:?}` prints the shortest representation that round-trips.
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Splits `n` items by cumulative rounding of `proportions`; the counts
/// always sum to `n`.
fn cumulative_counts(n: usize, proportions: &[f64]) -> Vec<usize> {
    let mut acc = 0.0;
    let mut prev = 0;
    proportions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            acc += p;
            let upto = if i + 1 == proportions.len() { n } else { ((n as f64) * acc).round() as usize };
            let upto = upto.clamp(prev, n);
            let c = upto - prev;
            prev = upto;
            c
        })
        .collect()
}

/// Assigns samples to stages according to `spec`.
///
/// If every training sample already carries a timestep the given stages are
/// kept and class origins are read off the test split's timesteps;
/// otherwise all stages are assigned from the proportions.
pub fn build_stream(samples: &[Sample], spec: &ScenarioSpec) -> Result<Stream> {
    spec.validate()?;
    let train: Vec<&Sample> = samples.iter().filter(|s| s.split == Split::Train).collect();
    let test: Vec<&Sample> = samples.iter().filter(|s| s.split == Split::Test).collect();
    if train.is_empty() {
        return Err(GmError::Scenario("no training samples".into()));
    }
    let preassigned = train.iter().all(|s| s.timestep.is_some());
    let (stage_of, class_origin) = if preassigned {
        preassigned_stages(&train, &test, spec)?
    } else {
        assign_stages(&train, spec)?
    };

    let t_max = spec.timesteps;
    let mut batches: Vec<StreamBatch> = (0..=t_max)
        .map(|t| StreamBatch {
            t,
            train: Vec::new(),
            test: Vec::new(),
            novel_classes: if t == 0 {
                Vec::new()
            } else {
                class_origin.iter().filter(|(_, &o)| o == t).map(|(c, _)| *c).collect()
            },
        })
        .collect();

    let mut ordered: Vec<&Sample> = train.clone();
    ordered.sort_by_key(|s| s.id);
    for s in ordered {
        let t = stage_of[&s.id];
        let mut s = s.clone();
        s.timestep = Some(t);
        batches[t].train.push(s);
    }
    for (t, batch) in batches.iter_mut().enumerate() {
        if t == 0 {
            continue;
        }
        let keep = if spec.kind == ScenarioKind::SMI {
            (spec.labeled_fraction * batch.train.len() as f64 + 1e-9).floor() as usize
        } else {
            0
        };
        for (i, s) in batch.train.iter_mut().enumerate() {
            if i >= keep {
                s.label = None;
            }
        }
    }

    let mut test_sorted: Vec<&Sample> = test;
    test_sorted.sort_by_key(|s| s.id);
    for s in test_sorted {
        let label = s.label.ok_or_else(|| GmError::Scenario(format!("test sample {} has no label", s.id)))?;
        let origin = *class_origin
            .get(&label)
            .ok_or_else(|| GmError::Scenario(format!("test class {label} never appears in training")))?;
        for batch in batches.iter_mut().skip(origin) {
            let mut s = s.clone();
            s.timestep = Some(origin);
            batch.test.push(s);
        }
    }
    Ok(Stream { batches, class_origin })
}

type Assignment = (BTreeMap<u64, usize>, BTreeMap<usize, usize>);

fn preassigned_stages(train: &[&Sample], test: &[&Sample], spec: &ScenarioSpec) -> Result<Assignment> {
    let mut stage_of = BTreeMap::new();
    for s in train {
        let t = s.timestep.expect("checked by caller");
        if t > spec.timesteps {
            return Err(GmError::Scenario(format!("sample {} is at timestep {t} beyond T = {}", s.id, spec.timesteps)));
        }
        if t == 0 && s.label.is_none() {
            return Err(GmError::UnlabeledInitial { id: s.id });
        }
        stage_of.insert(s.id, t);
    }
    let mut origin: BTreeMap<usize, usize> = BTreeMap::new();
    for s in test {
        let (Some(l), Some(t)) = (s.label, s.timestep) else {
            return Err(GmError::Scenario(format!(
                "test sample {} needs a label and a timestep when stages are preassigned",
                s.id
            )));
        };
        let o = origin.entry(l).or_insert(t);
        *o = (*o).min(t);
    }
    for s in train {
        if let Some(l) = s.label {
            let t = s.timestep.expect("checked by caller");
            let o = origin.entry(l).or_insert(t);
            *o = (*o).min(t);
        }
    }
    Ok((stage_of, origin))
}

fn assign_stages(train: &[&Sample], spec: &ScenarioSpec) -> Result<Assignment> {
    let mut by_class: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for s in train {
        let l = s.label.ok_or_else(|| {
            GmError::Scenario(format!("training sample {} is unlabeled; cannot assign its stage", s.id))
        })?;
        by_class.entry(l).or_default().push(s.id);
    }
    let classes: Vec<usize> = by_class.keys().copied().collect();
    if let Some(k) = spec.total_classes {
        if k != classes.len() {
            return Err(GmError::Scenario(format!("expected {k} classes, found {}", classes.len())));
        }
    }
    let stages = spec.timesteps + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
    }

    let mut stage_of = BTreeMap::new();
    let mut origin = BTreeMap::new();
    match spec.kind {
        ScenarioKind::DI => {
            let props = spec.data_proportions();
            for (&c, ids) in &by_class {
                origin.insert(c, 0);
                let counts = cumulative_counts(ids.len(), &props);
                if counts[0] == 0 {
                    return Err(GmError::Scenario(format!("class {c} has no initial-stage data")));
                }
                let mut it = ids.iter();
                for (t, n) in counts.into_iter().enumerate() {
                    for id in it.by_ref().take(n) {
                        stage_of.insert(*id, t);
                    }
                }
            }
        }
        kind => {
            let block_sizes = cumulative_counts(classes.len(), &spec.class_proportions());
            if let Some(t) = block_sizes.iter().position(|&n| n == 0) {
                return Err(GmError::Scenario(format!(
                    "{} classes cannot be split as {:?}: stage {t} gets no class",
                    classes.len(),
                    spec.class_proportions()
                )));
            }
            let table = if kind == ScenarioKind::CI {
                (0..stages).map(|b| (0..stages).map(|t| if t == b { 1.0 } else { 0.0 }).collect()).collect()
            } else {
                spec.mix_proportions()
            };
            let mut cls = classes.iter();
            for (b, size) in block_sizes.into_iter().enumerate() {
                for &c in cls.by_ref().take(size) {
                    let ids = &by_class[&c];
                    let counts = cumulative_counts(ids.len(), &table[b]);
                    let first = counts.iter().position(|&n| n > 0).expect("class has data");
                    origin.insert(c, first);
                    let mut it = ids.iter();
                    for (t, n) in counts.into_iter().enumerate() {
                        for id in it.by_ref().take(n) {
                            stage_of.insert(*id, t);
                        }
                    }
                }
            }
        }
    }
    if !origin.values().any(|&t| t == 0) {
        return Err(GmError::Scenario("no class is present in the initial stage".into()));
    }
    Ok((stage_of, origin))
}

/// Ground-truth classes introduced at or before stage `t`.
pub fn stage_classes(stream: &Stream, t: usize) -> BTreeSet<usize> {
    stream.class_origin.iter().filter(|(_, &o)| o <= t).map(|(c, _)| *c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_examples() {
        let s = parse_csv("7,train,0,3,0.1,0.2\n", None).unwrap();
        assert_eq!(
            s[0],
            Sample { id: 7, x: vec![0.1, 0.2], label: Some(3), split: Split::Train, timestep: Some(0) }
        );
        let s = parse_csv("id,split,timestep,label,f0,f1\n1,test,-1,-1,1,2\n", None).unwrap();
        assert_eq!(s[0].label, None);
        assert_eq!(s[0].timestep, None);
        let e = parse_csv("1,train,0,0,1,2\n2,train,0,0,1,2,3\n", None).unwrap_err();
        assert!(matches!(e, GmError::Csv { line: 2, .. }), "{e}");
        let e = parse_csv("1,train,0,0,1,2,3\n", Some(2)).unwrap_err();
        assert!(matches!(e, GmError::Csv { line: 1, .. }));
        assert!(parse_csv("1,valid,0,0,1\n", None).is_err());
        assert!(parse_csv("1,train,0,0,nan\n", None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = generate_synthetic(3, 5, 4, 3.0, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        assert_eq!(parse_csv(std::str::from_utf8(&buf).unwrap(), Some(4)).unwrap(), s);
    }

    #[test]
    fn synthetic_boundaries() {
        let s = generate_synthetic(2, 2, 4, 1.0, 0).unwrap();
        for c in 0..2 {
            assert_eq!(s.iter().filter(|x| x.label == Some(c) && x.split == Split::Test).count(), 1);
        }
        assert!(matches!(generate_synthetic(7, 10, 1, 10.0, 0), Err(GmError::Rejection { .. })));
        assert!(generate_synthetic(1, 10, 4, 1.0, 0).is_err());
    }

    #[test]
    fn cumulative_counts_sum() {
        assert_eq!(cumulative_counts(10, &[0.7, 0.1, 0.1, 0.1]), vec![7, 1, 1, 1]);
        assert_eq!(cumulative_counts(200, &[0.25; 4]), vec![50; 4]);
        assert_eq!(cumulative_counts(7, &[0.5, 0.5]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn ci_assigns_one_class_per_step() {
        let s = generate_synthetic(10, 10, 8, 4.0, 2).unwrap();
        let stream = build_stream(&s, &ScenarioSpec::default()).unwrap();
        assert_eq!(stream.initial_classes(), (0..7).collect::<Vec<_>>());
        for t in 1..=3 {
            assert_eq!(stream.batches[t].novel_classes, vec![6 + t]);
            assert!(stream.batches[t].train.iter().all(|s| s.label.is_none()));
        }
    }

    #[test]
    fn ci_rejects_too_few_classes() {
        let s = generate_synthetic(3, 10, 8, 4.0, 2).unwrap();
        assert!(matches!(build_stream(&s, &ScenarioSpec::default()), Err(GmError::Scenario(_))));
    }

    #[test]
    fn di_keeps_class_set_and_quarters_data() {
        let s = generate_synthetic(4, 25, 8, 4.0, 3).unwrap();
        let spec = ScenarioSpec { kind: ScenarioKind::DI, ..Default::default() };
        let stream = build_stream(&s, &spec).unwrap();
        for b in &stream.batches {
            assert_eq!(b.train.len(), 4 * 5);
            assert!(b.novel_classes.is_empty());
        }
    }

    #[test]
    fn smi_keeps_labeled_prefix_by_id() {
        let s = generate_synthetic(10, 50, 8, 4.0, 4).unwrap();
        let spec = ScenarioSpec { kind: ScenarioKind::SMI, labeled_fraction: 0.2, ..Default::default() };
        let stream = build_stream(&s, &spec).unwrap();
        for b in &stream.batches[1..] {
            let n = b.train.len();
            let labeled: Vec<_> = b.train.iter().filter(|s| s.label.is_some()).collect();
            assert_eq!(labeled.len(), (0.2 * n as f64).floor() as usize);
            let max_labeled = labeled.iter().map(|s| s.id).max().unwrap();
            assert!(b.train.iter().filter(|s| s.label.is_none()).all(|s| s.id > max_labeled));
        }
    }

    #[test]
    fn mi_default_table_renormalizes() {
        let spec = ScenarioSpec { kind: ScenarioKind::MI, ..Default::default() };
        let t = spec.mix_proportions();
        assert!((t[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((t[0][0] - 87.0 / 99.0).abs() < 1e-12);
        let spec5 = ScenarioSpec { kind: ScenarioKind::MI, timesteps: 5, ..Default::default() };
        for (b, row) in spec5.mix_proportions().iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[..b].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn preassigned_stages_are_kept() {
        let text = "0,train,0,0,1\n1,train,0,1,2\n2,train,1,-1,3\n3,test,0,0,1\n4,test,0,1,2\n5,test,1,2,3\n";
        let s = parse_csv(text, None).unwrap();
        let spec = ScenarioSpec { timesteps: 1, ..Default::default() };
        let stream = build_stream(&s, &spec).unwrap();
        assert_eq!(stream.batches[1].train.len(), 1);
        assert_eq!(stream.batches[1].novel_classes, vec![2]);
        assert_eq!(stream.batches[1].test.len(), 3);
    }
}
