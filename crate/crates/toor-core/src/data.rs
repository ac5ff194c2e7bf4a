//! Synthetic class-mismatched datasets, CSV ingestion, and the
//! labeled/unlabeled/test splits parameterized by the OOD proportion.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::standard_normal;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Ground-truth provenance of an example. Metadata for evaluation only;
/// training code never branches on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Id,
    NearOod,
    FarOod,
    /// Reserved for externally ingested datasets that pre-assign test rows.
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Id => "ID",
            Role::NearOod => "nearOOD",
            Role::FarOod => "farOOD",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "ID" => Some(Role::Id),
            "nearOOD" => Some(Role::NearOod),
            "farOOD" => Some(Role::FarOod),
            "test" => Some(Role::Test),
            _ => None,
        }
    }

    pub fn is_ood(self) -> bool {
        matches!(self, Role::NearOod | Role::FarOod)
    }
}

/// One data point: features, optional class label, provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub role: Role,
}

/// One isotropic Gaussian component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: f64,
    pub role: Role,
    pub count: usize,
    /// Class index for ID components; `None` for OOD components.
    pub label: Option<usize>,
}

/// Specification of a synthetic mixture dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: Vec<Component>,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn id_class_count(&self) -> usize {
        self.components.iter().filter(|c| c.role == Role::Id).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id_class_count() < 2 {
            return Err(Error::Config("need at least 2 ID classes".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.count < 1 {
                return Err(Error::Config(format!("component {i} has zero samples")));
            }
            if c.mean.len() != self.dim {
                return Err(Error::Config(format!(
                    "component {i} mean has dim {}, spec says {}",
                    c.mean.len(),
                    self.dim
                )));
            }
            if c.role == Role::Id && c.label.is_none() {
                return Err(Error::Config(format!("ID component {i} has no label")));
            }
        }
        Ok(())
    }
}

/// Draw the mixture. Deterministic in the spec seed.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Mixture);
    let mut out = Vec::with_capacity(spec.components.iter().map(|c| c.count).sum());
    for comp in &spec.components {
        for _ in 0..comp.count {
            let features = comp
                .mean
                .iter()
                .map(|m| m + comp.std * standard_normal(&mut rng))
                .collect();
            out.push(Example {
                features,
                label: comp.label,
                role: comp.role,
            });
        }
    }
    Ok(out)
}

/// How to carve a dataset into labeled / unlabeled / test pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_per_class: usize,
    pub unlabeled_size: usize,
    /// Fraction of the unlabeled pool drawn from OOD-role examples.
    pub zeta: f64,
    /// Near-OOD share of the OOD portion.
    pub near_fraction: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::Config(format!("zeta must be in [0,1], got {}", self.zeta)));
        }
        if !(0.0..=1.0).contains(&self.near_fraction) {
            return Err(Error::Config(format!(
                "near fraction must be in [0,1], got {}",
                self.near_fraction
            )));
        }
        if self.labeled_per_class == 0 {
            return Err(Error::Config("need at least one label per class".into()));
        }
        Ok(())
    }
}

/// The trainer-visible splits plus the evaluation-only truth table.
///
/// Unlabeled examples carry features only; their labels are stripped here so
/// nothing downstream can read them.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub labeled: Vec<(Vec<f64>, usize)>,
    pub unlabeled: Vec<Vec<f64>>,
    /// Ground-truth provenance of each unlabeled example, index-aligned.
    pub unlabeled_truth: Vec<Role>,
    pub test: Vec<(Vec<f64>, usize)>,
    pub classes: usize,
    pub dim: usize,
}

fn take<'a>(
    pool: &mut Vec<&'a Example>,
    n: usize,
    what: &str,
) -> Result<Vec<&'a Example>> {
    if pool.len() < n {
        return Err(Error::Config(format!(
            "not enough {what}: need {n}, have {}",
            pool.len()
        )));
    }
    Ok(pool.split_off(pool.len() - n))
}

/// Build disjoint labeled / unlabeled / test splits.
///
/// The unlabeled pool holds `round((1-zeta)*u)` ID examples with labels
/// stripped and `round(zeta*u)` OOD examples, the latter split near:far by
/// `near_fraction`. Labeled and test sets draw only from ID classes,
/// balanced per class. Examples with role `test` (external datasets) are
/// reserved for the test set before any drawing happens.
pub fn build_mismatch_split(dataset: &[Example], split: &SplitSpec) -> Result<Splits> {
    split.validate()?;
    let dim = dataset
        .first()
        .map(|e| e.features.len())
        .ok_or_else(|| Error::Config("empty dataset".into()))?;
    let classes = dataset
        .iter()
        .filter(|e| e.role == Role::Id || e.role == Role::Test)
        .filter_map(|e| e.label)
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::Config("dataset has no labeled ID examples".into()))?;

    let mut rng = stream(split.seed, Stream::Split);

    let mut by_class: Vec<Vec<&Example>> = vec![Vec::new(); classes];
    let mut near: Vec<&Example> = Vec::new();
    let mut far: Vec<&Example> = Vec::new();
    let mut pinned_test: Vec<&Example> = Vec::new();
    for e in dataset {
        match e.role {
            Role::Id => {
                let label = e
                    .label
                    .ok_or_else(|| Error::Config("ID example without label".into()))?;
                by_class[label].push(e);
            }
            Role::NearOod => near.push(e),
            Role::FarOod => far.push(e),
            Role::Test => pinned_test.push(e),
        }
    }
    for class_pool in by_class.iter_mut() {
        class_pool.shuffle(&mut rng);
    }
    near.shuffle(&mut rng);
    far.shuffle(&mut rng);

    // Labeled then test per class, then the unlabeled ID remainder globally.
    let mut labeled = Vec::new();
    let mut test: Vec<(Vec<f64>, usize)> = pinned_test
        .iter()
        .map(|e| {
            let label = e
                .label
                .ok_or_else(|| Error::Config("test example without label".into()))?;
            Ok((e.features.clone(), label))
        })
        .collect::<Result<_>>()?;
    let mut id_remainder: Vec<&Example> = Vec::new();
    for (class, pool) in by_class.iter_mut().enumerate() {
        for e in take(pool, split.labeled_per_class, &format!("ID class {class} samples"))? {
            labeled.push((e.features.clone(), class));
        }
        let need_test = split.test_per_class.saturating_sub(
            pinned_test.iter().filter(|e| e.label == Some(class)).count(),
        );
        for e in take(pool, need_test, &format!("ID class {class} test samples"))? {
            test.push((e.features.clone(), class));
        }
        id_remainder.extend(pool.iter().copied());
    }
    id_remainder.shuffle(&mut rng);

    let ood_count = (split.zeta * split.unlabeled_size as f64).round() as usize;
    let id_count = split.unlabeled_size - ood_count;
    let near_count = (split.near_fraction * ood_count as f64).round() as usize;
    let far_count = ood_count - near_count;

    let mut unlabeled_refs = take(&mut id_remainder, id_count, "unlabeled ID samples")?;
    unlabeled_refs.extend(take(&mut near, near_count, "near-OOD samples")?);
    unlabeled_refs.extend(take(&mut far, far_count, "far-OOD samples")?);
    unlabeled_refs.shuffle(&mut rng);

    let unlabeled: Vec<Vec<f64>> = unlabeled_refs.iter().map(|e| e.features.clone()).collect();
    let unlabeled_truth: Vec<Role> = unlabeled_refs.iter().map(|e| e.role).collect();

    Ok(Splits {
        labeled,
        unlabeled,
        unlabeled_truth,
        test,
        classes,
        dim,
    })
}

// ---------------------------------------------------------------------------
// Reference benchmark
// ---------------------------------------------------------------------------

/// The `gauss6+4` reference benchmark: six ID classes on a radius-3 circle,
/// two near-OOD components at the same radius between adjacent ID means,
/// and two far-OOD components at radius 12, all with std 0.45.
pub fn gauss6_4_spec(seed: u64) -> MixtureSpec {
    let std = 0.45;
    let mut components = Vec::new();
    let at = |radius: f64, degrees: f64| -> Vec<f64> {
        let rad = degrees.to_radians();
        vec![radius * rad.cos(), radius * rad.sin()]
    };
    for class in 0..6 {
        components.push(Component {
            mean: at(3.0, 60.0 * class as f64),
            std,
            role: Role::Id,
            count: 500,
            label: Some(class),
        });
    }
    // Near-OOD sits between two adjacent ID means, biased toward one of
    // them the way a related-but-unseen class would be.
    for &angle in &[20.0, 200.0] {
        components.push(Component {
            mean: at(3.0, angle),
            std,
            role: Role::NearOod,
            count: 500,
            label: None,
        });
    }
    // Far-OOD is far out along directions ambiguous between two classes.
    for &angle in &[90.0, 270.0] {
        components.push(Component {
            mean: at(12.0, angle),
            std,
            role: Role::FarOod,
            count: 500,
            label: None,
        });
    }
    MixtureSpec {
        dim: 2,
        components,
        seed,
    }
}

/// Reference split sizes for `gauss6+4`: 10 labels per class, an unlabeled
/// pool of 2000, and 100 test examples per class.
pub fn gauss6_4_split(zeta: f64, seed: u64) -> SplitSpec {
    SplitSpec {
        labeled_per_class: 10,
        unlabeled_size: 2000,
        zeta,
        near_fraction: 0.5,
        test_per_class: 100,
        seed,
    }
}

// ---------------------------------------------------------------------------
// CSV schema: f0,...,f{d-1},label,role
// ---------------------------------------------------------------------------

/// Write a dataset using the schema the loader accepts.
pub fn dump_csv(dataset: &[Example], dim: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    let header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    writeln!(w, "{},label,role", header.join(",")).map_err(io_err)?;
    for e in dataset {
        let feats: Vec<String> = e.features.iter().map(|v| format!("{v}")).collect();
        let label = e.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", feats.join(","), label, e.role.as_str()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Load a dataset CSV, reporting parse failures with line numbers.
/// Round-trips with [`dump_csv`].
pub fn load_csv(path: &Path) -> Result<(usize, Vec<Example>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header".into(),
        })?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "role" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "header must be f0,...,f{d-1},label,role".into(),
        });
    }
    let dim = cols.len() - 2;
    for (i, col) in cols[..dim].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("feature column {i} is named '{col}', expected 'f{i}'"),
            });
        }
    }

    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(parse_err(format!(
                "expected {} fields, got {}",
                dim + 2,
                fields.len()
            )));
        }
        let features = fields[..dim]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(format!("non-numeric feature '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = if fields[dim].is_empty() {
            None
        } else {
            Some(
                fields[dim]
                    .parse::<usize>()
                    .map_err(|_| parse_err(format!("bad label '{}'", fields[dim])))?,
            )
        };
        let role = Role::parse(fields[dim + 1])
            .ok_or_else(|| parse_err(format!("bad role '{}'", fields[dim + 1])))?;
        out.push(Example {
            features,
            label,
            role,
        });
    }
    Ok((dim, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> MixtureSpec {
        MixtureSpec {
            dim: 2,
            components: vec![
                Component {
                    mean: vec![0.0, 0.0],
                    std: 1.0,
                    role: Role::Id,
                    count: 10,
                    label: Some(0),
                },
                Component {
                    mean: vec![5.0, 0.0],
                    std: 1.0,
                    role: Role::Id,
                    count: 10,
                    label: Some(1),
                },
            ],
            seed,
        }
    }

    #[test]
    fn counts_are_bookkept() {
        let data = generate_mixture(&small_spec(1)).unwrap();
        assert_eq!(data.len(), 20);
        assert_eq!(data.iter().filter(|e| e.label == Some(0)).count(), 10);
        assert_eq!(data.iter().filter(|e| e.label == Some(1)).count(), 10);
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_mixture(&small_spec(9)).unwrap();
        let b = generate_mixture(&small_spec(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_std_collapses_to_mean() {
        let mut spec = small_spec(2);
        spec.components[0].std = 0.0;
        let data = generate_mixture(&spec).unwrap();
        assert!(data[..10].iter().all(|e| e.features == vec![0.0, 0.0]));
    }

    #[test]
    fn gauss6_4_split_composition() {
        let data = generate_mixture(&gauss6_4_spec(3)).unwrap();
        let splits = build_mismatch_split(&data, &gauss6_4_split(0.75, 3)).unwrap();
        assert_eq!(splits.labeled.len(), 60);
        assert_eq!(splits.unlabeled.len(), 2000);
        assert_eq!(splits.test.len(), 600);
        assert_eq!(splits.classes, 6);
        let ood = splits.unlabeled_truth.iter().filter(|r| r.is_ood()).count();
        assert_eq!(ood, 1500);
        let near = splits
            .unlabeled_truth
            .iter()
            .filter(|&&r| r == Role::NearOod)
            .count();
        assert_eq!(near, 750);
    }

    #[test]
    fn zeta_zero_has_no_ood() {
        let data = generate_mixture(&gauss6_4_spec(3)).unwrap();
        let splits = build_mismatch_split(&data, &gauss6_4_split(0.0, 3)).unwrap();
        assert!(splits.unlabeled_truth.iter().all(|r| !r.is_ood()));
    }

    #[test]
    fn splits_are_disjoint_by_feature_identity() {
        let data = generate_mixture(&gauss6_4_spec(4)).unwrap();
        let splits = build_mismatch_split(&data, &gauss6_4_split(0.5, 4)).unwrap();
        let key = |f: &[f64]| format!("{:?}", f);
        let labeled: std::collections::HashSet<String> =
            splits.labeled.iter().map(|(f, _)| key(f)).collect();
        let unlabeled: std::collections::HashSet<String> =
            splits.unlabeled.iter().map(|f| key(f)).collect();
        let test: std::collections::HashSet<String> =
            splits.test.iter().map(|(f, _)| key(f)).collect();
        assert!(labeled.is_disjoint(&unlabeled));
        assert!(labeled.is_disjoint(&test));
        assert!(test.is_disjoint(&unlabeled));
    }

    #[test]
    fn insufficient_samples_reports_shortfall() {
        let data = generate_mixture(&small_spec(5)).unwrap();
        let split = SplitSpec {
            labeled_per_class: 8,
            unlabeled_size: 100,
            zeta: 0.0,
            near_fraction: 0.5,
            test_per_class: 1,
            seed: 5,
        };
        let err = build_mismatch_split(&data, &split).unwrap_err();
        assert!(err.to_string().contains("need"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = generate_mixture(&small_spec(6)).unwrap();
        dump_csv(&data, 2, &path).unwrap();
        let (dim, loaded) = load_csv(&path).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(loaded, data);
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label,role\n1.0,2.0,3.0,0,ID\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_with_header_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "f0,f1,label,role\n").unwrap();
        let (dim, data) = load_csv(&path).unwrap();
        assert_eq!(dim, 2);
        assert!(data.is_empty());
    }
}
