//! Labelled feature datasets: synthetic cluster generation, text-file IO,
//! identity-disjoint splitting, and query/gallery protocol construction.
//!
//! The on-disk format is line-oriented UTF-8 text: a header `N D C` (sample
//! count, feature dimension, camera count) followed by `N` rows of
//! `identity camera f_1 ... f_D`. Floats print in shortest round-trip
//! decimal, so save/load is bit-exact. Files ending in `.gz` are
//! transparently gzip-compressed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::linalg::Vector;
use crate::metrics::{ProtocolFlags, QueryGallerySplit};
use crate::rng::Rng;
use crate::Scalar;

/// Errors from dataset construction, IO and splitting.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {index} has dimension {got}, dataset declares {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample {index} has camera {camera}, dataset declares {n_cameras} cameras")]
    CameraRange {
        index: usize,
        camera: usize,
        n_cameras: usize,
    },
    #[error("sample {index} has a non-finite feature value")]
    NonFiniteFeature { index: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: non-finite feature value")]
    NonFiniteValue { line: usize },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("train_fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("cannot split {n_identities} identities into two non-empty sides at fraction {fraction}")]
    DegenerateSplit { n_identities: usize, fraction: f64 },
    #[error("dataset is empty")]
    Empty,
}

/// One labelled sample: a feature vector, its identity, and the camera that
/// captured it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub features: Vector<T>,
    pub identity: usize,
    pub camera: usize,
}

/// An immutable collection of samples with a declared feature dimension and
/// camera count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    dim: usize,
    n_cameras: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Validates every sample against the declared dimension and camera
    /// count, and that all features are finite.
    pub fn new(
        samples: Vec<Sample<T>>,
        dim: usize,
        n_cameras: usize,
    ) -> Result<Self, DatasetError> {
        for (index, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(DatasetError::DimMismatch {
                    index,
                    expected: dim,
                    got: s.features.len(),
                });
            }
            if s.camera >= n_cameras {
                return Err(DatasetError::CameraRange {
                    index,
                    camera: s.camera,
                    n_cameras,
                });
            }
            if !s.features.is_finite() {
                return Err(DatasetError::NonFiniteFeature { index });
            }
        }
        Ok(Self {
            samples,
            dim,
            n_cameras,
        })
    }

    /// Convenience constructor inferring the dimension from the first sample
    /// and the camera count from the largest camera id.
    pub fn from_samples(samples: Vec<Sample<T>>) -> Result<Self, DatasetError> {
        let dim = samples.first().map_or(0, |s| s.features.len());
        let n_cameras = samples.iter().map(|s| s.camera + 1).max().unwrap_or(0);
        Self::new(samples, dim, n_cameras)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample<T> {
        &self.samples[i]
    }

    /// Sorted distinct identity labels.
    pub fn identities(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.samples.iter().map(|s| s.identity).collect();
        set.into_iter().collect()
    }

    pub fn n_identities(&self) -> usize {
        self.identities().len()
    }

    /// Sample indices grouped by identity, keys ascending.
    pub fn by_identity(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.identity).or_default().push(i);
        }
        map
    }
}

/// Recipe for a synthetic clustered dataset: each identity is an isotropic
/// Gaussian cluster of `samples_per_identity` points in `dim` dimensions.
/// The `cluster_std / center_scale` ratio controls how much identities
/// overlap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub cluster_std: f64,
    pub center_scale: f64,
    pub n_cameras: usize,
    pub seed: u64,
}

/// Generates the clustered dataset described by `spec`: identity `i` gets a
/// center drawn from `center_scale * N(0, I)` and samples at
/// `center + cluster_std * N(0, I)`, with cameras assigned round-robin
/// within each identity. The seed in `spec` fully determines the output.
///
/// Panics if any count is zero or a scale is negative or non-finite.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Dataset<T> {
    assert!(spec.n_identities > 0, "n_identities must be positive");
    assert!(
        spec.samples_per_identity > 0,
        "samples_per_identity must be positive"
    );
    assert!(spec.dim > 0, "dim must be positive");
    assert!(spec.n_cameras > 0, "n_cameras must be positive");
    assert!(
        spec.cluster_std.is_finite() && spec.cluster_std >= 0.0,
        "cluster_std must be finite and non-negative"
    );
    assert!(
        spec.center_scale.is_finite() && spec.center_scale >= 0.0,
        "center_scale must be finite and non-negative"
    );

    let mut rng = Rng::new(spec.seed);
    let mut samples = Vec::with_capacity(spec.n_identities * spec.samples_per_identity);
    for identity in 0..spec.n_identities {
        let center: Vec<f64> = (0..spec.dim)
            .map(|_| spec.center_scale * rng.gaussian())
            .collect();
        for j in 0..spec.samples_per_identity {
            let features = Vector::new(
                center
                    .iter()
                    .map(|&c| T::of(c + spec.cluster_std * rng.gaussian()))
                    .collect(),
            );
            samples.push(Sample {
                features,
                identity,
                camera: j % spec.n_cameras,
            });
        }
    }
    Dataset::new(samples, spec.dim, spec.n_cameras).expect("generated samples are valid")
}

/// Writes the dataset in the text format described in the module docs,
/// gzip-compressed when `path` ends in `.gz`.
pub fn save_features<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<(), DatasetError> {
    let file = File::create(path)?;
    let mut writer: Box<dyn Write> = if is_gz(path) {
        Box::new(flate2::write::GzEncoder::new(
            file,
            flate2::Compression::default(),
        ))
    } else {
        Box::new(BufWriter::new(file))
    };
    writeln!(
        writer,
        "{} {} {}",
        dataset.len(),
        dataset.dim(),
        dataset.n_cameras()
    )?;
    for s in dataset.samples() {
        write!(writer, "{} {}", s.identity, s.camera)?;
        for v in s.features.iter() {
            write!(writer, " {v}")?;
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_features`]. Errors carry the 1-based
/// line number of the offending row.
pub fn load_features<T: Scalar>(path: &Path) -> Result<Dataset<T>, DatasetError> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut lines = BufReader::new(reader).lines();

    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(
            1,
            format!("header needs 3 fields (N D C), found {}", fields.len()),
        ));
    }
    let n: usize = parse_field(fields[0], 1, "sample count")?;
    let dim: usize = parse_field(fields[1], 1, "dimension")?;
    let n_cameras: usize = parse_field(fields[2], 1, "camera count")?;

    let mut samples = Vec::with_capacity(n);
    for row in 0..n {
        let line_no = row + 2;
        let line = lines
            .next()
            .ok_or_else(|| parse_err(line_no, format!("expected {n} rows, file ends early")))??;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 2 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", dim + 2, fields.len()),
            ));
        }
        let identity: usize = parse_field(fields[0], line_no, "identity")?;
        let camera: usize = parse_field(fields[1], line_no, "camera")?;
        if camera >= n_cameras {
            return Err(parse_err(
                line_no,
                format!("camera {camera} out of range (header declares {n_cameras})"),
            ));
        }
        let mut features = Vec::with_capacity(dim);
        for f in &fields[2..] {
            let v: T = f
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad float {f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(DatasetError::NonFiniteValue { line: line_no });
            }
            features.push(v);
        }
        samples.push(Sample {
            features: Vector::new(features),
            identity,
            camera,
        });
    }
    for extra in lines {
        if !extra?.trim().is_empty() {
            return Err(parse_err(n + 2, "trailing non-empty line"));
        }
    }
    Dataset::new(samples, dim, n_cameras)
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn parse_err(line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_field<F: std::str::FromStr>(
    field: &str,
    line: usize,
    what: &str,
) -> Result<F, DatasetError>
where
    F::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| parse_err(line, format!("bad {what} {field:?}: {e}")))
}

/// Splits the dataset into identity-disjoint train and test sides: the
/// identities are shuffled and the first `round(train_fraction * n)` go to
/// the train side with all their samples.
pub fn split_identities<T: Scalar>(
    dataset: &Dataset<T>,
    train_fraction: f64,
    rng: &mut Rng,
) -> Result<(Dataset<T>, Dataset<T>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    let mut ids = dataset.identities();
    let n = ids.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(DatasetError::DegenerateSplit {
            n_identities: n,
            fraction: train_fraction,
        });
    }
    rng.shuffle(&mut ids);
    let train_ids: BTreeSet<usize> = ids[..n_train].iter().copied().collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in dataset.samples() {
        if train_ids.contains(&s.identity) {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    let train = Dataset::new(train, dataset.dim(), dataset.n_cameras())?;
    let test = Dataset::new(test, dataset.dim(), dataset.n_cameras())?;
    // Identity-disjointness is structural, but it is cheap to prove on every
    // split and a corrupted split would poison every downstream number.
    let test_ids: BTreeSet<usize> = test.identities().into_iter().collect();
    let overlap: Vec<usize> = train
        .identities()
        .into_iter()
        .filter(|id| test_ids.contains(id))
        .collect();
    assert!(
        overlap.is_empty(),
        "identity leak across split: {overlap:?}"
    );
    Ok((train, test))
}

/// Builds the retrieval protocol over a test set: per identity per camera,
/// one randomly chosen sample becomes a query and every remaining sample
/// joins the gallery. Identities with a single sample contribute no query
/// (there would be nothing to retrieve) and are logged.
pub fn make_query_gallery<T: Scalar>(
    dataset: &Dataset<T>,
    protocol: ProtocolFlags,
    rng: &mut Rng,
) -> Result<QueryGallerySplit, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut queries = Vec::new();
    let mut is_query = vec![false; dataset.len()];
    let mut skipped_identities = 0usize;
    for (id, members) in dataset.by_identity() {
        if members.len() < 2 {
            skipped_identities += 1;
            log::debug!("identity {id} has a single sample; no query selected");
            continue;
        }
        let mut by_camera: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &members {
            by_camera.entry(dataset.sample(i).camera).or_default().push(i);
        }
        for group in by_camera.values() {
            let chosen = group[rng.index(group.len())];
            queries.push(chosen);
            is_query[chosen] = true;
        }
    }
    if skipped_identities > 0 {
        log::info!("{skipped_identities} identities had a single sample and contribute no query");
    }
    let gallery: Vec<usize> = (0..dataset.len()).filter(|&i| !is_query[i]).collect();
    Ok(QueryGallerySplit {
        queries,
        gallery,
        exclude_same_camera_same_id: protocol.exclude_same_camera_same_id,
        drop_empty_queries: protocol.drop_empty_queries,
    })
}
