//! Dataset constructors, file loaders, splits, and accuracy.
//!
//! Three built-in experiment datasets (a sinusoid regression grid, a
//! uniformly sampled disc-membership classification, and IDX-encoded image
//! classification), plus generic CSV ingestion.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Binary,
    Multiclass,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Task> {
        match s.trim() {
            "regression" => Ok(Task::Regression),
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub task: Task,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |v| v.len())
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, |v| v.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs vs {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let n = self.input_dim();
        let m = self.target_dim();
        for (k, (x, t)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.len() != n || t.len() != m {
                return Err(Error::Shape(format!("sample {k} has ragged dimensions")));
            }
            if x.iter().chain(t.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("sample {k} not finite")));
            }
        }
        match self.task {
            Task::Binary => {
                for (k, t) in self.targets.iter().enumerate() {
                    if t.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "binary target {k} is not 0/1"
                        )));
                    }
                }
            }
            Task::Multiclass => {
                for (k, t) in self.targets.iter().enumerate() {
                    let ones = t.iter().filter(|&&v| v == 1.0).count();
                    let zeros = t.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || zeros != t.len() - 1 {
                        return Err(Error::InvalidArgument(format!(
                            "multiclass target {k} is not one-hot"
                        )));
                    }
                }
            }
            Task::Regression => {}
        }
        Ok(())
    }
}

/// Regression grid: inputs (k-1)/K for k = 1..K, targets sin(4π ξ).
pub fn gen_sinusoid(k: usize) -> Dataset {
    let inputs: Vec<Vec<f64>> = (0..k).map(|j| vec![j as f64 / k as f64]).collect();
    let targets = inputs
        .iter()
        .map(|x| vec![(4.0 * std::f64::consts::PI * x[0]).sin()])
        .collect();
    Dataset {
        inputs,
        targets,
        task: Task::Regression,
    }
}

/// Disc radius of the binary classification target.
pub const CIRCLE_RADIUS: f64 = 0.3;

/// Label rule for a point of the unit square: 0 strictly inside the disc of
/// radius 0.3 around (0.5, 0.5), 1 at the boundary and outside.
pub fn circle_label(xi: &[f64]) -> f64 {
    let dx = xi[0] - 0.5;
    let dy = xi[1] - 0.5;
    if (dx * dx + dy * dy).sqrt() < CIRCLE_RADIUS {
        0.0
    } else {
        1.0
    }
}

/// K uniform points of [0,1]² with disc-membership labels.
pub fn gen_circle(k: usize, seed: u64) -> Dataset {
    let mut rng = Rng::seed_from(seed);
    let inputs: Vec<Vec<f64>> = (0..k)
        .map(|_| vec![rng.uniform(), rng.uniform()])
        .collect();
    let targets = inputs.iter().map(|x| vec![circle_label(x)]).collect();
    Dataset {
        inputs,
        targets,
        task: Task::Binary,
    }
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: format!("truncated while reading {what}"),
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Load image/label IDX files into a flattened, [0,1]-scaled multiclass
/// dataset (n = rows·cols, m = 10 one-hot). `limit` truncates the sample
/// count after consistency checks.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<Dataset> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut img, images_path, "image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Parse {
            path: images_path.display().to_string(),
            line: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&mut img, images_path, "image count")? as usize;
    let rows = read_u32_be(&mut img, images_path, "row count")? as usize;
    let cols = read_u32_be(&mut img, images_path, "column count")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels).map_err(|_| Error::Parse {
        path: images_path.display().to_string(),
        line: 0,
        message: "image payload shorter than header promises".into(),
    })?;

    let mut lab = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lab, labels_path, "label magic")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Parse {
            path: labels_path.display().to_string(),
            line: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        });
    }
    let label_count = read_u32_be(&mut lab, labels_path, "label count")? as usize;
    if label_count != count {
        return Err(Error::Parse {
            path: labels_path.display().to_string(),
            line: 0,
            message: format!("{label_count} labels for {count} images"),
        });
    }
    let mut labels = vec![0u8; label_count];
    lab.read_exact(&mut labels).map_err(|_| Error::Parse {
        path: labels_path.display().to_string(),
        line: 0,
        message: "label payload shorter than header promises".into(),
    })?;

    let take = limit.unwrap_or(count).min(count);
    let dim = rows * cols;
    let mut inputs = Vec::with_capacity(take);
    let mut targets = Vec::with_capacity(take);
    for k in 0..take {
        let raw = &pixels[k * dim..(k + 1) * dim];
        inputs.push(raw.iter().map(|&b| b as f64 / 255.0).collect());
        let label = labels[k];
        if label > 9 {
            return Err(Error::Parse {
                path: labels_path.display().to_string(),
                line: 0,
                message: format!("label {label} out of range for sample {k}"),
            });
        }
        let mut onehot = vec![0.0; 10];
        onehot[label as usize] = 1.0;
        targets.push(onehot);
    }
    Ok(Dataset {
        inputs,
        targets,
        task: Task::Multiclass,
    })
}

/// Write an IDX image file (big-endian header, raw bytes). Fixture utility
/// for round-trip tests and synthetic corpora.
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(images.len() as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Shape(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        w.write_all(img)?;
    }
    w.flush()?;
    Ok(())
}

/// Write an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Seeded shuffle followed by a prefix/suffix split; both sides nonempty.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let k = dataset.len();
    let cut = (fraction * k as f64).floor() as usize;
    if cut == 0 || cut == k {
        return Err(Error::InvalidArgument(format!(
            "split of {k} samples at fraction {fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    let mut rng = Rng::seed_from(seed);
    rng.shuffle(&mut order);
    let pick = |ids: &[usize]| Dataset {
        inputs: ids.iter().map(|&i| dataset.inputs[i].clone()).collect(),
        targets: ids.iter().map(|&i| dataset.targets[i].clone()).collect(),
        task: dataset.task,
    };
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of correctly classified samples. Binary predictions threshold
/// at 0.5 (the boundary classifies as 1); multiclass compares argmaxes.
pub fn accuracy(predictions: &[Vec<f64>], targets: &[Vec<f64>], task: Task) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let correct = match task {
        Task::Regression => {
            return Err(Error::UnsupportedTask(
                "accuracy is undefined for regression".into(),
            ))
        }
        Task::Binary => predictions
            .iter()
            .zip(targets)
            .filter(|(p, t)| {
                let label = if p[0] >= 0.5 { 1.0 } else { 0.0 };
                label == t[0]
            })
            .count(),
        Task::Multiclass => predictions
            .iter()
            .zip(targets)
            .filter(|(p, t)| argmax(p) == argmax(t))
            .count(),
    };
    Ok(correct as f64 / predictions.len() as f64)
}

/// Generic CSV dataset: header `x0..x{n-1},y0..y{m-1}`, decimal floats.
/// The caller assigns the task afterwards (defaults to regression).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let raw = std::fs::read_to_string(path)?;
    let mut lines = raw.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n = cols.iter().take_while(|c| c.starts_with('x')).count();
    let m = cols.len() - n;
    if n == 0 || m == 0 || !cols[n..].iter().all(|c| c.starts_with('y')) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("header must be x0..x{{n-1}},y0..y{{m-1}}, got `{header}`"),
        });
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("{} fields, expected {}", fields.len(), cols.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("bad float `{s}`"),
            })
        };
        let mut row = Vec::with_capacity(cols.len());
        for f in &fields {
            row.push(parse(f)?);
        }
        targets.push(row.split_off(n));
        inputs.push(row);
    }
    Ok(Dataset {
        inputs,
        targets,
        task: Task::Regression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_grid() {
        let ds = gen_sinusoid(1000);
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.inputs[0], vec![0.0]);
        assert_eq!(ds.targets[0], vec![0.0]);
        // xi = 0.125 -> sin(pi/2) = 1
        assert_eq!(ds.inputs[125], vec![0.125]);
        assert!((ds.targets[125][0] - 1.0).abs() < 1e-15);
        assert!(ds.validate().is_ok());
        // deterministic: no RNG involved
        let again = gen_sinusoid(1000);
        assert_eq!(ds.inputs, again.inputs);
        assert_eq!(ds.targets, again.targets);
    }

    #[test]
    fn circle_labels() {
        assert_eq!(circle_label(&[0.5, 0.5]), 0.0);
        // distance exactly 0.3 takes the boundary branch
        assert_eq!(circle_label(&[0.5, 0.8]), 1.0);
        assert_eq!(circle_label(&[0.2, 0.5]), 1.0);
        assert_eq!(circle_label(&[0.5, 0.65]), 0.0);

        let ds = gen_circle(10_000, 9);
        assert!(ds.validate().is_ok());
        for (x, t) in ds.inputs.iter().zip(&ds.targets) {
            assert_eq!(t[0], circle_label(x));
        }
        // outside-label share approaches 1 - pi 0.09 ~ 0.7173
        let share = ds.targets.iter().filter(|t| t[0] == 1.0).count() as f64 / ds.len() as f64;
        assert!((share - 0.7173).abs() < 0.02, "share {share}");
    }

    #[test]
    fn idx_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images-idx3-ubyte");
        let lab_path = dir.path().join("labels-idx1-ubyte");
        let images: Vec<Vec<u8>> = (0..7u8)
            .map(|k| (0..28 * 28).map(|i| (i as u8).wrapping_mul(k)).collect())
            .collect();
        let labels: Vec<u8> = (0..7).map(|k| k % 10).collect();
        write_idx_images(&img_path, &images, 28, 28).unwrap();
        write_idx_labels(&lab_path, &labels).unwrap();
        let ds = load_mnist_idx(&img_path, &lab_path, None).unwrap();
        assert_eq!(ds.len(), 7);
        assert_eq!(ds.input_dim(), 784);
        for (k, img) in images.iter().enumerate() {
            for (i, &b) in img.iter().enumerate() {
                assert_eq!(ds.inputs[k][i], b as f64 / 255.0);
            }
            assert_eq!(argmax(&ds.targets[k]), labels[k] as usize);
        }
        // byte 255 scales to exactly 1.0
        assert_eq!(255.0 / 255.0, 1.0);
        // limit truncates
        let ds = load_mnist_idx(&img_path, &lab_path, Some(3)).unwrap();
        assert_eq!(ds.len(), 3);
    }

    #[test]
    fn idx_error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img");
        let lab_path = dir.path().join("lab");
        // label file passed as image file: bad magic
        write_idx_labels(&lab_path, &[1, 2, 3]).unwrap();
        write_idx_images(&img_path, &vec![vec![0u8; 4]; 3], 2, 2).unwrap();
        let err = load_mnist_idx(&lab_path, &lab_path, None).unwrap_err();
        assert!(err.to_string().contains("bad image magic"), "{err}");
        // count mismatch
        write_idx_labels(&lab_path, &[1, 2]).unwrap();
        let err = load_mnist_idx(&img_path, &lab_path, None).unwrap_err();
        assert!(err.to_string().contains("2 labels for 3 images"), "{err}");
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let ds = gen_sinusoid(10);
        let (a, b) = split(&ds, 0.8, 5).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&ds, 0.8, 5).unwrap();
        assert_eq!(a.inputs, a2.inputs);
        assert_eq!(b.inputs, b2.inputs);
        // union is the original multiset
        let mut all: Vec<f64> = a.inputs.iter().chain(&b.inputs).map(|v| v[0]).collect();
        all.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut orig: Vec<f64> = ds.inputs.iter().map(|v| v[0]).collect();
        orig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(all, orig);
        // degenerate splits are rejected
        assert!(split(&ds, 0.01, 5).is_err());
        assert!(split(&ds, 1.0, 5).is_err());
    }

    #[test]
    fn accuracy_rules() {
        let t = vec![vec![1.0], vec![0.0]];
        let p = vec![vec![0.9], vec![0.1]];
        assert_eq!(accuracy(&p, &t, Task::Binary).unwrap(), 1.0);
        // exactly 0.5 classifies as 1
        let p = vec![vec![0.5], vec![0.5]];
        assert_eq!(accuracy(&p, &t, Task::Binary).unwrap(), 0.5);
        // multiclass ties break to the lowest index
        let t = vec![vec![1.0, 0.0, 0.0]];
        let p = vec![vec![0.4, 0.4, 0.2]];
        assert_eq!(accuracy(&p, &t, Task::Multiclass).unwrap(), 1.0);
        assert!(accuracy(&p, &t, Task::Regression).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "x0,x1,y0\n0.5,-1.25,3\n1,2,-0.125\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs[0], vec![0.5, -1.25]);
        assert_eq!(ds.targets[1], vec![-0.125]);

        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(load_csv(&path).is_err());
        std::fs::write(&path, "x0,y0\n1\n").unwrap();
        let err = load_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line: 2") || err.to_string().contains(":2"), "{err}");
    }
}
