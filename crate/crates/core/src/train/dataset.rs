//! Labeled image collections, the labels file and split bookkeeping.
//!
//! A dataset directory holds the images plus `labels.csv` with header
//! `filename,q_rad`. Datasets whose split is not the default contiguous
//! 8:1:1 also carry `split.csv` (`filename,split`, split one of
//! `train|val|test`).

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;

use super::TrainError;
use crate::arm_sim::{arm_shape, ArmConfig, CameraConfig, LABEL_LIMIT};
use crate::raster::{self, Image};
use crate::rng;

pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.csv";

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Memory(Image),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// File name relative to the dataset directory.
    pub name: String,
    pub source: ImageSource,
    /// Joint value in radians.
    pub label: f64,
}

/// Train/validation/test index lists over a dataset's items.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// First 80% train, next 10% validation, remainder test; item order kept.
    pub fn contiguous(n: usize) -> Self {
        let train = n * 8 / 10;
        let val = n / 10;
        Split {
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..n).collect(),
        }
    }

    /// Disjoint and exhaustive over `0..n`.
    pub fn validate(&self, n: usize) -> Result<(), TrainError> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(TrainError::Split(format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(TrainError::Split("split does not cover every item".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<Sample>,
    /// `(height, width)` shared by every image.
    pub resolution: (usize, usize),
    pub split: Split,
}

pub fn check_label(name: &str, q: f64) -> Result<(), TrainError> {
    if !q.is_finite() || q.abs() > LABEL_LIMIT {
        return Err(TrainError::LabelRange {
            name: name.to_string(),
            q,
        });
    }
    Ok(())
}

impl Dataset {
    /// Builds a dataset with the default contiguous split.
    pub fn new(items: Vec<Sample>, resolution: (usize, usize)) -> Result<Self, TrainError> {
        let split = Split::contiguous(items.len());
        Self::with_split(items, resolution, split)
    }

    pub fn with_split(items: Vec<Sample>, resolution: (usize, usize), split: Split) -> Result<Self, TrainError> {
        if items.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut names: Vec<&str> = items.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(TrainError::DuplicateName(w[0].to_string()));
        }
        for s in &items {
            check_label(&s.name, s.label)?;
        }
        split.validate(items.len())?;
        Ok(Dataset {
            items,
            resolution,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.items.iter().map(|s| s.label).collect()
    }

    pub fn image(&self, i: usize) -> Result<Cow<'_, Image>, TrainError> {
        match &self.items[i].source {
            ImageSource::Memory(img) => Ok(Cow::Borrowed(img)),
            ImageSource::File(path) => Ok(Cow::Owned(raster::read_ppm(path)?)),
        }
    }

    /// Writes every image as PPM plus the labels file (and the split file
    /// when the split is not the default one).
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(TrainError::io(dir))?;
        (0..self.len()).into_par_iter().try_for_each(|i| {
            let path = dir.join(&self.items[i].name);
            match &self.items[i].source {
                ImageSource::Memory(img) => raster::write_ppm(img, &path)?,
                ImageSource::File(src) => {
                    fs::copy(src, &path).map_err(TrainError::io(&path))?;
                }
            }
            Ok::<_, TrainError>(())
        })?;
        let rows: Vec<(String, f64)> = self.items.iter().map(|s| (s.name.clone(), s.label)).collect();
        write_labels(&dir.join(LABELS_FILE), &rows)?;
        if self.split != Split::contiguous(self.len()) {
            write_split(&dir.join(SPLIT_FILE), self)?;
        }
        Ok(())
    }

    /// Loads a dataset directory; images stay on disk until requested.
    pub fn load_dir(dir: &Path) -> Result<Self, TrainError> {
        let rows = read_labels(&dir.join(LABELS_FILE))?;
        let items: Vec<Sample> = rows
            .into_iter()
            .map(|(name, label)| Sample {
                source: ImageSource::File(dir.join(&name)),
                name,
                label,
            })
            .collect();
        let first = match items.first() {
            Some(Sample { source: ImageSource::File(p), .. }) => p.clone(),
            _ => return Err(TrainError::EmptyDataset),
        };
        let (w, h) = raster::ppm_dimensions(&first)?;
        let split_path = dir.join(SPLIT_FILE);
        let split = if split_path.exists() {
            read_split(&split_path, &items)?
        } else {
            Split::contiguous(items.len())
        };
        Self::with_split(items, (h, w), split)
    }

    /// Copy of the dataset with every image resident in memory.
    pub fn materialize(&self) -> Result<Self, TrainError> {
        let items = (0..self.len())
            .into_par_iter()
            .map(|i| {
                Ok(Sample {
                    name: self.items[i].name.clone(),
                    source: ImageSource::Memory(self.image(i)?.into_owned()),
                    label: self.items[i].label,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Dataset {
            items,
            resolution: self.resolution,
            split: self.split.clone(),
        })
    }

    /// Subset with the given items (in order) and a fresh contiguous split.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, TrainError> {
        let items = indices.iter().map(|&i| self.items[i].clone()).collect();
        Self::new(items, self.resolution)
    }
}

pub fn image_name(i: usize) -> String {
    format!("img_{i:05}.ppm")
}

/// Renders `n` scenes at joint values drawn uniformly over the label range.
pub fn generate_dataset(n: usize, arm: &ArmConfig, cam: &CameraConfig, seed: u64) -> Result<Dataset, TrainError> {
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    arm.validate()?;
    cam.validate()?;
    let mut rng = rng::stream(seed, &[0x6a7e]);
    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(-LABEL_LIMIT..=LABEL_LIMIT)).collect();
    let items = labels
        .par_iter()
        .enumerate()
        .map(|(i, &q)| {
            let shape = arm_shape(q, arm, cam)?;
            Ok(Sample {
                name: image_name(i),
                source: ImageSource::Memory(raster::render(&shape, cam)),
                label: q,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Dataset::new(items, (cam.image_height, cam.image_width))
}

pub fn write_labels(path: &Path, rows: &[(String, f64)]) -> Result<(), TrainError> {
    let mut out = String::from("filename,q_rad\n");
    for (name, q) in rows {
        out.push_str(&format!("{name},{q}\n"));
    }
    fs::write(path, out).map_err(TrainError::io(path))
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, f64)>, TrainError> {
    let text = fs::read_to_string(path).map_err(TrainError::io(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let bad = |line: u64, msg: String| TrainError::Labels {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["filename", "q_rad"] {
        return Err(bad(1, "header must be `filename,q_rad`".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let name = rec[0].to_string();
        let q: f64 = rec[1].parse().map_err(|_| bad(line, format!("`{}` is not a number", &rec[1])))?;
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(bad(line, format!("`{name}` is not a plain file name")));
        }
        check_label(&name, q)?;
        rows.push((name, q));
    }
    Ok(rows)
}

fn write_split(path: &Path, data: &Dataset) -> Result<(), TrainError> {
    let mut tag = vec![""; data.len()];
    for (list, t) in [(&data.split.train, "train"), (&data.split.val, "val"), (&data.split.test, "test")] {
        for &i in list {
            tag[i] = t;
        }
    }
    let mut out = String::from("filename,split\n");
    for (s, t) in data.items.iter().zip(tag) {
        out.push_str(&format!("{},{t}\n", s.name));
    }
    fs::write(path, out).map_err(TrainError::io(path))
}

fn read_split(path: &Path, items: &[Sample]) -> Result<Split, TrainError> {
    let text = fs::read_to_string(path).map_err(TrainError::io(path))?;
    let mut split = Split::default();
    let mut lines = text.lines();
    if lines.next() != Some("filename,split") {
        return Err(TrainError::Split(format!("{}: bad header", path.display())));
    }
    for (i, line) in lines.enumerate() {
        let (name, tag) = line
            .split_once(',')
            .ok_or_else(|| TrainError::Split(format!("{}: line {}", path.display(), i + 2)))?;
        if items.get(i).map(|s| s.name.as_str()) != Some(name) {
            return Err(TrainError::Split(format!("{}: `{name}` out of order", path.display())));
        }
        match tag {
            "train" => split.train.push(i),
            "val" => split.val.push(i),
            "test" => split.test.push(i),
            other => return Err(TrainError::Split(format!("unknown split `{other}`"))),
        }
    }
    Ok(split)
}
