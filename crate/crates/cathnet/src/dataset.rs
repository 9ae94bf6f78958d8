//! On-disk dataset: PGM images and masks, JSON annotations, a manifest and
//! split lists.
//!
//! ```text
//! <dir>/manifest.json          {version, size, count, generator}
//! <dir>/images/<id>.pgm        8-bit binary PGM
//! <dir>/masks/<id>.pgm         0 / 255
//! <dir>/annotations/<id>.json  {id, electrodes, centerline, seed, distractors}
//! <dir>/splits/{train,val,test}.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use cathnet_core::metrics::BBox;
use cathnet_core::rng::mix;
use cathnet_core::synth::{generate_sample, GeneratorConfig, SampleRecord, SynthError};
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersion { path: PathBuf, found: u32 },
    #[error("missing annotation file {0}")]
    MissingAnnotation(PathBuf),
    #[error("missing image file {0}")]
    MissingImage(PathBuf),
    #[error("sample {id}: image is {image_h}×{image_w} but mask is {mask_h}×{mask_w}")]
    ShapeMismatch { id: String, image_h: usize, image_w: usize, mask_h: usize, mask_w: usize },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    NotEmpty(PathBuf),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub size: usize,
    pub count: usize,
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Annotation {
    id: String,
    electrodes: Vec<BBox>,
    centerline: Vec<[f64; 2]>,
    seed: u64,
    #[serde(default)]
    distractors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Number of ids of `n` in each split: 70 / 15 / 15, rounded, with
    /// the remainder going to test.
    pub fn counts(n: usize) -> [usize; 3] {
        let train = (n * 70 + 50) / 100;
        let val = ((n * 15 + 50) / 100).min(n - train);
        [train, val, n - train - val]
    }
}

fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |acc, b| mix(acc ^ b as u64))
}

/// Split ids 70 / 15 / 15 by ranking them on a hash of the id. Each list
/// is sorted.
pub fn assign_splits(ids: &[String]) -> [Vec<String>; 3] {
    let mut ranked: Vec<&String> = ids.iter().collect();
    ranked.sort_by_key(|id| (id_hash(id), id.as_str()));
    let [train, val, _] = Split::counts(ids.len());
    let mut out: [Vec<String>; 3] = Default::default();
    for (rank, id) in ranked.into_iter().enumerate() {
        let k = if rank < train {
            0
        } else if rank < train + val {
            1
        } else {
            2
        };
        out[k].push(id.clone());
    }
    for list in &mut out {
        list.sort();
    }
    out
}

impl std::str::FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| DatasetError::UnknownSplit(s.into()))
    }
}

pub fn sample_id(index: usize) -> String {
    format!("{index:05}")
}

fn write_pgm(path: &Path, h: usize, w: usize, pixels: Vec<u8>) -> Result<(), DatasetError> {
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches dimensions");
    img.save_with_format(path, ImageFormat::Pnm)
        .map_err(|e| DatasetError::Parse { path: path.into(), message: e.to_string() })
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingImage(path.into()));
    }
    let img =
        image::open(path).map_err(|e| DatasetError::Parse { path: path.into(), message: e.to_string() })?.into_luma8();
    Ok((img.height() as usize, img.width() as usize, img.into_raw()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse { path: path.into(), message: e.to_string() })
}

/// Write records (and the split lists) into `dir`, which must exist.
pub fn write_dataset(
    dir: &Path,
    records: &[SampleRecord],
    generator: Option<&GeneratorConfig>,
) -> Result<(), DatasetError> {
    for sub in ["images", "masks", "annotations", "splits"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    for r in records {
        let pixels = r.image.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        write_pgm(&dir.join("images").join(format!("{}.pgm", r.id)), r.height, r.width, pixels)?;
        let mask = r.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        write_pgm(&dir.join("masks").join(format!("{}.pgm", r.id)), r.height, r.width, mask)?;
        let ann = Annotation {
            id: r.id.clone(),
            electrodes: r.electrodes.clone(),
            centerline: r.centerline.clone(),
            seed: r.seed,
            distractors: r.distractors,
        };
        write_json(&dir.join("annotations").join(format!("{}.json", r.id)), &ann)?;
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    for (split, ids) in Split::ALL.iter().zip(assign_splits(&ids)) {
        write_json(&dir.join("splits").join(format!("{}.json", split.name())), &ids)?;
    }
    let manifest = Manifest {
        version: SCHEMA_VERSION,
        size: records.first().map_or(0, |r| r.height),
        count: records.len(),
        generator: generator.cloned(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>, DatasetError> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    #[derive(Deserialize)]
    struct Version {
        version: u32,
    }
    let v: Version = read_json(&path)?;
    if v.version != SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersion { path, found: v.version });
    }
    read_json(&path).map(Some)
}

fn read_record(dir: &Path, id: &str) -> Result<SampleRecord, DatasetError> {
    let ann_path = dir.join("annotations").join(format!("{id}.json"));
    if !ann_path.exists() {
        return Err(DatasetError::MissingAnnotation(ann_path));
    }
    let ann: Annotation = read_json(&ann_path)?;
    let (h, w, pixels) = read_pgm(&dir.join("images").join(format!("{id}.pgm")))?;
    let (mh, mw, mask) = read_pgm(&dir.join("masks").join(format!("{id}.pgm")))?;
    if (h, w) != (mh, mw) {
        return Err(DatasetError::ShapeMismatch { id: id.into(), image_h: h, image_w: w, mask_h: mh, mask_w: mw });
    }
    Ok(SampleRecord {
        id: id.into(),
        height: h,
        width: w,
        image: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        mask: mask.iter().map(|&m| m >= 128).collect(),
        electrodes: ann.electrodes,
        centerline: ann.centerline,
        seed: ann.seed,
        distractors: ann.distractors,
    })
}

fn ids_in(dir: &Path) -> Result<Vec<String>, DatasetError> {
    let images = dir.join("images");
    if !images.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&images).map_err(io_err(&images))? {
        let path = entry.map_err(io_err(&images))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// All records in `dir`, ordered by id. An empty directory yields none.
pub fn read_dataset(dir: &Path) -> Result<Vec<SampleRecord>, DatasetError> {
    read_manifest(dir)?;
    ids_in(dir)?.iter().map(|id| read_record(dir, id)).collect()
}

/// Records of one split, ordered by id.
pub fn read_split(dir: &Path, split: Split) -> Result<Vec<SampleRecord>, DatasetError> {
    read_manifest(dir)?;
    let list = dir.join("splits").join(format!("{}.json", split.name()));
    let ids: Vec<String> = if list.exists() {
        read_json(&list)?
    } else {
        let [train, val, test] = assign_splits(&ids_in(dir)?);
        match split {
            Split::Train => train,
            Split::Val => val,
            Split::Test => test,
        }
    };
    ids.iter().map(|id| read_record(dir, id)).collect()
}

/// Generate `n` samples with ids 00000… from `seed` and write them to `out`.
pub fn gen_data(out: &Path, n: usize, seed: u64, cfg: &GeneratorConfig, force: bool) -> Result<Manifest, DatasetError> {
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(io_err(out))?.next().is_some();
        if non_empty && !force {
            return Err(DatasetError::NotEmpty(out.into()));
        }
        if non_empty {
            for sub in ["images", "masks", "annotations", "splits"] {
                let p = out.join(sub);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(io_err(&p))?;
                }
            }
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let records = generate_records(seed, 0, n, cfg)?;
    write_dataset(out, &records, Some(cfg))?;
    Ok(read_manifest(out)?.expect("manifest just written"))
}

/// Samples `start..start + n` of the stream derived from `seed`.
pub fn generate_records(
    seed: u64,
    start: usize,
    n: usize,
    cfg: &GeneratorConfig,
) -> Result<Vec<SampleRecord>, SynthError> {
    use cathnet_core::rng::{derive_seed, Stream};
    (start..start + n)
        .map(|i| {
            let mut r = generate_sample(derive_seed(seed, Stream::Data, i as u64), cfg)?;
            r.id = sample_id(i);
            Ok(r)
        })
        .collect()
}
