//! Datasets on disk, synthetic generation and exhaustive reference decoders.
//!
//! A dataset directory holds:
//!
//! - `classes.txt`: one class name per line, line order giving ids. A line
//!   `background <name>` marks `<name>` as the background class instead of
//!   declaring a class.
//! - `sets.txt`: `video_id<TAB>name,name,...` per video.
//! - `features/<video_id>.fvec`: `FVC1`, then `d` and `T` as u32 LE, then
//!   `d * T` f32 LE values, column-major (one frame after another).
//! - `labels/<video_id>.txt` (optional): one class name per frame.

mod oracle;
mod synth;

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::labels::{ActionSet, ClassId, Vocabulary};

pub use oracle::{oracle_exhaustive_map, ORACLE_MAX_CLASSES, ORACLE_MAX_FRAMES};
pub use synth::{generate_synthetic, LengthRange, SynthSpec};

pub const FEATURE_MAGIC: &[u8; 4] = b"FVC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    /// `d x T`, one column per frame.
    pub features: Array2<f64>,
    pub set: ActionSet,
    /// Framewise ground truth, evaluation only.
    pub labels: Option<Vec<ClassId>>,
}

impl Video {
    pub fn num_frames(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub background: Option<ClassId>,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.nrows())
    }

    pub fn num_classes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim();
        for v in &self.videos {
            if Some(v.features.nrows()) != d {
                return Err(Error::Dimension(format!(
                    "video {} has {} feature rows, expected {}",
                    v.id,
                    v.features.nrows(),
                    d.unwrap_or(0)
                )));
            }
            v.set.check_within(self.num_classes())?;
            if let Some(labels) = &v.labels {
                if labels.len() != v.num_frames() {
                    return Err(Error::Dimension(format!(
                        "video {} has {} labels for {} frames",
                        v.id,
                        labels.len(),
                        v.num_frames()
                    )));
                }
                if let Some(&c) = labels.iter().find(|&&c| c >= self.num_classes()) {
                    return Err(Error::UnknownClass(c));
                }
            }
        }
        Ok(())
    }

    /// Adds the background class to every video's set.
    pub fn include_background_in_sets(&mut self) {
        if let Some(bg) = self.background {
            for v in &mut self.videos {
                v.set.insert(bg);
            }
        }
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Moves videos from index `at` onward into a second dataset sharing the
    /// vocabulary.
    pub fn split_off(&mut self, at: usize) -> Dataset {
        let rest = self.videos.split_off(at.min(self.videos.len()));
        Dataset {
            vocabulary: self.vocabulary.clone(),
            background: self.background,
            videos: rest,
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::Format {
            path: path.to_path_buf(),
            msg: "file not found".into(),
        },
        _ => Error::Io(e),
    })
}

/// Parses `classes.txt`, returning the vocabulary and background class.
pub fn parse_classes(path: &Path, text: &str) -> Result<(Vocabulary, Option<ClassId>)> {
    let mut names = Vec::new();
    let mut background: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("background ") {
            background = Some((i + 1, rest.trim().to_string()));
            continue;
        }
        if names.contains(&line.to_string()) {
            return Err(parse_err(path, i + 1, format!("duplicate class {line:?}")));
        }
        names.push(line.to_string());
    }
    let vocab = Vocabulary::new(names).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let bg = match background {
        Some((line, name)) => Some(vocab.id(&name).ok_or_else(|| {
            parse_err(
                path,
                line,
                format!("background class {name:?} is not declared"),
            )
        })?),
        None => None,
    };
    Ok((vocab, bg))
}

/// Parses `sets.txt` into `(video_id, set)` in file order.
pub fn parse_sets(path: &Path, text: &str, vocab: &Vocabulary) -> Result<Vec<(String, ActionSet)>> {
    let mut out: Vec<(String, ActionSet)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (id, names) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected `video_id<TAB>classes`"))?;
        if id.is_empty() {
            return Err(parse_err(path, i + 1, "empty video id"));
        }
        if out.iter().any(|(v, _)| v == id) {
            return Err(parse_err(path, i + 1, format!("duplicate video {id:?}")));
        }
        let mut classes = Vec::new();
        for name in names.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let c = vocab
                .id(name)
                .ok_or_else(|| parse_err(path, i + 1, format!("unknown class {name:?}")))?;
            classes.push(c);
        }
        if classes.is_empty() {
            return Err(parse_err(
                path,
                i + 1,
                format!("video {id:?} has an empty set"),
            ));
        }
        out.push((id.to_string(), ActionSet::new(classes)));
    }
    Ok(out)
}

pub fn read_features<R: Read>(path: &Path, mut reader: R) -> Result<Array2<f64>> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut header = [0u8; 12];
    reader
        .read_exact(&mut header)
        .map_err(|_| fmt("truncated header".into()))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(fmt("bad magic, expected FVC1".into()));
    }
    let d = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = d * t * 4;
    if payload.len() != expected {
        return Err(fmt(format!(
            "header declares {d}x{t} values ({expected} bytes), payload has {} bytes (truncated or padded)",
            payload.len()
        )));
    }
    let mut x = Array2::<f64>::zeros((d, t));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        x[[i % d.max(1), i / d.max(1)]] = v as f64;
    }
    Ok(x)
}

/// Features are stored as f32; values are rounded on write.
pub fn write_features<W: Write>(mut writer: W, x: &Array2<f64>) -> Result<()> {
    let (d, t) = x.dim();
    writer.write_all(FEATURE_MAGIC)?;
    writer.write_all(&(d as u32).to_le_bytes())?;
    writer.write_all(&(t as u32).to_le_bytes())?;
    for col in x.columns() {
        for &v in col {
            writer.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn feature_path(root: &Path, id: &str) -> PathBuf {
    root.join("features").join(format!("{id}.fvec"))
}

fn label_path(root: &Path, id: &str) -> PathBuf {
    root.join("labels").join(format!("{id}.txt"))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let classes_path = root.join("classes.txt");
    let (vocabulary, background) = parse_classes(&classes_path, &read_to_string(&classes_path)?)?;
    let sets_path = root.join("sets.txt");
    let entries = parse_sets(&sets_path, &read_to_string(&sets_path)?, &vocabulary)?;
    let mut videos = Vec::with_capacity(entries.len());
    for (id, set) in entries {
        let fpath = feature_path(root, &id);
        let file = fs::File::open(&fpath).map_err(|e| Error::Format {
            path: fpath.clone(),
            msg: format!("cannot open features: {e}"),
        })?;
        let features = read_features(&fpath, io::BufReader::new(file))?;
        let lpath = label_path(root, &id);
        let labels =
            if lpath.exists() {
                let text = read_to_string(&lpath)?;
                let mut labels = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    let name = line.trim();
                    if name.is_empty() {
                        continue;
                    }
                    labels.push(vocabulary.id(name).ok_or_else(|| {
                        parse_err(&lpath, i + 1, format!("unknown class {name:?}"))
                    })?);
                }
                if labels.len() != features.ncols() {
                    return Err(Error::Format {
                        path: lpath,
                        msg: format!("{} labels for {} frames", labels.len(), features.ncols()),
                    });
                }
                Some(labels)
            } else {
                None
            };
        videos.push(Video {
            id,
            features,
            set,
            labels,
        });
    }
    let dataset = Dataset {
        vocabulary,
        background,
        videos,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(root.join("features"))?;
    let vocab = &dataset.vocabulary;
    let mut classes = String::new();
    if let Some(bg) = dataset.background {
        classes.push_str(&format!("background {}\n", vocab.name(bg).unwrap()));
    }
    for name in vocab.names() {
        classes.push_str(name);
        classes.push('\n');
    }
    fs::write(root.join("classes.txt"), classes)?;

    let mut sets = String::new();
    for v in &dataset.videos {
        let names: Vec<&str> = v.set.iter().map(|c| vocab.name(c).unwrap()).collect();
        sets.push_str(&format!("{}\t{}\n", v.id, names.join(",")));
    }
    fs::write(root.join("sets.txt"), sets)?;

    for v in &dataset.videos {
        let mut w = BufWriter::new(fs::File::create(feature_path(root, &v.id))?);
        write_features(&mut w, &v.features)?;
        w.flush()?;
        if let Some(labels) = &v.labels {
            fs::create_dir_all(root.join("labels"))?;
            let mut text = String::with_capacity(labels.len() * 4);
            for &c in labels {
                text.push_str(vocab.name(c).unwrap());
                text.push('\n');
            }
            fs::write(label_path(root, &v.id), text)?;
        }
    }
    Ok(())
}
