//! Prediction files: `video_id<TAB>class:length,class:length,...` per line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::Vocabulary;
use crate::segmentation::{Segment, Segmentation};

pub fn format_predictions(
    entries: &[(String, Segmentation)],
    vocab: &Vocabulary,
) -> Result<String> {
    let mut out = String::new();
    for (id, seg) in entries {
        out.push_str(id);
        out.push('\t');
        for (i, s) in seg.segments().iter().enumerate() {
            let name = vocab.name(s.class).ok_or(Error::UnknownClass(s.class))?;
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{name}:{}", s.len));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_predictions(
    path: &Path,
    text: &str,
    vocab: &Vocabulary,
) -> Result<Vec<(String, Segmentation)>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out: Vec<(String, Segmentation)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, body) = raw
            .split_once('\t')
            .ok_or_else(|| err(n, "expected `video_id<TAB>class:length,...`".into()))?;
        if out.iter().any(|(v, _)| v == id) {
            return Err(err(n, format!("duplicate video {id:?}")));
        }
        let mut segments = Vec::new();
        for item in body.trim().split(',') {
            let (name, len) = item
                .split_once(':')
                .ok_or_else(|| err(n, format!("segment {item:?} is not class:length")))?;
            let class = vocab
                .id(name)
                .ok_or_else(|| err(n, format!("unknown class {name:?}")))?;
            let len: usize = len
                .parse()
                .map_err(|_| err(n, format!("bad segment length {len:?}")))?;
            segments.push(Segment::new(class, len));
        }
        let seg = Segmentation::new(segments).map_err(|e| err(n, e.to_string()))?;
        out.push((id.to_string(), seg));
    }
    Ok(out)
}

pub fn write_predictions(
    path: &Path,
    entries: &[(String, Segmentation)],
    vocab: &Vocabulary,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format_predictions(entries, vocab)?)?;
    Ok(())
}

pub fn read_predictions(path: &Path, vocab: &Vocabulary) -> Result<Vec<(String, Segmentation)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: format!("cannot read predictions: {e}"),
    })?;
    parse_predictions(path, &text, vocab)
}
