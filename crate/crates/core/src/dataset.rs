//! Domain types, on-disk formats and ingestion.
//!
//! Embeddings live in a raw little-endian `f32` file (row-major,
//! `num_frames x dim`) next to a JSON header. Annotations are JSON lines.
//! A manifest ties videos, annotation files and the interaction vocabulary
//! together; paths inside it are relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Per-frame feature vectors of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub video_id: String,
    pub fps: f64,
    dim: usize,
    rows: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(video_id: impl Into<String>, fps: f64, dim: usize, rows: Vec<f32>) -> Result<Self> {
        let video_id = video_id.into();
        if dim == 0 {
            return Err(Error::InvalidInput(format!("video {video_id}: dim must be >= 1")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidInput(format!("video {video_id}: fps must be positive")));
        }
        if rows.is_empty() || rows.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "video {video_id}: {} values do not form >= 1 rows of width {dim}",
                rows.len()
            )));
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding {
                video_id,
                frame: pos / dim,
            });
        }
        Ok(Self {
            video_id,
            fps,
            dim,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_frames(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.rows[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.rows
    }

    /// The first `num_frames` frames as a new matrix.
    pub fn prefix(&self, num_frames: usize) -> Result<Self> {
        let n = num_frames.min(self.num_frames());
        Self::new(
            self.video_id.clone(),
            self.fps,
            self.dim,
            self.rows[..n * self.dim].to_vec(),
        )
    }

    /// Mean of rows `start..=stop`, in f64.
    pub fn mean_rows(&self, start: usize, stop: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for f in start..=stop {
            for (a, &v) in acc.iter_mut().zip(self.row(f)) {
                *a += v as f64;
            }
        }
        let n = (stop - start + 1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// A labelled interaction interval; frame bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipAnnotation {
    pub video_id: String,
    pub start_frame: usize,
    pub stop_frame: usize,
    pub verb_id: usize,
    pub noun_id: usize,
}

impl ClipAnnotation {
    pub fn overlaps(&self, start: usize, stop: usize) -> bool {
        self.start_frame <= stop && start <= self.stop_frame
    }

    pub fn len(&self) -> usize {
        self.stop_frame - self.start_frame + 1
    }

    pub fn center_frame(&self) -> usize {
        (self.start_frame + self.stop_frame) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionVocab {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    pub interactions: Vec<(usize, usize)>,
    #[serde(skip)]
    index: HashMap<(usize, usize), usize>,
}

impl InteractionVocab {
    pub fn new(verbs: Vec<String>, nouns: Vec<String>, interactions: Vec<(usize, usize)>) -> Result<Self> {
        let mut vocab = Self {
            verbs,
            nouns,
            interactions,
            index: HashMap::new(),
        };
        vocab.reindex()?;
        Ok(vocab)
    }

    fn reindex(&mut self) -> Result<()> {
        fn no_dups(names: &[String], what: &str) -> Result<()> {
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if !seen.insert(n) {
                    return Err(Error::parse("vocab", format!("duplicate {what} {n:?}")));
                }
            }
            Ok(())
        }
        no_dups(&self.verbs, "verb")?;
        no_dups(&self.nouns, "noun")?;
        self.index.clear();
        for (i, &(v, n)) in self.interactions.iter().enumerate() {
            if v >= self.verbs.len() || n >= self.nouns.len() {
                return Err(Error::parse("vocab", format!("interaction ({v}, {n}) out of range")));
            }
            if self.index.insert((v, n), i).is_some() {
                return Err(Error::parse("vocab", format!("duplicate interaction ({v}, {n})")));
            }
        }
        Ok(())
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn num_nouns(&self) -> usize {
        self.nouns.len()
    }

    /// Size of the affordance label space.
    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn interaction_id(&self, verb_id: usize, noun_id: usize) -> Option<usize> {
        self.index.get(&(verb_id, noun_id)).copied()
    }

    pub fn interaction_of(&self, ann: &ClipAnnotation) -> Option<usize> {
        self.interaction_id(ann.verb_id, ann.noun_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Validated collection of videos, annotations and vocabulary. Immutable
/// after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: BTreeMap<String, EmbeddingMatrix>,
    pub annotations: Vec<ClipAnnotation>,
    pub vocab: InteractionVocab,
    pub kitchen_of: BTreeMap<String, String>,
    pub split_of: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(
        videos: Vec<EmbeddingMatrix>,
        annotations: Vec<ClipAnnotation>,
        vocab: InteractionVocab,
        kitchen_of: BTreeMap<String, String>,
        split_of: BTreeMap<String, Split>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for v in videos {
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(Error::DimMismatch {
                        expected: d,
                        found: v.dim(),
                    })
                }
                _ => {}
            }
            if map.contains_key(&v.video_id) {
                return Err(Error::InvalidInput(format!("duplicate video {}", v.video_id)));
            }
            map.insert(v.video_id.clone(), v);
        }
        for a in &annotations {
            let video = map
                .get(&a.video_id)
                .ok_or_else(|| Error::InvalidInput(format!("annotation references unknown video {}", a.video_id)))?;
            if a.start_frame > a.stop_frame || a.stop_frame >= video.num_frames() {
                return Err(Error::AnnotationOutOfRange {
                    video_id: a.video_id.clone(),
                    start: a.start_frame,
                    stop: a.stop_frame,
                    num_frames: video.num_frames(),
                });
            }
            if vocab.interaction_of(a).is_none() {
                return Err(Error::InvalidInput(format!(
                    "annotation ({}, {}) in {} is not in the interaction vocabulary",
                    a.verb_id, a.noun_id, a.video_id
                )));
            }
        }
        Ok(Self {
            videos: map,
            annotations,
            vocab,
            kitchen_of,
            split_of,
        })
    }

    pub fn dim(&self) -> usize {
        self.videos.values().next().map_or(0, |v| v.dim())
    }

    pub fn video(&self, id: &str) -> Result<&EmbeddingMatrix> {
        self.videos
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown video {id}")))
    }

    /// Annotations of one video ordered by start frame.
    pub fn clips_of(&self, video_id: &str) -> Vec<&ClipAnnotation> {
        let mut clips: Vec<_> = self.annotations.iter().filter(|a| a.video_id == video_id).collect();
        clips.sort_by_key(|a| (a.start_frame, a.stop_frame));
        clips
    }

    pub fn kitchen(&self, video_id: &str) -> &str {
        self.kitchen_of.get(video_id).map_or("", String::as_str)
    }

    pub fn split(&self, video_id: &str) -> Split {
        self.split_of.get(video_id).copied().unwrap_or_default()
    }

    pub fn video_ids(&self, split: Split) -> Vec<String> {
        self.videos
            .keys()
            .filter(|id| self.split(id) == split)
            .cloned()
            .collect()
    }
}

// ---------------------------------------------------------------------------
// frame-rate subsampling

/// Maps original frame indices onto the frames kept by [`subsample_fps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRemap {
    pub stride: usize,
    pub kept: usize,
}

impl FrameRemap {
    /// Index of the nearest kept frame; ties go to the earlier one.
    pub fn map(&self, frame: usize) -> usize {
        let (q, r) = (frame / self.stride, frame % self.stride);
        let idx = if 2 * r > self.stride { q + 1 } else { q };
        idx.min(self.kept - 1)
    }

    pub fn map_clip(&self, clip: &ClipAnnotation) -> ClipAnnotation {
        ClipAnnotation {
            start_frame: self.map(clip.start_frame),
            stop_frame: self.map(clip.stop_frame),
            ..clip.clone()
        }
    }
}

/// Keep every `round(fps / target_fps)`-th frame starting at frame 0.
pub fn subsample_fps(m: &EmbeddingMatrix, target_fps: f64) -> Result<(EmbeddingMatrix, FrameRemap)> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(Error::Config(format!("target fps must be positive, got {target_fps}")));
    }
    if target_fps > m.fps * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "target fps {target_fps} exceeds source fps {} of {}",
            m.fps, m.video_id
        )));
    }
    let stride = ((m.fps / target_fps).round() as usize).max(1);
    let kept: Vec<usize> = (0..m.num_frames()).step_by(stride).collect();
    let mut rows = Vec::with_capacity(kept.len() * m.dim());
    for &f in &kept {
        rows.extend_from_slice(m.row(f));
    }
    let fps = m.fps / stride as f64;
    let out = EmbeddingMatrix::new(m.video_id.clone(), fps, m.dim(), rows)?;
    Ok((
        out,
        FrameRemap {
            stride,
            kept: kept.len(),
        },
    ))
}

// ---------------------------------------------------------------------------
// file formats

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingHeader {
    pub video_id: String,
    pub num_frames: usize,
    pub dim: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub video_id: String,
    /// Raw f32 file, relative to the manifest directory.
    pub embeddings: String,
    /// JSON header file, relative to the manifest directory.
    pub header: String,
    pub kitchen: String,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestVocab {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    pub interactions: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub videos: Vec<ManifestVideo>,
    pub annotations: Vec<String>,
    pub vocab: ManifestVocab,
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::parse("json", e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// Read every non-empty line of a JSON-lines file.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::parse("json", e))?;
        buf.write_all(b"\n").expect("write to vec");
    }
    write_bytes(path, &buf)
}

/// Load one embedding file plus its JSON header.
pub fn read_embeddings(data_path: &Path, header_path: &Path) -> Result<EmbeddingMatrix> {
    let header: EmbeddingHeader = read_json(header_path)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let expected = header.num_frames * header.dim * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            data_path.display().to_string(),
            format!("expected {expected} bytes for {}x{}, found {}", header.num_frames, header.dim, bytes.len()),
        ));
    }
    let rows = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(header.video_id, header.fps, header.dim, rows)
}

pub fn write_embeddings(m: &EmbeddingMatrix, data_path: &Path, header_path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.rows.len() * 4);
    for v in &m.rows {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(data_path, &bytes)?;
    write_json(
        header_path,
        &EmbeddingHeader {
            video_id: m.video_id.clone(),
            num_frames: m.num_frames(),
            dim: m.dim(),
            fps: m.fps,
        },
    )
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Subsample every video to this rate at ingestion; `None` keeps frames as stored.
    pub target_fps: Option<f64>,
}

/// Load and validate a dataset from its manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_dataset_with(manifest_path, LoadOptions::default())
}

pub fn load_dataset_with(manifest_path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let manifest: Manifest = read_json(manifest_path)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            what: "manifest".into(),
            expected: MANIFEST_SCHEMA_VERSION,
            found: manifest.schema_version,
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut videos = Vec::new();
    let mut remaps = HashMap::new();
    let mut kitchen_of = BTreeMap::new();
    let mut split_of = BTreeMap::new();
    for mv in &manifest.videos {
        let m = read_embeddings(&base.join(&mv.embeddings), &base.join(&mv.header))?;
        if m.video_id != mv.video_id {
            return Err(Error::parse(
                mv.header.clone(),
                format!("header names video {} but manifest says {}", m.video_id, mv.video_id),
            ));
        }
        let m = match opts.target_fps {
            Some(target) => {
                let (sub, remap) = subsample_fps(&m, target)?;
                remaps.insert(mv.video_id.clone(), (m.num_frames(), remap));
                sub
            }
            None => m,
        };
        kitchen_of.insert(mv.video_id.clone(), mv.kitchen.clone());
        split_of.insert(mv.video_id.clone(), mv.split);
        videos.push(m);
    }
    let mut annotations = Vec::new();
    for rel in &manifest.annotations {
        let clips: Vec<ClipAnnotation> = read_jsonl(&base.join(rel))?;
        annotations.extend(clips);
    }
    for a in &mut annotations {
        if let Some(&(num_frames, remap)) = remaps.get(&a.video_id) {
            if a.start_frame > a.stop_frame || a.stop_frame >= num_frames {
                return Err(Error::AnnotationOutOfRange {
                    video_id: a.video_id.clone(),
                    start: a.start_frame,
                    stop: a.stop_frame,
                    num_frames,
                });
            }
            *a = remap.map_clip(a);
        }
    }
    let vocab = InteractionVocab::new(manifest.vocab.verbs, manifest.vocab.nouns, manifest.vocab.interactions)?;
    Dataset::new(videos, annotations, vocab, kitchen_of, split_of)
}

/// Write a dataset in the manifest layout under `dir`; returns the manifest path.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mut videos = Vec::new();
    for (id, m) in &ds.videos {
        let embeddings = format!("embeddings/{id}.f32");
        let header = format!("embeddings/{id}.json");
        write_embeddings(m, &dir.join(&embeddings), &dir.join(&header))?;
        videos.push(ManifestVideo {
            video_id: id.clone(),
            embeddings,
            header,
            kitchen: ds.kitchen(id).to_string(),
            split: ds.split(id),
        });
    }
    write_jsonl(&dir.join("annotations.jsonl"), &ds.annotations)?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        videos,
        annotations: vec!["annotations.jsonl".into()],
        vocab: ManifestVocab {
            verbs: ds.vocab.verbs.clone(),
            nouns: ds.vocab.nouns.clone(),
            interactions: ds.vocab.interactions.clone(),
        },
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
