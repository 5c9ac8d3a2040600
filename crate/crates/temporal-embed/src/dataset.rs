//! Frame-feature datasets: an in-memory store of per-video feature sequences
//! plus the on-disk layout (JSON manifest + one raw little-endian f32 payload
//! per sequence, frame-major; optional per-frame state annotations as
//! little-endian i32).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One video: a frame-major feature matrix with optional label and per-frame
/// state ids. `features.len() == num_frames * dim` where `dim` lives on the
/// owning [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub num_frames: usize,
    pub features: Vec<f32>,
    pub label: Option<usize>,
    pub states: Option<Vec<i32>>,
}

/// A set of sequences sharing one feature dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    sequences: Vec<FeatureSequence>,
}

impl Dataset {
    /// Validates shapes, ids, and finiteness up front so that everything
    /// downstream can index without checking.
    pub fn new(dim: usize, sequences: Vec<FeatureSequence>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dim must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for seq in &sequences {
            if !seen.insert(seq.id.clone()) {
                return Err(Error::DuplicateSequenceId { id: seq.id.clone() });
            }
            if seq.num_frames == 0 {
                return Err(Error::InvalidConfig(format!(
                    "sequence {} has zero frames",
                    seq.id
                )));
            }
            if seq.features.len() != seq.num_frames * dim {
                return Err(Error::TruncatedPayload {
                    id: seq.id.clone(),
                    got: (seq.features.len() * 4) as u64,
                    expected: (seq.num_frames * dim * 4) as u64,
                    frames: seq.num_frames,
                    dim,
                });
            }
            for (i, v) in seq.features.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteFeature {
                        id: seq.id.clone(),
                        frame: i / dim,
                        component: i % dim,
                    });
                }
            }
            if let Some(states) = &seq.states {
                if states.len() != seq.num_frames {
                    return Err(Error::StatesLengthMismatch {
                        id: seq.id.clone(),
                        got: states.len(),
                        expected: seq.num_frames,
                    });
                }
            }
        }
        Ok(Dataset { dim, sequences })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[FeatureSequence] {
        &self.sequences
    }

    pub fn sequence(&self, seq: usize) -> &FeatureSequence {
        &self.sequences[seq]
    }

    /// Feature row of one frame.
    pub fn frame(&self, seq: usize, frame: usize) -> &[f32] {
        let s = &self.sequences[seq];
        assert!(frame < s.num_frames, "frame {frame} out of range for {}", s.id);
        &s.features[frame * self.dim..(frame + 1) * self.dim]
    }

    /// Labels for every sequence; errors on the first unlabeled one.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        self.sequences
            .iter()
            .map(|s| s.label.ok_or_else(|| Error::MissingLabel { id: s.id.clone() }))
            .collect()
    }
}

/// `k` indices evenly spread over `0..n`, endpoints included: element `i` is
/// `round(i * (n-1) / (k-1))` with halves rounded away from zero. Degenerate
/// cases: `n == 1` or `k == 1` yield `[0; k]`. Repeats appear when `k > n`.
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    assert!(n >= 1 && k >= 1, "uniform_indices needs n >= 1 and k >= 1");
    if n == 1 || k == 1 {
        return vec![0; k];
    }
    (0..k)
        .map(|i| (i as f64 * (n - 1) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    path: String,
    num_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states_path: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    sequences: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Loads a dataset given its manifest path; payload paths resolve relative to
/// the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Manifest {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let dim = manifest.dim;
    if dim == 0 {
        return Err(Error::InvalidConfig("manifest dim must be positive".into()));
    }

    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in manifest.sequences {
        let payload_path = base.join(&entry.path);
        let bytes = fs::read(&payload_path).map_err(io_err(&payload_path))?;
        let expected = entry.num_frames as u64 * dim as u64 * 4;
        if bytes.len() as u64 != expected {
            return Err(Error::TruncatedPayload {
                id: entry.id,
                got: bytes.len() as u64,
                expected,
                frames: entry.num_frames,
                dim,
            });
        }
        let features: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let states = match &entry.states_path {
            Some(rel) => {
                let states_path = base.join(rel);
                let sbytes = fs::read(&states_path).map_err(io_err(&states_path))?;
                let states: Vec<i32> = sbytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                if sbytes.len() % 4 != 0 || states.len() != entry.num_frames {
                    return Err(Error::StatesLengthMismatch {
                        id: entry.id,
                        got: states.len(),
                        expected: entry.num_frames,
                    });
                }
                Some(states)
            }
            None => None,
        };

        sequences.push(FeatureSequence {
            id: entry.id,
            num_frames: entry.num_frames,
            features,
            label: entry.label,
            states,
        });
    }
    Dataset::new(dim, sequences)
}

/// Writes the dataset under `dir` (payloads named by sequence position) and
/// returns the manifest path. Output bytes depend only on the dataset.
pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(d.len());
    for (i, seq) in d.sequences().iter().enumerate() {
        let payload_name = format!("seq_{i:05}.f32");
        let payload_path = dir.join(&payload_name);
        let mut bytes = Vec::with_capacity(seq.features.len() * 4);
        for v in &seq.features {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&payload_path, &bytes).map_err(io_err(&payload_path))?;

        let states_name = match &seq.states {
            Some(states) => {
                let name = format!("seq_{i:05}.states");
                let path = dir.join(&name);
                let mut sbytes = Vec::with_capacity(states.len() * 4);
                for s in states {
                    sbytes.extend_from_slice(&s.to_le_bytes());
                }
                fs::write(&path, &sbytes).map_err(io_err(&path))?;
                Some(name)
            }
            None => None,
        };

        entries.push(ManifestEntry {
            id: seq.id.clone(),
            path: payload_name,
            num_frames: seq.num_frames,
            label: seq.label,
            states_path: states_name,
        });
    }
    let manifest = Manifest { dim: d.dim(), sequences: entries };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(id: &str, dim: usize, frames: &[&[f32]]) -> FeatureSequence {
        let features: Vec<f32> = frames.iter().flat_map(|f| f.iter().copied()).collect();
        assert_eq!(features.len(), frames.len() * dim);
        FeatureSequence {
            id: id.into(),
            num_frames: frames.len(),
            features,
            label: None,
            states: None,
        }
    }

    #[test]
    fn uniform_indices_matches_hand_values() {
        assert_eq!(uniform_indices(12, 4), vec![0, 4, 7, 11]);
        assert_eq!(uniform_indices(19, 4), vec![0, 6, 12, 18]);
        assert_eq!(uniform_indices(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(uniform_indices(3, 4), vec![0, 1, 1, 2]);
        assert_eq!(uniform_indices(1, 4), vec![0, 0, 0, 0]);
        assert_eq!(uniform_indices(9, 1), vec![0]);
        assert_eq!(uniform_indices(2, 2), vec![0, 1]);
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut s0 = seq("walk", 3, &[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        s0.label = Some(2);
        s0.states = Some(vec![0, 7]);
        let s1 = seq("run", 3, &[&[-1.5, 0.25, 1e-20]]);
        let d = Dataset::new(3, vec![s0, s1]).unwrap();

        let manifest = save_dataset(&d, dir.path()).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(d, loaded);

        // Saving again produces byte-identical files.
        let dir2 = tempfile::tempdir().unwrap();
        let manifest2 = save_dataset(&loaded, dir2.path()).unwrap();
        assert_eq!(
            fs::read(&manifest).unwrap(),
            fs::read(&manifest2).unwrap()
        );
    }

    #[test]
    fn truncated_payload_names_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(2, vec![seq("clip", 2, &[&[1.0, 2.0], &[3.0, 4.0]])]).unwrap();
        let manifest = save_dataset(&d, dir.path()).unwrap();
        // Chop the payload to 3.5 frames' worth of a 2-frame file: any
        // non-multiple works; use 6 bytes = 1.5 frames.
        let payload = dir.path().join("seq_00000.f32");
        let bytes = fs::read(&payload).unwrap();
        fs::write(&payload, &bytes[..6]).unwrap();
        match load_dataset(&manifest) {
            Err(Error::TruncatedPayload { id, got, expected, .. }) => {
                assert_eq!(id, "clip");
                assert_eq!(got, 6);
                assert_eq!(expected, 16);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_feature_names_frame_and_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(2, vec![seq("clip", 2, &[&[1.0, 2.0], &[3.0, 4.0]])]).unwrap();
        let manifest = save_dataset(&d, dir.path()).unwrap();
        let payload = dir.path().join("seq_00000.f32");
        let mut bytes = fs::read(&payload).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&payload, &bytes).unwrap();
        match load_dataset(&manifest) {
            Err(Error::NonFiniteFeature { id, frame, component }) => {
                assert_eq!((id.as_str(), frame, component), ("clip", 1, 0));
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn unlabeled_dataset_omits_label_fields() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(1, vec![seq("a", 1, &[&[0.5]])]).unwrap();
        let manifest = save_dataset(&d, dir.path()).unwrap();
        let text = fs::read_to_string(manifest).unwrap();
        assert!(!text.contains("label"));
        assert!(!text.contains("states_path"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = seq("x", 1, &[&[1.0]]);
        let b = seq("x", 1, &[&[2.0]]);
        assert!(matches!(
            Dataset::new(1, vec![a, b]),
            Err(Error::DuplicateSequenceId { .. })
        ));
    }

    proptest! {
        #[test]
        fn uniform_indices_sorted_bounded_with_endpoints(n in 2usize..200, k in 2usize..40) {
            let idxs = uniform_indices(n, k);
            prop_assert_eq!(idxs.len(), k);
            prop_assert_eq!(idxs[0], 0);
            prop_assert_eq!(idxs[k - 1], n - 1);
            for w in idxs.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for &i in &idxs {
                prop_assert!(i < n);
            }
        }

        #[test]
        fn roundtrip_is_lossless(
            dim in 1usize..5,
            frames in proptest::collection::vec(1usize..6, 1..4),
            raw in proptest::collection::vec(-1e6f32..1e6, 0..128),
        ) {
            let mut sequences = Vec::new();
            let mut cursor = 0usize;
            for (i, &nf) in frames.iter().enumerate() {
                let need = nf * dim;
                let features: Vec<f32> = (0..need)
                    .map(|j| raw.get(cursor + j).copied().unwrap_or(0.25))
                    .collect();
                cursor += need;
                sequences.push(FeatureSequence {
                    id: format!("s{i}"),
                    num_frames: nf,
                    features,
                    label: Some(i % 3),
                    states: None,
                });
            }
            let d = Dataset::new(dim, sequences).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let manifest = save_dataset(&d, dir.path()).unwrap();
            let loaded = load_dataset(&manifest).unwrap();
            prop_assert_eq!(d, loaded);
        }
    }
}
