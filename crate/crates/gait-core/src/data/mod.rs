//! Sequence types, on-disk dataset layout, and loaders.
//!
//! Layout: `<root>/<identity>/<condition>-<seq>/<view>/<frame>.pgm` with one
//! `keypoints.txt` sidecar per view directory (one line per frame, 51
//! comma-separated numbers). A `manifest.txt` at the root records counts and
//! the generation config.

pub mod pgm;
pub mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::DataError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Walking condition of a captured sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Nm,
    Bg,
    Cl,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Nm, Condition::Bg, Condition::Cl];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Nm => "NM",
            Condition::Bg => "BG",
            Condition::Cl => "CL",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NM" => Ok(Condition::Nm),
            "BG" => Ok(Condition::Bg),
            "CL" => Ok(Condition::Cl),
            other => Err(format!("unknown condition {other:?} (expected NM, BG or CL)")),
        }
    }
}

/// One gait video: T binary frames plus labels. Pixels are stored as bytes
/// (0..=255) and exposed as values in [0, 1].
#[derive(Debug, Clone)]
pub struct SilhouetteSequence {
    pub identity: String,
    pub condition: Condition,
    pub seq_index: u32,
    pub view: u16,
    pub height: usize,
    pub width: usize,
    frames: Vec<u8>,
}

impl SilhouetteSequence {
    pub fn new(
        identity: String,
        condition: Condition,
        seq_index: u32,
        view: u16,
        height: usize,
        width: usize,
        frames: Vec<u8>,
    ) -> Result<Self, DataError> {
        if height == 0 || width == 0 || frames.is_empty() || !frames.len().is_multiple_of(height * width) {
            return Err(DataError::Generate(format!(
                "silhouette buffer of {} bytes does not tile {}x{} frames",
                frames.len(),
                height,
                width
            )));
        }
        Ok(SilhouetteSequence {
            identity,
            condition,
            seq_index,
            view,
            height,
            width,
            frames,
        })
    }

    /// Stable sequence id, also used as the deterministic tie-break key.
    pub fn id(&self) -> String {
        sequence_id(&self.identity, self.condition, self.seq_index, self.view)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len() / (self.height * self.width)
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let sz = self.height * self.width;
        &self.frames[t * sz..(t + 1) * sz]
    }

    /// Pixel in [0, 1].
    pub fn pixel(&self, t: usize, row: usize, col: usize) -> f64 {
        self.frame(t)[row * self.width + col] as f64 / 255.0
    }

    /// Contiguous window of `len` frames starting at `start`, wrapping
    /// around for short sequences, as a [1, len, h, w] tensor.
    pub fn window_tensor<T: Scalar>(&self, start: usize, len: usize) -> Tensor<T> {
        let t_total = self.frame_count();
        let sz = self.height * self.width;
        let mut data = Vec::with_capacity(len * sz);
        let inv = T::from_f64(1.0 / 255.0).unwrap();
        for i in 0..len {
            let t = (start + i) % t_total;
            for &b in self.frame(t) {
                data.push(T::from_u8(b).unwrap() * inv);
            }
        }
        Tensor::from_vec(&[1, len, self.height, self.width], data)
            .expect("window buffer matches shape")
    }

    pub fn full_tensor<T: Scalar>(&self) -> Tensor<T> {
        self.window_tensor(0, self.frame_count())
    }

    /// Owned contiguous window of `len` frames starting at `start`,
    /// wrapping around when the sequence is shorter than the window.
    pub fn crop_looped(&self, start: usize, len: usize) -> SilhouetteSequence {
        let t_total = self.frame_count();
        let sz = self.height * self.width;
        let mut frames = Vec::with_capacity(len * sz);
        for i in 0..len {
            frames.extend_from_slice(self.frame((start + i) % t_total));
        }
        SilhouetteSequence {
            identity: self.identity.clone(),
            condition: self.condition,
            seq_index: self.seq_index,
            view: self.view,
            height: self.height,
            width: self.width,
            frames,
        }
    }
}

/// COCO-ordered 17-joint keypoints per frame: (x px, y px, confidence).
#[derive(Debug, Clone)]
pub struct KeypointSequence {
    pub frames: Vec<[[f64; 3]; 17]>,
}

pub const JOINT_COUNT: usize = 17;

/// COCO joint order.
pub mod joints {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

impl KeypointSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Window with wrap-around, mirroring `SilhouetteSequence::window_tensor`.
    pub fn window(&self, start: usize, len: usize) -> KeypointSequence {
        let t_total = self.frames.len();
        let frames = (0..len).map(|i| self.frames[(start + i) % t_total]).collect();
        KeypointSequence { frames }
    }
}

pub fn sequence_id(identity: &str, condition: Condition, seq_index: u32, view: u16) -> String {
    format!("{identity}-{condition}-{seq_index:02}-{view:03}")
}

/// Keypoint sidecar text format: one line per frame,
/// x1,y1,c1,...,x17,y17,c17. Values round-trip exactly (shortest f64 form).
pub fn format_keypoints(k: &KeypointSequence) -> String {
    let mut out = String::new();
    for frame in &k.frames {
        let mut first = true;
        for joint in frame {
            for v in joint {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_keypoints(text: &str, path: &str) -> Result<KeypointSequence, DataError> {
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != JOINT_COUNT * 3 {
            return Err(DataError::parse(
                path,
                format!(
                    "line {}: expected {} values, got {}",
                    lineno + 1,
                    JOINT_COUNT * 3,
                    vals.len()
                ),
            ));
        }
        let mut frame = [[0.0f64; 3]; JOINT_COUNT];
        for (j, chunk) in vals.chunks_exact(3).enumerate() {
            frame[j] = [chunk[0], chunk[1], chunk[2]];
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(DataError::parse(path, "no keypoint frames"));
    }
    Ok(KeypointSequence { frames })
}

/// Handle to one sequence directory on disk.
#[derive(Debug, Clone)]
pub struct SequenceEntry {
    pub identity: String,
    pub condition: Condition,
    pub seq_index: u32,
    pub view: u16,
    pub frame_count: usize,
    pub dir: PathBuf,
}

impl SequenceEntry {
    pub fn id(&self) -> String {
        sequence_id(&self.identity, self.condition, self.seq_index, self.view)
    }
}

/// Index over a dataset root: entries sorted by id for deterministic order.
#[derive(Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<SequenceEntry>,
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn identities(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.identity.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn views(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = self.entries.iter().map(|e| e.view).collect();
        set.into_iter().collect()
    }

    pub fn select(
        &self,
        condition: Option<Condition>,
        seq_indices: Option<&[u32]>,
    ) -> Vec<&SequenceEntry> {
        self.entries
            .iter()
            .filter(|e| condition.is_none_or(|c| e.condition == c))
            .filter(|e| seq_indices.is_none_or(|s| s.contains(&e.seq_index)))
            .collect()
    }
}

fn dir_name_for(condition: Condition, seq_index: u32) -> String {
    format!("{condition}-{seq_index:02}")
}

fn view_dir_name(view: u16) -> String {
    format!("{view:03}")
}

/// Write one sequence atomically: fill a temp dir, then rename into place.
pub fn write_sequence(
    root: &Path,
    sil: &SilhouetteSequence,
    keys: &KeypointSequence,
) -> Result<(), DataError> {
    if sil.frame_count() != keys.frame_count() {
        return Err(DataError::Generate(format!(
            "sequence {}: {} silhouette frames vs {} keypoint frames",
            sil.id(),
            sil.frame_count(),
            keys.frame_count()
        )));
    }
    let seq_dir = root
        .join(&sil.identity)
        .join(dir_name_for(sil.condition, sil.seq_index));
    let final_dir = seq_dir.join(view_dir_name(sil.view));
    let tmp_dir = seq_dir.join(format!(".{}.tmp", view_dir_name(sil.view)));
    let p = |pb: &Path| pb.display().to_string();
    if tmp_dir.exists() {
        fs::remove_dir_all(&tmp_dir).map_err(|e| DataError::io(p(&tmp_dir), e))?;
    }
    fs::create_dir_all(&tmp_dir).map_err(|e| DataError::io(p(&tmp_dir), e))?;
    for t in 0..sil.frame_count() {
        let path = tmp_dir.join(format!("{t:04}.pgm"));
        pgm::write_pgm(&path, sil.width, sil.height, sil.frame(t))?;
    }
    let kp_path = tmp_dir.join("keypoints.txt");
    let mut f = fs::File::create(&kp_path).map_err(|e| DataError::io(p(&kp_path), e))?;
    f.write_all(format_keypoints(keys).as_bytes())
        .map_err(|e| DataError::io(p(&kp_path), e))?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| DataError::io(p(&final_dir), e))?;
    }
    fs::rename(&tmp_dir, &final_dir).map_err(|e| DataError::io(p(&final_dir), e))?;
    Ok(())
}

/// Scan a dataset root. In strict mode any malformed sequence directory is
/// an error; otherwise it is skipped and reported in `warnings`.
pub fn load_dataset(root: &Path, strict: bool) -> Result<DatasetIndex, DataError> {
    let p = |pb: &Path| pb.display().to_string();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let problem = |path: String, msg: String, warnings: &mut Vec<String>| -> Result<(), DataError> {
        if strict {
            Err(DataError::layout(path, msg))
        } else {
            warnings.push(format!("{path}: {msg}"));
            Ok(())
        }
    };
    if !root.is_dir() {
        return Err(DataError::layout(p(root), "dataset root is not a directory"));
    }
    for id_dir in sorted_dirs(root)? {
        let identity = name_of(&id_dir);
        if identity.starts_with('.') {
            continue;
        }
        for seq_dir in sorted_dirs(&id_dir)? {
            let seq_name = name_of(&seq_dir);
            if seq_name.starts_with('.') {
                continue;
            }
            let Some((cond_str, idx_str)) = seq_name.split_once('-') else {
                problem(
                    p(&seq_dir),
                    "expected <condition>-<seq> directory name".into(),
                    &mut warnings,
                )?;
                continue;
            };
            let (condition, seq_index) =
                match (cond_str.parse::<Condition>(), idx_str.parse::<u32>()) {
                    (Ok(c), Ok(i)) => (c, i),
                    _ => {
                        problem(
                            p(&seq_dir),
                            format!("cannot parse condition/sequence from {seq_name:?}"),
                            &mut warnings,
                        )?;
                        continue;
                    }
                };
            for view_dir in sorted_dirs(&seq_dir)? {
                let view_name = name_of(&view_dir);
                if view_name.starts_with('.') {
                    continue;
                }
                let Ok(view) = view_name.parse::<u16>() else {
                    problem(
                        p(&view_dir),
                        format!("cannot parse view from {view_name:?}"),
                        &mut warnings,
                    )?;
                    continue;
                };
                let frames = list_frames(&view_dir)?;
                if frames.is_empty() {
                    problem(p(&view_dir), "no .pgm frames".into(), &mut warnings)?;
                    continue;
                }
                let sidecar = view_dir.join("keypoints.txt");
                if !sidecar.is_file() {
                    problem(
                        p(&sidecar),
                        "missing keypoint sidecar".into(),
                        &mut warnings,
                    )?;
                    continue;
                }
                let text =
                    fs::read_to_string(&sidecar).map_err(|e| DataError::io(p(&sidecar), e))?;
                let kp_lines = text.lines().filter(|l| !l.trim().is_empty()).count();
                if kp_lines != frames.len() {
                    problem(
                        p(&sidecar),
                        format!("{} keypoint lines vs {} frames", kp_lines, frames.len()),
                        &mut warnings,
                    )?;
                    continue;
                }
                entries.push(SequenceEntry {
                    identity: identity.clone(),
                    condition,
                    seq_index,
                    view,
                    frame_count: frames.len(),
                    dir: view_dir,
                });
            }
        }
    }
    entries.sort_by_key(|e| e.id());
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        warnings,
    })
}

/// Load the pixel and keypoint payload for one indexed sequence.
pub fn load_sequence(
    entry: &SequenceEntry,
) -> Result<(SilhouetteSequence, KeypointSequence), DataError> {
    let p = |pb: &Path| pb.display().to_string();
    let frame_paths = list_frames(&entry.dir)?;
    let mut frames: Vec<u8> = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for fp in &frame_paths {
        let (w, h, data) = pgm::read_pgm(fp)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(DataError::layout(
                    p(fp),
                    format!("frame size {w}x{h} differs from first frame {}x{}", d.0, d.1),
                ));
            }
            _ => {}
        }
        frames.extend_from_slice(&data);
    }
    let (width, height) = dims.expect("at least one frame");
    let sidecar = entry.dir.join("keypoints.txt");
    let text = fs::read_to_string(&sidecar).map_err(|e| DataError::io(p(&sidecar), e))?;
    let keys = parse_keypoints(&text, &p(&sidecar))?;
    if keys.frame_count() != frame_paths.len() {
        return Err(DataError::layout(
            p(&sidecar),
            format!(
                "{} keypoint frames vs {} image frames",
                keys.frame_count(),
                frame_paths.len()
            ),
        ));
    }
    let sil = SilhouetteSequence::new(
        entry.identity.clone(),
        entry.condition,
        entry.seq_index,
        entry.view,
        height,
        width,
        frames,
    )?;
    Ok((sil, keys))
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    let rd = fs::read_dir(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| DataError::io(path.display().to_string(), e))?;
        if entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| DataError::io(dir.display().to_string(), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| DataError::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string()
}
