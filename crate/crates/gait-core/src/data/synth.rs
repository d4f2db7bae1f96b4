//! Synthetic multi-view gait data: an articulated 2-D stick walker with
//! sinusoidal joint angles, projected at a view angle and rasterized with
//! limb thickness. Keypoints are the projected joints, so silhouettes and
//! keypoints are consistent by construction.
//!
//! Generation is a pure function of (identity, view, condition, length,
//! rng state). Gait phase advances as an integer frame counter modulo the
//! stride period, so frame t and frame t + period are bit-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::DataError;

use super::{
    joints, write_sequence, Condition, KeypointSequence, SilhouetteSequence, JOINT_COUNT,
};

/// Gait parameters of one synthetic subject. Lengths are ratios of a
/// nominal body unit; the stride frequency is 1/period cycles per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerIdentity {
    pub femur: f64,
    pub tibia: f64,
    pub humerus: f64,
    pub forearm: f64,
    pub torso: f64,
    pub body_width: f64,
    pub head_radius: f64,
    /// Stride period in frames; frequency = 1/period.
    pub period: u32,
    /// Hip swing amplitude in radians.
    pub amplitude: f64,
    /// Gait phase offset in frames (0..period).
    pub phase: u32,
}

impl WalkerIdentity {
    pub fn frequency(&self) -> f64 {
        1.0 / self.period as f64
    }
}

/// Documented draw ranges. Continuous parameters are drawn on discrete
/// levels spaced wider than `MIN_SEPARATION`, so distinct draws are
/// distinguishable; rejection sampling enforces pairwise separation.
pub mod ranges {
    pub const FEMUR: (f64, f64) = (0.72, 0.96);
    pub const TIBIA: (f64, f64) = (0.68, 0.92);
    pub const HUMERUS: (f64, f64) = (0.50, 0.68);
    pub const FOREARM: (f64, f64) = (0.46, 0.62);
    pub const TORSO: (f64, f64) = (0.92, 1.16);
    pub const BODY_WIDTH: (f64, f64) = (0.30, 0.46);
    pub const HEAD_RADIUS: (f64, f64) = (0.15, 0.22);
    pub const PERIOD: (u32, u32) = (8, 20);
    pub const AMPLITUDE: (f64, f64) = (0.42, 0.66);
    pub const LEVELS: usize = 9;
    pub const MIN_SEPARATION: f64 = 0.02;
}

fn draw_level(rng: &mut ChaCha12Rng, range: (f64, f64)) -> f64 {
    let i = rng.random_range(0..ranges::LEVELS);
    range.0 + (range.1 - range.0) * i as f64 / (ranges::LEVELS - 1) as f64
}

/// Raw identity draw from the documented ranges.
pub fn gen_identity(rng: &mut ChaCha12Rng) -> WalkerIdentity {
    let femur = draw_level(rng, ranges::FEMUR);
    let tibia = draw_level(rng, ranges::TIBIA);
    let humerus = draw_level(rng, ranges::HUMERUS);
    let forearm = draw_level(rng, ranges::FOREARM);
    let torso = draw_level(rng, ranges::TORSO);
    let body_width = draw_level(rng, ranges::BODY_WIDTH);
    let head_radius = draw_level(rng, ranges::HEAD_RADIUS);
    let period = rng.random_range(ranges::PERIOD.0..=ranges::PERIOD.1);
    let amplitude = draw_level(rng, ranges::AMPLITUDE);
    let phase = rng.random_range(0..period);
    WalkerIdentity {
        femur,
        tibia,
        humerus,
        forearm,
        torso,
        body_width,
        head_radius,
        period,
        amplitude,
        phase,
    }
}

/// Two identities are distinguishable when they differ in stride frequency
/// or in at least one limb ratio by the minimum separation.
pub fn is_separated(a: &WalkerIdentity, b: &WalkerIdentity) -> bool {
    if a.period != b.period {
        return true;
    }
    let sep = ranges::MIN_SEPARATION;
    [
        (a.femur, b.femur),
        (a.tibia, b.tibia),
        (a.humerus, b.humerus),
        (a.forearm, b.forearm),
        (a.torso, b.torso),
    ]
    .iter()
    .any(|(x, y)| (x - y).abs() >= sep)
}

/// Draw `count` pairwise-separated identities (rejection sampling).
pub fn gen_identities(rng: &mut ChaCha12Rng, count: usize) -> Result<Vec<WalkerIdentity>, DataError> {
    let mut out: Vec<WalkerIdentity> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(DataError::Generate(format!(
                "could not draw {count} separated identities in {attempts} attempts"
            )));
        }
        let cand = gen_identity(rng);
        if out.iter().all(|prev| is_separated(prev, &cand)) {
            out.push(cand);
        }
    }
    Ok(out)
}

/// sin/cos of a view angle in degrees, exact on multiples of 90 so that
/// opposite views project to exact mirror images.
fn view_sincos(deg: u16) -> (f64, f64) {
    match deg % 360 {
        0 => (0.0, 1.0),
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        270 => (-1.0, 0.0),
        d => {
            let r = (d as f64).to_radians();
            (r.sin(), r.cos())
        }
    }
}

/// A 3-D point in walker space: x = walking direction, y = lateral,
/// z = up.
#[derive(Debug, Clone, Copy)]
struct P3 {
    x: f64,
    y: f64,
    z: f64,
}

fn p3(x: f64, y: f64, z: f64) -> P3 {
    P3 { x, y, z }
}

/// Capsule (segment with radius) in projected pixel space.
struct Capsule {
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    r: f64,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ru: f64,
    rv: f64,
}

struct Projector {
    sin_v: f64,
    cos_v: f64,
    scale: f64,
    cx: f64,
    base_y: f64,
}

impl Projector {
    fn project(&self, p: P3) -> (f64, f64) {
        let u = p.x * self.sin_v + p.y * self.cos_v;
        (self.cx + u * self.scale, self.base_y - p.z * self.scale)
    }
}

/// Full skeleton at one frame, in walker space.
struct SkeletonFrame {
    joints3d: [P3; JOINT_COUNT],
    pelvis: P3,
    shoulder_mid: P3,
    head_center: P3,
}

fn skeleton_at(id: &WalkerIdentity, k: u32) -> SkeletonFrame {
    let theta = 2.0 * std::f64::consts::PI * k as f64 / id.period as f64;
    let leg_len = id.femur + id.tibia;
    let hip_w = id.body_width * 0.62;
    let bob = 0.03 * (2.0 * theta).cos();
    let hip_z = leg_len * 0.955 + bob;

    let pelvis = p3(0.0, 0.0, hip_z);
    let shoulder_mid = p3(0.0, 0.0, hip_z + id.torso);
    let neck = 0.12;
    let head_center = p3(0.0, 0.0, shoulder_mid.z + neck + id.head_radius);

    // Legs swing antiphase; the knee flexes forward only.
    let leg = |phase_shift: f64, side: f64| -> (P3, P3, P3) {
        let a = id.amplitude * (theta + phase_shift).sin();
        let knee_flex = 1.05 * id.amplitude * (1.0 - (theta + phase_shift - 0.7).cos()) / 2.0;
        let hip = p3(0.0, side * hip_w / 2.0, hip_z);
        let knee = p3(
            hip.x + id.femur * a.sin(),
            hip.y,
            hip.z - id.femur * a.cos(),
        );
        let shank = a - knee_flex;
        let ankle = p3(
            knee.x + id.tibia * shank.sin(),
            knee.y,
            knee.z - id.tibia * shank.cos(),
        );
        (hip, knee, ankle)
    };
    let (l_hip, l_knee, l_ankle) = leg(0.0, 1.0);
    let (r_hip, r_knee, r_ankle) = leg(std::f64::consts::PI, -1.0);

    // Arms swing antiphase with the same-side leg, with a bent elbow.
    let arm = |phase_shift: f64, side: f64| -> (P3, P3, P3) {
        let g = 0.62 * id.amplitude * (theta + phase_shift).sin();
        let elbow_flex = 0.35 + 0.18 * (1.0 + (theta + phase_shift).sin()) / 2.0;
        let shoulder = p3(0.0, side * id.body_width / 2.0, shoulder_mid.z);
        let elbow = p3(
            shoulder.x + id.humerus * g.sin(),
            shoulder.y,
            shoulder.z - id.humerus * g.cos(),
        );
        let fore = g + elbow_flex;
        let wrist = p3(
            elbow.x + id.forearm * fore.sin(),
            elbow.y,
            elbow.z - id.forearm * fore.cos(),
        );
        (shoulder, elbow, wrist)
    };
    let (l_shoulder, l_elbow, l_wrist) = arm(std::f64::consts::PI, 1.0);
    let (r_shoulder, r_elbow, r_wrist) = arm(0.0, -1.0);

    let hr = id.head_radius;
    let mut joints3d = [p3(0.0, 0.0, 0.0); JOINT_COUNT];
    joints3d[joints::NOSE] = p3(hr * 0.8, 0.0, head_center.z - hr * 0.1);
    joints3d[joints::LEFT_EYE] = p3(hr * 0.6, hr * 0.35, head_center.z + hr * 0.25);
    joints3d[joints::RIGHT_EYE] = p3(hr * 0.6, -hr * 0.35, head_center.z + hr * 0.25);
    joints3d[joints::LEFT_EAR] = p3(0.0, hr * 0.8, head_center.z + hr * 0.1);
    joints3d[joints::RIGHT_EAR] = p3(0.0, -hr * 0.8, head_center.z + hr * 0.1);
    joints3d[joints::LEFT_SHOULDER] = l_shoulder;
    joints3d[joints::RIGHT_SHOULDER] = r_shoulder;
    joints3d[joints::LEFT_ELBOW] = l_elbow;
    joints3d[joints::RIGHT_ELBOW] = r_elbow;
    joints3d[joints::LEFT_WRIST] = l_wrist;
    joints3d[joints::RIGHT_WRIST] = r_wrist;
    joints3d[joints::LEFT_HIP] = l_hip;
    joints3d[joints::RIGHT_HIP] = r_hip;
    joints3d[joints::LEFT_KNEE] = l_knee;
    joints3d[joints::RIGHT_KNEE] = r_knee;
    joints3d[joints::LEFT_ANKLE] = l_ankle;
    joints3d[joints::RIGHT_ANKLE] = r_ankle;

    SkeletonFrame {
        joints3d,
        pelvis,
        shoulder_mid,
        head_center,
    }
}

fn dist2_point_segment(px: f64, py: f64, c: &Capsule) -> f64 {
    let vx = c.bx - c.ax;
    let vy = c.by - c.ay;
    let wx = px - c.ax;
    let wy = py - c.ay;
    let vv = vx * vx + vy * vy;
    let t = if vv > 0.0 {
        ((wx * vx + wy * vy) / vv).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = wx - t * vx;
    let dy = wy - t * vy;
    dx * dx + dy * dy
}

/// Render one sequence. The rng provides per-sequence phase variation and,
/// when `jitter_std > 0`, Gaussian noise added to the keypoint coordinates
/// (the silhouette is left untouched).
#[allow(clippy::too_many_arguments)]
pub fn render_sequence(
    id: &WalkerIdentity,
    view: u16,
    condition: Condition,
    frames: usize,
    height: usize,
    width: usize,
    rng: &mut ChaCha12Rng,
    jitter_std: f64,
) -> Result<(Vec<u8>, KeypointSequence), DataError> {
    if view >= 360 {
        return Err(DataError::Generate(format!(
            "unknown view {view} (expected degrees in 0..360)"
        )));
    }
    if frames == 0 || height < 16 || width < 12 {
        return Err(DataError::Generate(format!(
            "invalid render request: {frames} frames at {height}x{width}"
        )));
    }
    let seq_phase: u32 = rng.random_range(0..id.period);

    let (sin_v, cos_v) = view_sincos(view);
    let standing = id.femur + id.tibia + id.torso + 0.12 + 2.0 * id.head_radius + 0.06;
    let margin = 3.0;
    let scale = (height as f64 - 2.0 * margin) / standing;
    let proj = Projector {
        sin_v,
        cos_v,
        scale,
        cx: width as f64 / 2.0,
        base_y: height as f64 - margin,
    };

    let limb_r = 0.072;
    let (torso_mul, femur_mul) = match condition {
        Condition::Cl => (2.1, 2.1),
        _ => (1.0, 1.0),
    };

    let mut pixels = vec![0u8; frames * height * width];
    let mut kp_frames = Vec::with_capacity(frames);

    for t in 0..frames {
        let k = (t as u32 + id.phase + seq_phase) % id.period;
        let sk = skeleton_at(id, k);
        let j = &sk.joints3d;

        let seg = |a: P3, b: P3, r: f64| -> Capsule {
            let (ax, ay) = proj.project(a);
            let (bx, by) = proj.project(b);
            Capsule {
                ax,
                ay,
                bx,
                by,
                r: r * scale,
            }
        };
        let foot = |ankle: P3| p3(ankle.x + 0.2, ankle.y, ankle.z - 0.02);

        let mut capsules = vec![
            seg(sk.pelvis, sk.shoulder_mid, id.body_width * 0.5 * torso_mul),
            seg(sk.shoulder_mid, sk.head_center, 0.06),
            seg(j[joints::LEFT_HIP], j[joints::LEFT_KNEE], limb_r * femur_mul),
            seg(j[joints::RIGHT_HIP], j[joints::RIGHT_KNEE], limb_r * femur_mul),
            seg(j[joints::LEFT_KNEE], j[joints::LEFT_ANKLE], limb_r * 0.9),
            seg(j[joints::RIGHT_KNEE], j[joints::RIGHT_ANKLE], limb_r * 0.9),
            seg(j[joints::LEFT_ANKLE], foot(j[joints::LEFT_ANKLE]), 0.05),
            seg(j[joints::RIGHT_ANKLE], foot(j[joints::RIGHT_ANKLE]), 0.05),
            seg(j[joints::LEFT_SHOULDER], j[joints::LEFT_ELBOW], limb_r * 0.8),
            seg(j[joints::RIGHT_SHOULDER], j[joints::RIGHT_ELBOW], limb_r * 0.8),
            seg(j[joints::LEFT_ELBOW], j[joints::LEFT_WRIST], limb_r * 0.72),
            seg(j[joints::RIGHT_ELBOW], j[joints::RIGHT_WRIST], limb_r * 0.72),
        ];
        if condition == Condition::Cl {
            // Coat: a broad capsule from the shoulders down past mid-thigh,
            // occluding the gap between the legs.
            let coat_bottom = p3(0.0, 0.0, sk.pelvis.z - id.femur * 0.45);
            capsules.push(seg(sk.shoulder_mid, coat_bottom, id.body_width * 0.78));
        }
        // Head circle as a zero-length capsule.
        capsules.push(seg(sk.head_center, sk.head_center, id.head_radius));

        let blob = if condition == Condition::Bg {
            let (cx, cy) = proj.project(j[joints::LEFT_WRIST]);
            Some(Ellipse {
                cx,
                cy: cy + 0.08 * scale,
                ru: 0.13 * scale,
                rv: 0.09 * scale,
            })
        } else {
            None
        };

        let frame = &mut pixels[t * height * width..(t + 1) * height * width];
        for row in 0..height {
            let py = row as f64 + 0.5;
            for col in 0..width {
                let px = col as f64 + 0.5;
                let mut lit = capsules
                    .iter()
                    .any(|c| dist2_point_segment(px, py, c) <= c.r * c.r);
                if !lit {
                    if let Some(e) = &blob {
                        let du = (px - e.cx) / e.ru;
                        let dv = (py - e.cy) / e.rv;
                        lit = du * du + dv * dv <= 1.0;
                    }
                }
                if lit {
                    frame[row * width + col] = 255;
                }
            }
        }

        let mut kp = [[0.0f64; 3]; JOINT_COUNT];
        for (slot, &joint) in kp.iter_mut().zip(j.iter()) {
            let (x, y) = proj.project(joint);
            slot[0] = x.clamp(0.0, width as f64 - 1.0);
            slot[1] = y.clamp(0.0, height as f64 - 1.0);
            slot[2] = 1.0;
        }
        if jitter_std > 0.0 {
            use rand_distr::Distribution;
            let normal = rand_distr::Normal::new(0.0, jitter_std)
                .map_err(|e| DataError::Generate(format!("jitter: {e}")))?;
            for slot in kp.iter_mut() {
                slot[0] = (slot[0] + normal.sample(rng)).clamp(0.0, width as f64 - 1.0);
                slot[1] = (slot[1] + normal.sample(rng)).clamp(0.0, height as f64 - 1.0);
            }
        }
        kp_frames.push(kp);
    }

    Ok((pixels, KeypointSequence { frames: kp_frames }))
}

/// Dataset generation settings.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub identities: usize,
    pub views: Vec<u16>,
    pub conditions: Vec<Condition>,
    pub sequences_per_cell: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub jitter_std: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            identities: 8,
            views: (0..=180).step_by(18).collect(),
            conditions: Condition::ALL.to_vec(),
            sequences_per_cell: 2,
            frames: 40,
            height: 64,
            width: 44,
            jitter_std: 0.0,
        }
    }
}

impl GenConfig {
    pub fn sequence_count(&self) -> usize {
        self.identities * self.views.len() * self.conditions.len() * self.sequences_per_cell
    }
}

/// Generate and write the full dataset, plus a root manifest.
pub fn write_dataset(root: &Path, cfg: &GenConfig, rng: &mut ChaCha12Rng) -> Result<(), DataError> {
    if cfg.identities == 0 || cfg.views.is_empty() || cfg.conditions.is_empty() {
        return Err(DataError::Generate("empty dataset configuration".into()));
    }
    for &v in &cfg.views {
        if v >= 360 {
            return Err(DataError::Generate(format!("unknown view {v} in view list")));
        }
    }
    let p = |pb: &Path| pb.display().to_string();
    fs::create_dir_all(root).map_err(|e| DataError::io(p(root), e))?;
    let identities = gen_identities(rng, cfg.identities)?;
    for (i, id) in identities.iter().enumerate() {
        let label = format!("{:03}", i + 1);
        for &cond in &cfg.conditions {
            for seq in 0..cfg.sequences_per_cell {
                for &view in &cfg.views {
                    let (pixels, keys) = render_sequence(
                        id,
                        view,
                        cond,
                        cfg.frames,
                        cfg.height,
                        cfg.width,
                        rng,
                        cfg.jitter_std,
                    )?;
                    let sil = SilhouetteSequence::new(
                        label.clone(),
                        cond,
                        seq as u32,
                        view,
                        cfg.height,
                        cfg.width,
                        pixels,
                    )?;
                    write_sequence(root, &sil, &keys)?;
                }
            }
        }
    }
    let manifest_path = root.join("manifest.txt");
    let mut f =
        fs::File::create(&manifest_path).map_err(|e| DataError::io(p(&manifest_path), e))?;
    let views: Vec<String> = cfg.views.iter().map(|v| v.to_string()).collect();
    let conds: Vec<String> = cfg.conditions.iter().map(|c| c.to_string()).collect();
    write!(
        f,
        "identities={}\nviews={}\nconditions={}\nsequences_per_cell={}\nframes={}\nheight={}\nwidth={}\njitter_std={}\nsequences={}\n",
        cfg.identities,
        views.join(","),
        conds.join(","),
        cfg.sequences_per_cell,
        cfg.frames,
        cfg.height,
        cfg.width,
        cfg.jitter_std,
        cfg.sequence_count(),
    )
    .map_err(|e| DataError::io(p(&manifest_path), e))?;
    Ok(())
}
