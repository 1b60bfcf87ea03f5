//! Seeded synthetic hand/object scenes whose labels are carried by how the
//! tracks move relative to each other, not by what the instances are.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BBox, InstanceTrack, VideoSample};
use crate::error::{Error, Result};

pub const IDLE: usize = 0;
pub const REACH: usize = 1;
pub const MOVE: usize = 2;
pub const PLACE: usize = 3;
pub const ACTIVITY_NAMES: [&str; 4] = ["idle", "reach", "move", "place"];

pub const STATIONARY: usize = 0;
pub const REACHABLE: usize = 1;
pub const MOVABLE: usize = 2;
pub const PLACEABLE: usize = 3;
pub const AFFORDANCE_NAMES: [&str; 4] = ["stationary", "reachable", "movable", "placeable"];

pub const HUMAN_CLASS: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    /// Four interaction classes: idle, reach, move, place.
    Activities,
    /// Two classes that differ only in temporal order: the hand moves then
    /// rests (0) or rests then moves (1), next to one wandering object.
    /// Objects carry no affordance label.
    Ordering,
}

impl std::str::FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activities" => Ok(SyntheticTask::Activities),
            "ordering" => Ok(SyntheticTask::Ordering),
            other => Err(Error::Config(format!("unknown synthetic task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub task: SyntheticTask,
    pub samples_per_class: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Raw clip length before uniform sampling.
    pub clip_frames: usize,
    pub width: u32,
    pub height: u32,
    /// Standard deviation of the Gaussian jitter on box coordinates (pixels).
    pub jitter: f64,
    /// Object classes are drawn from `1..=object_classes`; class 0 is the hand.
    pub object_classes: usize,
    /// Displacement of a reached object when the hand makes contact (pixels).
    pub contact_jolt: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            task: SyntheticTask::Activities,
            samples_per_class: 50,
            min_objects: 2,
            max_objects: 3,
            clip_frames: 20,
            width: 640,
            height: 480,
            jitter: 2.0,
            object_classes: 5,
            contact_jolt: 12.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn class_count(&self) -> usize {
        match self.task {
            SyntheticTask::Activities => 4,
            SyntheticTask::Ordering => 2,
        }
    }
}

const HAND: f64 = 50.0;

#[derive(Clone, Copy)]
struct Pt {
    x: f64,
    y: f64,
}

/// Smooth per-frame displacements: heading drifts slowly, speed oscillates
/// with a random phase so successive displacements vary.
fn smooth_steps(rng: &mut ChaCha8Rng, steps: usize, speed: f64) -> Vec<Pt> {
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let turn = rng.random_range(-0.35..0.35);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let freq = rng.random_range(0.4..0.9);
    (0..steps)
        .map(|t| {
            heading += turn + rng.random_range(-0.15..0.15);
            let s = speed * (0.6 + 0.4 * (freq * t as f64 + phase).sin());
            Pt {
                x: s * heading.cos(),
                y: s * heading.sin(),
            }
        })
        .collect()
}

/// Integrates displacements from `start`, reflecting off the given bounds so
/// the path stays in view. Returns `steps + 1` positions.
fn integrate(start: Pt, steps: &[Pt], lo: Pt, hi: Pt) -> Vec<Pt> {
    let mut p = start;
    let mut out = vec![p];
    for d in steps {
        let mut dx = d.x;
        let mut dy = d.y;
        if p.x + dx < lo.x || p.x + dx > hi.x {
            dx = -dx;
        }
        if p.y + dy < lo.y || p.y + dy > hi.y {
            dy = -dy;
        }
        p = Pt {
            x: p.x + dx,
            y: p.y + dy,
        };
        out.push(p);
    }
    out
}

fn ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

struct Scene {
    hand: Vec<Pt>,
    objects: Vec<Vec<Pt>>,
    sizes: Vec<(f64, f64)>,
    affordances: Vec<Option<usize>>,
}

fn place_objects(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, count: usize) -> Vec<Pt> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut placed: Vec<Pt> = Vec::new();
    for _ in 0..count {
        let mut best = None;
        for _ in 0..200 {
            let p = Pt {
                x: rng.random_range(0.15 * w..0.85 * w),
                y: rng.random_range(0.5 * h..0.85 * h),
            };
            if placed
                .iter()
                .all(|q| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt() > 90.0)
            {
                best = Some(p);
                break;
            }
            best.get_or_insert(p);
        }
        placed.push(best.expect("candidate"));
    }
    placed
}

fn activity_scene(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, activity: usize) -> Scene {
    let frames = cfg.clip_frames.max(2);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let k = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let homes = place_objects(rng, cfg, k);
    let target = rng.random_range(0..k);
    let mut objects: Vec<Vec<Pt>> = homes.iter().map(|&p| vec![p; frames]).collect();
    let sizes = (0..k)
        .map(|_| (rng.random_range(36.0..60.0), rng.random_range(36.0..60.0)))
        .collect();
    let hand_start = Pt {
        x: rng.random_range(0.2 * w..0.8 * w),
        y: rng.random_range(0.1 * h..0.3 * h),
    };
    let lo = Pt { x: 40.0, y: 40.0 };
    let hi = Pt {
        x: w - 40.0,
        y: h - 40.0,
    };
    let grip = Pt { x: 0.0, y: -28.0 };
    let mut affordances = vec![Some(STATIONARY); k];

    let hand = match activity {
        IDLE => {
            let steps = smooth_steps(rng, frames - 1, 9.0);
            integrate(hand_start, &steps, lo, Pt { x: hi.x, y: 0.45 * h })
        }
        REACH => {
            affordances[target] = Some(REACHABLE);
            let goal = Pt {
                x: homes[target].x + grip.x,
                y: homes[target].y + grip.y,
            };
            let arrive = ((frames as f64) * 0.65).round() as usize;
            let hand: Vec<Pt> = (0..frames)
                .map(|t| {
                    let u = ease(t as f64 / arrive.max(1) as f64);
                    Pt {
                        x: hand_start.x + u * (goal.x - hand_start.x),
                        y: hand_start.y + u * (goal.y - hand_start.y),
                    }
                })
                .collect();
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            for p in &mut objects[target][arrive..] {
                p.x += cfg.contact_jolt * angle.cos();
                p.y += cfg.contact_jolt * angle.sin().abs();
            }
            hand
        }
        MOVE | PLACE => {
            let joint = if activity == MOVE {
                frames - 1
            } else {
                ((frames as f64) * 0.55).round() as usize
            };
            affordances[target] = Some(if activity == MOVE { MOVABLE } else { PLACEABLE });
            let steps = smooth_steps(rng, joint, 11.0);
            let path = integrate(homes[target], &steps, lo, hi);
            for t in 0..frames {
                objects[target][t] = path[t.min(joint)];
            }
            let mut hand: Vec<Pt> = path
                .iter()
                .map(|p| Pt {
                    x: p.x + grip.x,
                    y: p.y + grip.y,
                })
                .collect();
            // after release the hand lifts away
            let release = *hand.last().expect("nonempty");
            for t in joint + 1..frames {
                let u = (t - joint) as f64;
                hand.push(Pt {
                    x: release.x,
                    y: (release.y - 14.0 * u).max(20.0),
                });
            }
            hand
        }
        _ => unreachable!("activity id out of range"),
    };
    Scene {
        hand,
        objects,
        sizes,
        affordances,
    }
}

fn ordering_scene(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, class: usize) -> Scene {
    let frames = cfg.clip_frames.max(2);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let lo = Pt { x: 40.0, y: 40.0 };
    let hi = Pt {
        x: w - 40.0,
        y: h - 40.0,
    };
    let obj_start = place_objects(rng, cfg, 1)[0];
    let obj_steps = smooth_steps(rng, frames - 1, 8.0);
    let object = integrate(obj_start, &obj_steps, lo, hi);

    let hand_start = Pt {
        x: rng.random_range(0.2 * w..0.8 * w),
        y: rng.random_range(0.15 * h..0.35 * h),
    };
    let half = frames / 2;
    let moving = smooth_steps(rng, half, 12.0);
    let still = vec![Pt { x: 0.0, y: 0.0 }; frames - 1 - half];
    let steps: Vec<Pt> = if class == 0 {
        moving.into_iter().chain(still).collect()
    } else {
        still.into_iter().chain(moving).collect()
    };
    let hand = integrate(hand_start, &steps, lo, hi);
    Scene {
        hand,
        objects: vec![object],
        sizes: vec![(rng.random_range(36.0..60.0), rng.random_range(36.0..60.0))],
        affordances: vec![None],
    }
}

fn to_boxes(
    rng: &mut ChaCha8Rng,
    jitter: &Option<Normal<f64>>,
    centers: &[Pt],
    size: (f64, f64),
) -> Vec<BBox> {
    centers
        .iter()
        .map(|c| {
            let (mut x, mut y, mut bw, mut bh) = (c.x - size.0 / 2.0, c.y - size.1 / 2.0, size.0, size.1);
            if let Some(n) = jitter {
                x += n.sample(rng);
                y += n.sample(rng);
                bw = (bw + 0.5 * n.sample(rng)).max(1.0);
                bh = (bh + 0.5 * n.sample(rng)).max(1.0);
            }
            BBox { x, y, w: bw, h: bh }
        })
        .collect()
}

/// Generates `samples_per_class` scenes for every class, class by class.
pub fn synth_generate(cfg: &SyntheticConfig) -> Vec<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = (cfg.jitter > 0.0).then(|| Normal::new(0.0, cfg.jitter).expect("valid std"));
    let tag = match cfg.task {
        SyntheticTask::Activities => "act",
        SyntheticTask::Ordering => "ord",
    };
    let mut out = Vec::with_capacity(cfg.samples_per_class * cfg.class_count());
    for class in 0..cfg.class_count() {
        for i in 0..cfg.samples_per_class {
            let scene = match cfg.task {
                SyntheticTask::Activities => activity_scene(&mut rng, cfg, class),
                SyntheticTask::Ordering => ordering_scene(&mut rng, cfg, class),
            };
            let mut instances = vec![InstanceTrack {
                class_id: HUMAN_CLASS,
                is_human: true,
                affordance: None,
                boxes: to_boxes(&mut rng, &jitter, &scene.hand, (HAND, HAND)),
                visual: None,
            }];
            for (k, path) in scene.objects.iter().enumerate() {
                let class_id = rng.random_range(1..=cfg.object_classes.max(1));
                instances.push(InstanceTrack {
                    class_id,
                    is_human: false,
                    affordance: scene.affordances[k],
                    boxes: to_boxes(&mut rng, &jitter, path, scene.sizes[k]),
                    visual: None,
                });
            }
            out.push(VideoSample {
                video_id: format!("{tag}-{class}-{i:04}-s{}", cfg.seed),
                width: cfg.width,
                height: cfg.height,
                activity: class,
                instances,
            });
        }
    }
    out
}
