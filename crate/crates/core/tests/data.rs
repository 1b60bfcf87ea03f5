use proptest::prelude::*;

use stigpn::data::synth::{synth_generate, SyntheticConfig, SyntheticTask, IDLE, MOVE, STATIONARY};
use stigpn::data::{parse_dataset, dataset_to_jsonl, uniform_indices, uniform_sample_frames, BBox, InstanceTrack, VideoSample};
use stigpn::features::VisualSource;

fn sample(frames: usize, objects: usize, seed: u64) -> VideoSample {
    let mut k = seed;
    let mut next = move || {
        k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (k >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut track = |human: bool, class_id: usize| InstanceTrack {
        class_id,
        is_human: human,
        affordance: if human { None } else { Some(class_id % 4) },
        boxes: (0..frames)
            .map(|_| BBox {
                x: 600.0 * next(),
                y: 400.0 * next(),
                w: 10.0 + 50.0 * next(),
                h: 10.0 + 50.0 * next(),
            })
            .collect(),
        visual: None,
    };
    let mut instances = vec![track(true, 0)];
    for o in 0..objects {
        instances.push(track(false, 1 + o));
    }
    VideoSample {
        video_id: format!("v{seed}"),
        width: 640,
        height: 480,
        activity: (seed % 4) as usize,
        instances,
    }
}

proptest! {
    #[test]
    fn uniform_indices_are_ordered_and_in_range(len in 1usize..200, frames in 1usize..40) {
        let idx = uniform_indices(len, frames);
        prop_assert_eq!(idx.len(), frames);
        prop_assert!(idx.iter().all(|&i| i < len));
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(idx[0], 0);
        if frames <= len {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sampling_keeps_per_frame_correspondence(
        len in 1usize..30,
        frames in 1usize..12,
        objects in 1usize..4,
        seed in any::<u64>(),
    ) {
        let s = sample(len, objects, seed);
        let r = uniform_sample_frames(&s, frames).unwrap();
        let idx = uniform_indices(len, frames);
        for (orig, new) in s.instances.iter().zip(&r.instances) {
            prop_assert_eq!(new.boxes.len(), frames);
            for (t, &i) in idx.iter().enumerate() {
                prop_assert_eq!(new.boxes[t], orig.boxes[i]);
            }
        }
    }

    #[test]
    fn jsonl_round_trip(count in 0usize..5, len in 1usize..6, seed in any::<u64>()) {
        let data: Vec<VideoSample> = (0..count).map(|k| sample(len, 1 + k % 3, seed.wrapping_add(k as u64))).collect();
        let back = parse_dataset(&dataset_to_jsonl(&data)).unwrap();
        prop_assert_eq!(back, data);
    }
}

fn center_travel(track: &InstanceTrack) -> f64 {
    track
        .boxes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].center(), w[1].center());
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        })
        .sum()
}

#[test]
fn moved_object_travels_farthest() {
    let cfg = SyntheticConfig {
        samples_per_class: 20,
        jitter: 0.0,
        seed: 3,
        ..Default::default()
    };
    for s in synth_generate(&cfg).iter().filter(|s| s.activity == MOVE) {
        let target = s.instances.iter().position(|t| t.affordance == Some(MOVE)).unwrap();
        for (m, t) in s.instances.iter().enumerate().skip(1) {
            if m != target {
                assert_eq!(center_travel(t), 0.0);
                assert_eq!(t.affordance, Some(STATIONARY));
            }
        }
        assert!(center_travel(&s.instances[target]) > 50.0);
    }
}

fn displacements(track: &InstanceTrack) -> Vec<f64> {
    let c: Vec<(f64, f64)> = track.boxes.iter().map(BBox::center).collect();
    let dx = c.windows(2).map(|w| w[1].0 - w[0].0);
    let dy = c.windows(2).map(|w| w[1].1 - w[0].1);
    dx.chain(dy).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn hand_and_moved_object_displace_together() {
    let cfg = SyntheticConfig {
        samples_per_class: 30,
        jitter: 0.0,
        seed: 12,
        ..Default::default()
    };
    for s in synth_generate(&cfg).iter().filter(|s| s.activity == MOVE) {
        let target = s.instances.iter().position(|t| t.affordance == Some(MOVE)).unwrap();
        let r = pearson(&displacements(&s.instances[0]), &displacements(&s.instances[target]));
        assert!(r > 0.9, "{}: r = {r}", s.video_id);
    }
}

#[test]
fn ordering_classes_mirror_each_other_in_time() {
    let cfg = SyntheticConfig {
        task: SyntheticTask::Ordering,
        samples_per_class: 10,
        jitter: 0.0,
        seed: 8,
        ..Default::default()
    };
    let moving = cfg.clip_frames / 2;
    for s in synth_generate(&cfg) {
        let hand = &s.instances[0];
        let split = if s.activity == 0 { moving } else { cfg.clip_frames - 1 - moving };
        let early = center_travel(&InstanceTrack { boxes: hand.boxes[..=split].to_vec(), ..hand.clone() });
        let late = center_travel(&InstanceTrack { boxes: hand.boxes[split..].to_vec(), ..hand.clone() });
        if s.activity == 0 {
            assert!(early > 0.0 && late == 0.0, "{}", s.video_id);
        } else {
            assert!(early == 0.0 && late > 0.0, "{}", s.video_id);
        }
        assert_eq!(s.instances.len(), 2);
        assert_eq!(s.instances[1].affordance, None);
    }
}

/// Frame-pooled visual vectors of every instance, concatenated in the
/// order human, then objects sorted by class id.
fn pooled_visual(s: &VideoSample, source: &VisualSource) -> Vec<f64> {
    let mut s = s.clone();
    source.attach(&mut s).unwrap();
    let mut order: Vec<&InstanceTrack> = s.instances.iter().collect();
    order.sort_by_key(|t| (!t.is_human, t.class_id));
    let mut out = Vec::new();
    for t in order.iter().take(3) {
        let frames = t.visual.as_ref().unwrap();
        let dim = frames[0].len();
        out.extend((0..dim).map(|k| frames.iter().map(|v| v[k]).sum::<f64>() / frames.len() as f64));
    }
    out.resize(3 * source.dim(), 0.0);
    out
}

#[test]
fn appearance_alone_does_not_separate_classes() {
    let source = VisualSource::synthetic(64, 7, 0.1);
    let train = synth_generate(&SyntheticConfig { samples_per_class: 100, seed: 41, ..Default::default() });
    let test = synth_generate(&SyntheticConfig { samples_per_class: 100, seed: 42, ..Default::default() });
    let dim = 3 * source.dim();
    let mut centroids = vec![vec![0.0; dim]; 4];
    let mut counts = [0usize; 4];
    for s in &train {
        for (c, x) in centroids[s.activity].iter_mut().zip(pooled_visual(s, &source)) {
            *c += x;
        }
        counts[s.activity] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|x| *x /= n as f64);
    }
    let correct = test
        .iter()
        .filter(|s| {
            let x = pooled_visual(s, &source);
            let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..4).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == s.activity
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!((acc - 0.25).abs() <= 0.10, "appearance-only accuracy {acc}");
    assert!(test.iter().any(|s| s.activity == IDLE));
}
