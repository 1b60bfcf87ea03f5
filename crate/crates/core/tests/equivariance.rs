use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stigpn::config::{Config, Preset};
use stigpn::data::synth::{synth_generate, SyntheticConfig};
use stigpn::model::{Model, StreamKind};
use stigpn::numkernel::AdamState;
use stigpn::train::{prepare_all, train_step};
use stigpn::PreparedVideo;

fn setup(seed: u64) -> (Model, Vec<PreparedVideo>) {
    let mut config = Config::preset(Preset::Desk);
    config.frames = 4;
    config.seed = seed;
    config.learning_rate = 1e-3;
    let samples = synth_generate(&SyntheticConfig {
        samples_per_class: 2,
        min_objects: 3,
        max_objects: 3,
        clip_frames: 8,
        seed: 50 + seed,
        ..Default::default()
    });
    let videos = prepare_all(&samples, &config, None).unwrap();
    let mut model = Model::new(config.clone()).unwrap();
    // a few steps so that weights and running statistics leave their initial values
    let mut adam = AdamState::new(config.learning_rate, config.decay_factor, config.decay_interval);
    let refs: Vec<&PreparedVideo> = videos.iter().collect();
    for _ in 0..3 {
        train_step(&mut model, &mut adam, &refs).unwrap();
    }
    (model, videos)
}

#[test]
fn relabeling_instances_permutes_predictions_exactly() {
    for seed in 0..5 {
        let (model, videos) = setup(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &videos {
            let mut perm: Vec<usize> = (0..v.instances).collect();
            perm.shuffle(&mut rng);
            let pv = v.permute_instances(&perm);
            let a = &model.predict(&[v]).unwrap()[0];
            let b = &model.predict(&[&pv]).unwrap()[0];
            assert_eq!(a.activity, b.activity, "seed {seed} video {}", v.video_id);
            for (i, &old) in perm.iter().enumerate() {
                let got = b.affordances.iter().find(|(k, _)| *k == i).map(|(_, d)| d);
                let want = a.affordances.iter().find(|(k, _)| *k == old).map(|(_, d)| d);
                assert_eq!(got, want, "seed {seed} instance {i}");
            }
        }
    }
}

#[test]
fn relabeling_permutes_parsed_graphs() {
    let (model, videos) = setup(9);
    let v = &videos[3];
    let perm = [2, 0, 3, 1];
    let pv = v.permute_instances(&perm);
    let m = v.instances;
    let old = |k: usize| (k / m) * m + perm[k % m];
    for kind in [StreamKind::Visual, StreamKind::Semantic] {
        let a = model.parsed_graph(v, kind).unwrap();
        let b = model.parsed_graph(&pv, kind).unwrap();
        let n = a.nodes();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(b.intra[i * n + j], a.intra[old(i) * n + old(j)]);
                assert_eq!(b.inter[i * n + j], a.inter[old(i) * n + old(j)]);
            }
        }
    }
}

#[test]
fn batch_composition_does_not_change_eval_predictions() {
    let (model, videos) = setup(4);
    let refs: Vec<&PreparedVideo> = videos.iter().collect();
    let together = model.predict(&refs).unwrap();
    let mut reversed = refs.clone();
    reversed.reverse();
    let mut apart = model.predict(&reversed).unwrap();
    apart.reverse();
    assert_eq!(together, apart);
}
