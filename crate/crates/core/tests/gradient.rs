use stigpn::config::{Config, Preset};
use stigpn::data::synth::{synth_generate, SyntheticConfig};
use stigpn::gradcheck::{check_gradients, relative_error};
use stigpn::model::Model;
use stigpn::train::prepare_all;

fn desk_case(config: &Config) -> Vec<stigpn::PreparedVideo> {
    let samples = synth_generate(&SyntheticConfig {
        samples_per_class: 1,
        min_objects: 2,
        max_objects: 2,
        clip_frames: 6,
        seed: 21,
        ..Default::default()
    });
    // one reach scene: a human and two objects, one of them labeled reachable
    prepare_all(&samples[1..2], config, None).unwrap()
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
    assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
}

#[test]
fn full_model_matches_finite_differences() {
    let mut config = Config::preset(Preset::Desk);
    config.frames = 3;
    config.seed = 3;
    let model = Model::new(config.clone()).unwrap();
    let videos = desk_case(&config);
    assert_eq!((videos[0].frames, videos[0].instances), (3, 3));
    let refs: Vec<_> = videos.iter().collect();
    let report = check_gradients(&model, &refs, 1e-5, 1e-4, 1e-6).unwrap();
    assert_eq!(report.checked, model.store.trainable_ids().map(|id| model.store.get(id).len()).sum::<usize>());
    assert_eq!(report.tensors.len(), model.store.trainable_ids().count());
    assert!(
        report.failures.is_empty(),
        "{} of {} parameter tensors failed: {:?}",
        report.failures.len(),
        report.tensors.len(),
        report.failures
    );
    assert!(report.scalar_failures.is_empty(), "{:?}", report.scalar_failures);
    // redoing at a finer step is reserved for isolated kink crossings
    assert!(report.refined.len() * 1000 < report.checked, "{:?}", report.refined);
}
