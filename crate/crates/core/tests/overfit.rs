use cgni_core::imaging::PatchSet;
use cgni_core::synthetic::{synth_cg, synth_natural, SynthConfig};
use cgni_core::training::evaluate_patches;
use cgni_core::imaging::to_grayscale;
use cgni_core::{HpfSelector, Label, ModelConfig, Network, TrainConfig, Trainer};

#[test]
fn memorises_eight_patches() {
    let cfg = SynthConfig {
        image_size: 64,
        ..SynthConfig::default()
    };
    let mut set = PatchSet::new(64);
    for i in 0..4 {
        let ni = synth_natural(cfg.content_seed(Label::Ni, i), i, &cfg);
        set.add_image(&format!("ni{i}"), to_grayscale(&ni), Label::Ni, 64).unwrap();
        let cg = synth_cg(cfg.content_seed(Label::Cg, i), &cfg);
        set.add_image(&format!("cg{i}"), to_grayscale(&cg), Label::Cg, 64).unwrap();
    }
    assert_eq!(set.len(), 8);
    let net = Network::new(ModelConfig::with_input_size(HpfSelector::Hpf3, 64), 0).unwrap();
    let mut trainer = Trainer::new(
        net,
        TrainConfig {
            batch_size: 8,
            epochs: 300,
            checkpoint_epochs: vec![],
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let all: Vec<usize> = (0..8).collect();
    let (x, labels) = set.batch(&all);
    let mut last = None;
    for _ in 0..300 {
        last = Some(trainer.step(&x, &labels).unwrap());
    }
    let last = last.unwrap();
    assert_eq!(last.correct, 8, "{last:?}");
    let (acc, _) = evaluate_patches(trainer.network(), &set, 8).unwrap();
    assert_eq!(acc, 1.0);
}
