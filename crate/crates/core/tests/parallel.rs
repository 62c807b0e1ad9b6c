use sslc::corpus::{split_dataset, synthetic_corpus};
use sslc::diffcore::Arch;
use sslc::par;
use sslc::trainer::{run_training, AttackChoice, TrainConfig, TrainData};

#[test]
fn sequential_and_parallel_runs_are_bitwise_equal() {
    let mut cfg = TrainConfig::from_json(include_str!("../../../configs/toy.json")).unwrap();
    cfg.total_steps = 8;
    cfg.attack = AttackChoice::Pgd;
    cfg.model.arch = Arch::TinyAttention;
    let spec = cfg.data.synthetic.clone().unwrap();
    let (lab, unl) = synthetic_corpus(&spec).unwrap();
    let split = split_dataset(&lab, &unl, cfg.data.ratios, cfg.data.split_seed).unwrap();
    let data = TrainData::from_split(&split, &cfg, None, None).unwrap();

    par::set_parallel(false);
    let (seq_params, seq_history) = run_training(&cfg, &data).unwrap();
    par::set_parallel(true);
    let (par_params, par_history) = run_training(&cfg, &data).unwrap();
    assert_eq!(seq_history, par_history);
    assert_eq!(seq_params, par_params);
}
