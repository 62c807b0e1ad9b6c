use sslc::corpus::{split_dataset, synthetic_corpus};
use sslc::diffcore::Params;
use sslc::eval::robustness_eval;
use sslc::losses::AttackMethod;
use sslc::trainer::{run_training, AttackChoice, HistoryRow, RobustnessConfig, TrainConfig, TrainData};

fn toy(steps: u64) -> (TrainConfig, TrainData) {
    let mut cfg = TrainConfig::from_json(include_str!("../../../configs/toy.json")).unwrap();
    cfg.total_steps = steps;
    cfg.eval_every = 0;
    let spec = cfg.data.synthetic.clone().unwrap();
    let (lab, unl) = synthetic_corpus(&spec).unwrap();
    let split = split_dataset(&lab, &unl, cfg.data.ratios, cfg.data.split_seed).unwrap();
    let data = TrainData::from_split(&split, &cfg, None, None).unwrap();
    (cfg, data)
}

fn mean_total(rows: &[HistoryRow]) -> f64 {
    rows.iter().map(|r| r.losses.l_total).sum::<f64>() / rows.len() as f64
}

#[test]
fn joint_loss_falls_on_the_toy_corpus() {
    let (cfg, data) = toy(300);
    for seed in 0..5 {
        let (_, history) = run_training(&TrainConfig { seed, ..cfg.clone() }, &data).unwrap();
        let first = mean_total(&history[..50]);
        let last = mean_total(&history[history.len() - 50..]);
        assert!(last < first, "seed {seed}: first-50 mean {first}, last-50 mean {last}");
    }
}

#[test]
fn undefended_model_loses_accuracy_under_a_large_attack() {
    let (cfg, data) = toy(300);
    let rob = RobustnessConfig {
        epsilon: 0.5,
        sample_size: 300,
        ..RobustnessConfig::default()
    };
    let (mut sa, mut ra) = (0.0, 0.0);
    for seed in 0..5 {
        let undefended = TrainConfig {
            seed,
            attack: AttackChoice::None,
            ..cfg.clone()
        };
        let (params, _): (Params, _) = run_training(&undefended, &data).unwrap();
        let reports = robustness_eval(&params, &data.test, AttackChoice::None, &rob, seed).unwrap();
        assert_eq!(reports.len(), 2);
        let pgd = reports.iter().find(|r| r.attack == AttackMethod::Pgd).unwrap();
        assert_eq!((pgd.steps, pgd.samples), (10, 300));
        sa += pgd.sa / 5.0;
        ra += pgd.ra / 5.0;
    }
    assert!(ra < sa, "mean RA {ra} vs mean SA {sa}");
}
