//! Loss terms, embedding-space attacks and the weighted joint objective.

mod attack;
mod basic;
mod objective;

pub use attack::{
    adversarial_loss, attack_delta, ce_gradient, delta_norms, fgm_perturb, pgd_perturb, project, AdvOutcome,
    AttackResult,
    AttackConfig, AttackMethod, NormScope, PgdOutcome, VANISHING,
};
pub use basic::{
    cross_entropy, cross_entropy_grad, info_nce, info_nce_grad, kl_divergence, sharpen, total_loss,
    tsa_gate, tsa_threshold, uda_consistency, uda_consistency_grad, Consistency, InfoNceGrad,
    LossBreakdown, Tsa, UdaConfig, Weights,
};
pub use objective::{
    evaluate, AdvPart, ConPart, LabeledPart, LossSelector, ProbeTarget, SelectedObjective, Terms,
    TsaState, UnsupPart,
};
