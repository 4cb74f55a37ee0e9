use akgrank_core::harness::*;
use akgrank_core::policy::PolicyKind;

fn main() {
    let workers = 15usize;
    let grid: Vec<f64> = (0..workers).map(|w| 0.4 + w as f64 * 0.6 / 14.0).collect();
    let config = ExperimentConfig {
        items: 10, workers, budget: 250, trials: 1, seed: 19,
        policy: PolicyKind::Akg, alpha0: 1.0, mu0: 4.0, nu0: 1.0,
        world: WorldSpec::Custom(CustomWorld { theta: None, rho: Some(grid.clone()), rho_beta: None }),
        eval: EvalMode::Tau, checkpoints: Some(vec![250]),
    };
    let r = run_trial(&config, 0).unwrap();
    println!("rho grid:       {:?}", grid.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
    println!("assignments:    {:?}", r.worker_counts);
    println!("belief means:   {:?}", r.final_belief.workers.iter().map(|w| format!("{:.2}", w.mu/(w.mu+w.nu))).collect::<Vec<_>>());
    println!("final accuracy: {:?}", r.accuracy);
}
