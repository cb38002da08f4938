use ceropt::params::PlantParams;
use ceropt::solver::{solve, HomotopyConfig, HomotopyStage};
use ceropt::transcription::{Switching, Transcription, TranscriptionConfig};

fn stage(epsilon: f64, w: f64, s: f64) -> HomotopyStage {
    HomotopyStage { epsilon, switch_weight: w, switch_sharpness: s }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let plan_name = std::env::args().nth(1).unwrap_or_else(|| "plan1".into());
    let n: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(100);
    let cfg = TranscriptionConfig { n, ..Default::default() };
    let trans = Transcription::new(PlantParams::default(), cfg, Switching::Free).unwrap();
    let mut homotopy = HomotopyConfig::default();
    match plan_name.as_str() {
        // Current default plan, bigger iteration budget.
        "plan1" => {
            homotopy.ipm.max_iter = 2500;
        }
        // Anneal the switch term at 1e-4, then tighten the rest of the way
        // with the full objective on.
        "plan2" => {
            homotopy.ipm.max_iter = 2500;
            let tight = [1.0e-1, 3.0e-2, 1.0e-2, 3.0e-3, 1.0e-3, 3.0e-4, 1.0e-4];
            let mut stages: Vec<HomotopyStage> =
                tight.iter().map(|&e| stage(e, 0.0, 1.0)).collect();
            for s in [0.01, 0.1, 0.3, 1.0] {
                stages.push(stage(1.0e-4, 1.0, s));
            }
            for e in [3.0e-5, 1.0e-5, 3.0e-6, 1.0e-6] {
                stages.push(stage(e, 1.0, 1.0));
            }
            homotopy.stages = stages;
        }
        other => panic!("unknown plan {other}"),
    }
    match solve(&trans, &homotopy) {
        Ok(solved) => {
            let b = &solved.breakdown;
            println!(
                "PLAN {plan_name} n={n}: ok, {} stages, {} iterations, speed {:.4}, count {:.2}, effort {:.4}, defect {:.2e}, product {:.2e}",
                solved.stages.len(),
                solved.iterations_total(),
                b.terminal_speed(),
                b.switch_count,
                b.effort,
                solved.stages.last().unwrap().max_defect,
                solved.stages.last().unwrap().max_product,
            );
        }
        Err(e) => println!("PLAN {plan_name} n={n}: FAILED: {e}"),
    }
}
