use std::time::Instant;
use tofdiff::io::RunConfig;
use tofdiff::pipeline::run_experiment;

#[test]
#[ignore]
fn probe_experiment_small() {
    let mut cfg = RunConfig::default();
    cfg.width = 32;
    cfg.height = 32;
    cfg.num_train_records = 60;
    cfg.num_test_records = 10;
    cfg.base_width = 8;
    cfg.prior_iterations = 400;
    cfg.iterations = 300;
    cfg.batch_size = 4;
    let t0 = Instant::now();
    let rep = run_experiment(&cfg, 42).unwrap();
    println!("elapsed: {:.1} s", t0.elapsed().as_secs_f64());
    println!("noisy     mae {:.4} absrel {:.4} d1 {:.4}", rep.noisy.mae_m, rep.noisy.absrel, rep.noisy.delta1);
    println!("bilateral mae {:.4}", rep.bilateral.mae_m);
    println!("guided    mae {:.4} absrel {:.4} d1 {:.4}", rep.guided.mae_m, rep.guided.absrel, rep.guided.delta1);
    println!("unguided  mae {:.4}", rep.unguided.mae_m);
    println!("hdr       mae {:.4}", rep.hdr.mae_m);
    println!("prior probe {:?} guided probe {:?}", rep.prior_probe, rep.guided_probe);
}
