use std::time::Instant;
use tofdiff::io::RunConfig;
use tofdiff::pipeline::{build_train_items, synthesize_records};
use tofdiff::scheduler::Schedule;
use tofdiff::training::{train_prior, Stage, TrainConfig};

#[test]
#[ignore]
fn probe_iteration_cost() {
    for (bw, batch) in [(8usize, 4usize), (12, 4), (12, 6), (16, 4)] {
        let mut cfg = RunConfig::default();
        cfg.base_width = bw;
        cfg.batch_size = batch;
        let records = synthesize_records(&cfg, 1, 4).unwrap();
        let items = build_train_items::<f32>(&records, &cfg).unwrap();
        let sched = Schedule::default_schedule();
        let mut tc = TrainConfig::desk(Stage::Prior, 1);
        tc.iterations = 10;
        tc.batch_size = batch;
        let t0 = Instant::now();
        train_prior(&items, &tc, &cfg.model_config(), &sched).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("width={bw} batch={batch}: {:.3} s/iter", dt / 10.0);
    }
}
