use tofdiff::io::RunConfig;
use tofdiff::nn::forward_guided;
use tofdiff::pipeline::*;
use tofdiff::scheduler::q_sample;
use tofdiff::tensor::Tensor;
use tofdiff::training::*;
use tofdiff::rng;

#[test]
#[ignore]
fn probe_x0_reconstruction() {
    let mut cfg = RunConfig::default();
    cfg.width = 32;
    cfg.height = 32;
    cfg.num_train_records = 60;
    cfg.base_width = 12;
    cfg.prior_iterations = 1200;
    cfg.iterations = 3000;
    let sched = cfg.schedule().unwrap();
    let train_records = synthesize_records(&cfg, 1, cfg.num_train_records).unwrap();
    let test_records = synthesize_records(&cfg, 2, 4).unwrap();
    let items = build_train_items::<f32>(&train_records, &cfg).unwrap();
    let pc = train_config(&cfg, Stage::Prior, 11);
    let prior = train_prior(&items, &pc, &cfg.model_config(), &sched).unwrap();
    println!("prior probe: {:.5} -> {:.5}", prior.probe_loss_start, prior.probe_loss_end);
    let gc = train_config(&cfg, Stage::Guidance, 12);
    let out = train_guidance(&prior.base, &items, &gc, &sched).unwrap();
    let guide = out.guidance.unwrap();
    println!("guided probe: {:.5} -> {:.5}", out.probe_loss_start, out.probe_loss_end);
    let h: Vec<f64> = out.loss_history.iter().step_by(200).cloned().collect();
    println!("loss history every 200: {:?}", h.iter().map(|v| (v*1e4).round()/1e4).collect::<Vec<_>>());

    let test_items = build_train_items::<f32>(&test_records, &cfg).unwrap();
    let t_total = sched.len();
    for &t in &[t_total/20, t_total/8, t_total/4, t_total/2, t_total*9/10] {
        let ab = sched.alpha_bar(t);
        let (ca, cb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let mut mse = 0.0;
        let mut var = 0.0;
        for (i, item) in test_items.iter().enumerate() {
            let mut r = rng::stream(99, &[t as u64, i as u64]);
            let eps = Tensor::<f32>::randn(3, 32, 32, &mut r);
            let xt = q_sample(&item.x0, t, &eps, &sched).unwrap();
            let pred = forward_guided(&prior.base, &guide, &xt, t, item.guidance.as_ref().unwrap()).unwrap().0;
            for j in 0..xt.len() {
                let x0_hat = (xt.data()[j] - cb * pred.data()[j]) / ca;
                let d = (x0_hat - item.x0.data()[j]) as f64;
                mse += d * d;
                var += (item.x0.data()[j] as f64).powi(2);
            }
        }
        let n = (test_items.len() * 3 * 32 * 32) as f64;
        println!("t={t}: x0_hat rmse {:.4} (data rms {:.4})", (mse / n).sqrt(), (var / n).sqrt());
    }

    let mut preds = Vec::new();
    for (i, rec) in test_records.iter().enumerate() {
        let out = denoise_record(&prior.base, Some(&guide), rec, i as u64, true, 64.0, cfg.sample_steps, 0.0, 5, &sched).unwrap();
        preds.push(out.depth);
    }
    let rep = evaluate_predictions(&test_records, &preds).unwrap();
    let noisy: Vec<_> = test_records.iter().map(|r| RecordEval { id: r.id.clone(), metrics: tofdiff::evalkit::compute_metrics(&r.noisy_depth, &r.gt_depth).unwrap() }).collect();
    println!("noisy mae {:.4}  guided mae {:.4} d1 {:.4}", aggregate_reports(&noisy).unwrap().mae_m, rep.aggregate.mae_m, rep.aggregate.delta1);
}
