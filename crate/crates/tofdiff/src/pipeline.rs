//! End-to-end pipeline: scene synthesis, dataset construction, training-set
//! assembly, DDIM denoising, and evaluation.
//!
//! All stages derive their randomness from a root seed plus fixed context
//! tags, so a (config, seed) pair reproduces every artifact byte for byte.

use crate::confidence::{confidence_map, ConfidenceMap};
use crate::error::{Error, Result};
use crate::evalkit::{compute_metrics, MetricsReport};
use crate::image::{DepthMap, Image};
use crate::io::config::RunConfig;
use crate::io::manifest::{DatasetManifest, ManifestRecord, MANIFEST_FILENAME};
use crate::io::pfm;
use crate::nn::{forward_guided, GuidanceNet, UNet};
use crate::rangecodec::{denormalize_pair, normalize_pair, NormalizedFrame};
use crate::rng;
use crate::scheduler::{ddim_sample, EpsModel, SamplerConfig, Schedule};
use crate::tensor::{Real, Tensor};
use crate::tofmodel::{
    add_edge_noise, add_sensor_noise, correlations_to_depth, depth_to_correlations,
    generate_scene, unambiguous_range, Primitive, RawFrame, SceneSpec,
};
use crate::training::{Stage, TrainItem};
use rand::Rng;
use std::path::Path;

const TAG_SCENE: u64 = 0x5ce4e;
const TAG_EDGE: u64 = 0xef1a9;
const TAG_SENSOR: u64 = 0x53405;
const TAG_SAMPLE: u64 = 0xd40153;

/// One fully simulated sample: clean and noisy correlation frames plus the
/// depth maps and confidence derived from them.
#[derive(Debug, Clone)]
pub struct PipelineRecord {
    pub id: String,
    pub seed: u64,
    pub ideal: RawFrame,
    pub noisy: RawFrame,
    pub gt_depth: DepthMap,
    pub noisy_depth: DepthMap,
    pub confidence: ConfidenceMap,
}

fn random_scene(cfg: &RunConfig, rng: &mut impl Rng) -> SceneSpec {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let lo = cfg.scene_min_depth;
    let hi = cfg.scene_max_depth;
    let bg = lo + (hi - lo) * (0.7 + 0.3 * rng.gen::<f64>());
    let mut primitives = Vec::new();
    // slanted back panel behind the foreground objects
    if rng.gen::<f64>() < 0.5 {
        primitives.push(Primitive::Plane {
            depth: bg - 0.05 * (hi - lo),
            slope_u: (rng.gen::<f64>() - 0.5) * 0.012,
            slope_v: (rng.gen::<f64>() - 0.5) * 0.012,
            reflectivity: 0.4 + 0.6 * rng.gen::<f64>(),
        });
    }
    let count = 1 + rng.gen_range(0..cfg.max_primitives.max(1));
    for _ in 0..count {
        let depth = lo + (bg - 0.15 * (hi - lo) - lo) * rng.gen::<f64>();
        let refl = 0.4 + 0.6 * rng.gen::<f64>();
        if rng.gen::<f64>() < 0.5 {
            primitives.push(Primitive::Sphere {
                center_u: w * rng.gen::<f64>(),
                center_v: h * rng.gen::<f64>(),
                radius_px: w * (0.1 + 0.15 * rng.gen::<f64>()),
                depth,
                bulge_m: 0.05 + 0.25 * rng.gen::<f64>(),
                reflectivity: refl,
            });
        } else {
            let u0 = w * rng.gen::<f64>() * 0.7;
            let v0 = h * rng.gen::<f64>() * 0.7;
            primitives.push(Primitive::Box {
                u0,
                v0,
                u1: u0 + w * (0.15 + 0.3 * rng.gen::<f64>()),
                v1: v0 + h * (0.15 + 0.3 * rng.gen::<f64>()),
                depth,
                reflectivity: refl,
            });
        }
    }
    SceneSpec {
        width: cfg.width,
        height: cfg.height,
        primitives,
        background_depth: bg,
        amplitude_scale: cfg.amplitude_scale,
        texture_amp: cfg.texture_amp,
    }
}

fn clamp_depth(depth: &DepthMap, max_depth: f64) -> Result<DepthMap> {
    depth.map_valid(|v| v.min(max_depth))
}

/// Simulates one record.
///
/// Edge noise perturbs the physical depth before it is encoded, so flying
/// pixels show up in the noisy correlations (and from there in the noisy
/// depth the confidence map sees), while the ground truth stays clean.
pub fn synthesize_record(cfg: &RunConfig, seed: u64, index: u64) -> Result<PipelineRecord> {
    let noise = cfg.noise_params();
    let mut scene_rng = rng::stream(seed, &[TAG_SCENE, index]);
    let spec = random_scene(cfg, &mut scene_rng);
    let record_seed = rng::mix(&[seed, index]);
    let (gt_depth, amplitude) = generate_scene(&spec, rng::mix(&[record_seed, 1]))?;

    let physical = add_edge_noise(&gt_depth, &noise, rng::mix(&[record_seed, TAG_EDGE]))?;
    let range = unambiguous_range(cfg.frequency_hz);
    let physical = clamp_depth(&physical, range * (1.0 - 1e-9))?;

    let ideal = depth_to_correlations(&gt_depth, &amplitude, cfg.frequency_hz)?;
    let clean_noisy = depth_to_correlations(&physical, &amplitude, cfg.frequency_hz)?;
    let noisy = add_sensor_noise(&clean_noisy, &noise, rng::mix(&[record_seed, TAG_SENSOR]))?;
    let noisy_depth = correlations_to_depth(&noisy)?;
    let confidence = confidence_map(&noisy_depth)?;
    Ok(PipelineRecord {
        id: format!("r{index:04}"),
        seed: record_seed,
        ideal,
        noisy,
        gt_depth,
        noisy_depth,
        confidence,
    })
}

pub fn synthesize_records(cfg: &RunConfig, seed: u64, count: usize) -> Result<Vec<PipelineRecord>> {
    (0..count as u64)
        .map(|i| synthesize_record(cfg, seed, i))
        .collect()
}

// ---------------------------------------------------------------------------
// Disk layout
// ---------------------------------------------------------------------------

fn record_paths(id: &str) -> ManifestRecord {
    ManifestRecord {
        id: id.to_string(),
        seed: 0,
        ideal_i: format!("{id}_ideal_i.pfm"),
        ideal_q: format!("{id}_ideal_q.pfm"),
        noisy_i: format!("{id}_noisy_i.pfm"),
        noisy_q: format!("{id}_noisy_q.pfm"),
        gt_depth: format!("{id}_gt_depth.pfm"),
        gt_mask: format!("{id}_gt_mask.pfm"),
        noisy_depth: format!("{id}_noisy_depth.pfm"),
        noisy_mask: format!("{id}_noisy_mask.pfm"),
        confidence: format!("{id}_confidence.pfm"),
    }
}

/// Writes all record files plus the manifest under `out_dir`.
pub fn write_dataset(
    records: &[PipelineRecord],
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        let mut entry = record_paths(&rec.id);
        entry.seed = rec.seed;
        let (w, h) = (rec.gt_depth.width(), rec.gt_depth.height());
        pfm::write_pfm(&out_dir.join(&entry.ideal_i), rec.ideal.i_plane())?;
        pfm::write_pfm(&out_dir.join(&entry.ideal_q), rec.ideal.q_plane())?;
        pfm::write_pfm(&out_dir.join(&entry.noisy_i), rec.noisy.i_plane())?;
        pfm::write_pfm(&out_dir.join(&entry.noisy_q), rec.noisy.q_plane())?;
        pfm::write_pfm(&out_dir.join(&entry.gt_depth), rec.gt_depth.values())?;
        pfm::write_mask_pfm(&out_dir.join(&entry.gt_mask), rec.gt_depth.valid(), w, h)?;
        pfm::write_pfm(&out_dir.join(&entry.noisy_depth), rec.noisy_depth.values())?;
        pfm::write_mask_pfm(
            &out_dir.join(&entry.noisy_mask),
            rec.noisy_depth.valid(),
            w,
            h,
        )?;
        pfm::write_pfm(&out_dir.join(&entry.confidence), rec.confidence.values())?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        version: crate::io::manifest::MANIFEST_VERSION,
        frequency_hz: cfg.frequency_hz,
        noise: cfg.noise_params(),
        scale_const: cfg.scale_const,
        records: entries,
    };
    manifest.save(&out_dir.join(MANIFEST_FILENAME))?;
    Ok(manifest)
}

/// Loads records back from a manifest. Integrity is checked first.
pub fn load_records(manifest: &DatasetManifest, base_dir: &Path) -> Result<Vec<PipelineRecord>> {
    manifest.validate_files(base_dir)?;
    let mut out = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        let read = |p: &str| pfm::read_pfm(&base_dir.join(p));
        let ideal = RawFrame::new(
            read(&entry.ideal_i)?,
            read(&entry.ideal_q)?,
            manifest.frequency_hz,
        )?;
        let noisy = RawFrame::new(
            read(&entry.noisy_i)?,
            read(&entry.noisy_q)?,
            manifest.frequency_hz,
        )?;
        let (gt_mask, _, _) = pfm::read_mask_pfm(&base_dir.join(&entry.gt_mask))?;
        let gt_depth = DepthMap::new(read(&entry.gt_depth)?, gt_mask)?;
        let (noisy_mask, _, _) = pfm::read_mask_pfm(&base_dir.join(&entry.noisy_mask))?;
        let noisy_depth = DepthMap::new(read(&entry.noisy_depth)?, noisy_mask)?;
        let confidence = ConfidenceMap::from_image(read(&entry.confidence)?)?;
        out.push(PipelineRecord {
            id: entry.id.clone(),
            seed: entry.seed,
            ideal,
            noisy,
            gt_depth,
            noisy_depth,
            confidence,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training items
// ---------------------------------------------------------------------------

/// Builds the per-plane training items for a set of records.
///
/// Each record contributes two items (I and Q planes). The diffusion target
/// is the clean plane replicated to `in_channels`; the guidance stacks the
/// noisy plane (same replication) plus, when configured, the confidence
/// channel. With `normalize = false` the raw high-dynamic-range values are
/// used as-is.
pub fn build_train_items<T: Real>(
    records: &[PipelineRecord],
    cfg: &RunConfig,
) -> Result<Vec<TrainItem<T>>> {
    let mut items = Vec::with_capacity(records.len() * 2);
    for rec in records {
        let (ideal_i, ideal_q, noisy_i, noisy_q) = if cfg.normalize {
            let ni = normalize_pair(&rec.ideal, cfg.scale_const)?;
            let nn = normalize_pair(&rec.noisy, cfg.scale_const)?;
            (
                ni.i_plane().clone(),
                ni.q_plane().clone(),
                nn.i_plane().clone(),
                nn.q_plane().clone(),
            )
        } else {
            (
                rec.ideal.i_plane().clone(),
                rec.ideal.q_plane().clone(),
                rec.noisy.i_plane().clone(),
                rec.noisy.q_plane().clone(),
            )
        };
        for (clean, noisy) in [(ideal_i, noisy_i), (ideal_q, noisy_q)] {
            let x0 = Tensor::<T>::replicate_image(&clean, cfg.in_channels);
            let mut g = Tensor::<T>::replicate_image(&noisy, cfg.in_channels);
            if cfg.use_confidence {
                let conf = Tensor::<T>::replicate_image(rec.confidence.values(), 1);
                g = Tensor::concat_channels(&g, &conf)?;
            }
            items.push(TrainItem {
                x0,
                guidance: Some(g),
            });
        }
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Denoising
// ---------------------------------------------------------------------------

/// Epsilon model backed by the base U-Net and an optional guidance branch.
pub struct GuidedEps<'a, T> {
    pub base: &'a UNet<T>,
    pub guide: Option<&'a GuidanceNet<T>>,
}

impl<T: Real> EpsModel<T> for GuidedEps<'_, T> {
    fn predict_eps(&self, x_t: &Tensor<T>, t: usize, guidance: Option<&Tensor<T>>) -> Tensor<T> {
        match (self.guide, guidance) {
            (Some(g), Some(cond)) => {
                forward_guided(self.base, g, x_t, t, cond)
                    .expect("validated shapes")
                    .0
            }
            _ => self.base.predict(x_t, t).expect("validated shapes"),
        }
    }
}

/// Output of the per-record denoise pipeline.
#[derive(Debug, Clone)]
pub struct DenoisedRecord {
    /// Sampled I/Q planes (channel-averaged model output, in the value
    /// domain the model was trained on).
    pub sampled_i: Image,
    pub sampled_q: Image,
    pub depth: DepthMap,
}

/// Builds the guidance stack for one plane of a record.
fn guidance_tensor<T: Real>(
    noisy_plane: &Image,
    confidence: &ConfidenceMap,
    cfg_in_channels: usize,
    use_confidence: bool,
) -> Result<Tensor<T>> {
    let mut g = Tensor::<T>::replicate_image(noisy_plane, cfg_in_channels);
    if use_confidence {
        let conf = Tensor::<T>::replicate_image(confidence.values(), 1);
        g = Tensor::concat_channels(&g, &conf)?;
    }
    Ok(g)
}

/// Samples denoised correlations for one record and reconstructs depth.
///
/// Each plane runs its own DDIM trajectory from Gaussian noise; the three
/// model channels are averaged back into one plane (the replication
/// inverse), denormalized when the model was trained on normalized data,
/// and converted to depth.
pub fn denoise_record<T: Real>(
    base: &UNet<T>,
    guide: Option<&GuidanceNet<T>>,
    record: &PipelineRecord,
    record_index: u64,
    normalize: bool,
    scale_const: f64,
    steps: usize,
    eta: f64,
    seed: u64,
    sched: &Schedule,
) -> Result<DenoisedRecord> {
    let (noisy_i, noisy_q) = if normalize {
        let nf = normalize_pair(&record.noisy, scale_const)?;
        (nf.i_plane().clone(), nf.q_plane().clone())
    } else {
        (
            record.noisy.i_plane().clone(),
            record.noisy.q_plane().clone(),
        )
    };
    let use_conf = base.cfg.uses_confidence();
    let model = GuidedEps { base, guide };
    let shape = (
        base.cfg.in_channels,
        record.noisy.height(),
        record.noisy.width(),
    );
    let mut planes = Vec::with_capacity(2);
    for (plane_tag, noisy_plane) in [(0u64, &noisy_i), (1u64, &noisy_q)] {
        let g = guidance_tensor::<T>(noisy_plane, &record.confidence, base.cfg.in_channels, use_conf)?;
        let sampler = SamplerConfig {
            num_inference_steps: steps,
            eta,
            seed: rng::mix(&[seed, TAG_SAMPLE, record_index, plane_tag]),
            // normalized data lives in [-1, 1]; keep trajectories near it
            clip_x0: normalize.then_some(1.2),
        };
        let sample = ddim_sample(&model, Some(&g), &sampler, sched, shape)?;
        planes.push(sample.average_channels());
    }
    let sampled_q = planes.pop().expect("two planes");
    let sampled_i = planes.pop().expect("two planes");

    let frame = if normalize {
        let nf = NormalizedFrame::from_planes(
            sampled_i.clone(),
            sampled_q.clone(),
            record.noisy.frequency_hz(),
            scale_const,
        )?;
        denormalize_pair(&nf)?
    } else {
        RawFrame::new(
            sampled_i.clone(),
            sampled_q.clone(),
            record.noisy.frequency_hz(),
        )?
    };
    let depth = correlations_to_depth(&frame)?;
    Ok(DenoisedRecord {
        sampled_i,
        sampled_q,
        depth,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecordEval {
    pub id: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub records: Vec<RecordEval>,
    pub aggregate: MetricsReport,
}

/// Pools per-record metrics, weighting by valid pixel count.
pub fn aggregate_reports(records: &[RecordEval]) -> Result<MetricsReport> {
    let total: usize = records.iter().map(|r| r.metrics.valid_pixel_count).sum();
    if total == 0 {
        return Err(Error::EmptyValidSet);
    }
    let mut agg = MetricsReport {
        mae_m: 0.0,
        absrel: 0.0,
        delta1: 0.0,
        delta2: 0.0,
        delta3: 0.0,
        valid_pixel_count: total,
    };
    for r in records {
        let w = r.metrics.valid_pixel_count as f64 / total as f64;
        agg.mae_m += w * r.metrics.mae_m;
        agg.absrel += w * r.metrics.absrel;
        agg.delta1 += w * r.metrics.delta1;
        agg.delta2 += w * r.metrics.delta2;
        agg.delta3 += w * r.metrics.delta3;
    }
    Ok(agg)
}

/// Scores a set of predicted depth maps against record ground truth.
pub fn evaluate_predictions(
    records: &[PipelineRecord],
    predictions: &[DepthMap],
) -> Result<EvalReport> {
    if records.len() != predictions.len() {
        return Err(Error::DimensionMismatch(
            "record/prediction count mismatch".into(),
        ));
    }
    let mut evals = Vec::with_capacity(records.len());
    for (rec, pred) in records.iter().zip(predictions) {
        evals.push(RecordEval {
            id: rec.id.clone(),
            metrics: compute_metrics(pred, &rec.gt_depth)?,
        });
    }
    let aggregate = aggregate_reports(&evals)?;
    Ok(EvalReport {
        records: evals,
        aggregate,
    })
}

// ---------------------------------------------------------------------------
// Desk experiment
// ---------------------------------------------------------------------------

const TAG_TRAINSET: u64 = 0x7e5a1;
const TAG_TESTSET: u64 = 0x7e5a2;
const TAG_PRIOR: u64 = 0x7e5a3;
const TAG_GUIDE: u64 = 0x7e5a4;
const TAG_DENOISE: u64 = 0x7e5a5;

/// Maps the run config onto stage training settings.
pub fn train_config(cfg: &RunConfig, stage: Stage, seed: u64) -> crate::training::TrainConfig {
    crate::training::TrainConfig {
        stage,
        iterations: match stage {
            Stage::Prior => cfg.prior_iterations,
            Stage::Guidance => cfg.iterations,
        },
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        grad_accum_steps: cfg.grad_accum_steps,
        seed,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
    }
}

/// Aggregated outcome of the desk-scale comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentReport {
    /// Noisy sensor depth against ground truth (no learning at all).
    pub noisy: MetricsReport,
    /// Classical bilateral filter on the noisy depth.
    pub bilateral: MetricsReport,
    /// Full model: normalized guidance with confidence channel.
    pub guided: MetricsReport,
    /// Ablation: guidance without the confidence channel.
    pub unguided: MetricsReport,
    /// Ablation: normalization skipped, raw high-dynamic-range data.
    pub hdr: MetricsReport,
    pub prior_probe: (f64, f64),
    pub guided_probe: (f64, f64),
}

/// Runs the full desk comparison: one shared prior, three guidance
/// variants, denoising and evaluation on a held-out test set.
pub fn run_experiment(cfg: &RunConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sched = cfg.schedule()?;
    let train_records = synthesize_records(cfg, rng::mix(&[seed, TAG_TRAINSET]), cfg.num_train_records)?;
    let test_records = synthesize_records(cfg, rng::mix(&[seed, TAG_TESTSET]), cfg.num_test_records)?;

    // variant configs: share everything except guidance wiring / codec
    let mut cfg_noconf = cfg.clone();
    cfg_noconf.use_confidence = false;
    let mut cfg_hdr = cfg.clone();
    cfg_hdr.normalize = false;

    let items_ldr = build_train_items::<f32>(&train_records, cfg)?;
    let items_noconf = build_train_items::<f32>(&train_records, &cfg_noconf)?;
    let items_hdr = build_train_items::<f32>(&train_records, &cfg_hdr)?;

    // stage 1: shared frozen prior, trained on normalized clean targets
    let prior_cfg = train_config(cfg, Stage::Prior, rng::mix(&[seed, TAG_PRIOR]));
    let prior = crate::training::train_prior(&items_ldr, &prior_cfg, &cfg.model_config(), &sched)?;

    // stage 2: one guidance branch per variant, identical training seeds
    let guide_seed = rng::mix(&[seed, TAG_GUIDE]);
    let gcfg = train_config(cfg, Stage::Guidance, guide_seed);
    let guided = crate::training::train_guidance(&prior.base, &items_ldr, &gcfg, &sched)?;

    let mut base_noconf = prior.base.clone();
    base_noconf.cfg.guidance_channels = cfg_noconf.model_config().guidance_channels;
    let unguided = crate::training::train_guidance(&base_noconf, &items_noconf, &gcfg, &sched)?;

    let hdr = crate::training::train_guidance(&prior.base, &items_hdr, &gcfg, &sched)?;

    // evaluate all variants on the held-out records
    let denoise_seed = rng::mix(&[seed, TAG_DENOISE]);
    let eval_variant = |base: &UNet<f32>,
                        guide: &GuidanceNet<f32>,
                        vcfg: &RunConfig|
     -> Result<MetricsReport> {
        let mut preds = Vec::with_capacity(test_records.len());
        for (i, rec) in test_records.iter().enumerate() {
            let out = denoise_record(
                base,
                Some(guide),
                rec,
                i as u64,
                vcfg.normalize,
                vcfg.scale_const,
                vcfg.sample_steps,
                vcfg.eta,
                denoise_seed,
                &sched,
            )?;
            preds.push(out.depth);
        }
        Ok(evaluate_predictions(&test_records, &preds)?.aggregate)
    };

    let guided_metrics = eval_variant(&prior.base, guided.guidance.as_ref().expect("stage 2"), cfg)?;
    let unguided_metrics =
        eval_variant(&base_noconf, unguided.guidance.as_ref().expect("stage 2"), &cfg_noconf)?;
    let hdr_metrics = eval_variant(&prior.base, hdr.guidance.as_ref().expect("stage 2"), &cfg_hdr)?;

    let noisy_evals: Vec<RecordEval> = test_records
        .iter()
        .map(|r| {
            Ok(RecordEval {
                id: r.id.clone(),
                metrics: compute_metrics(&r.noisy_depth, &r.gt_depth)?,
            })
        })
        .collect::<Result<_>>()?;
    let bilateral_evals: Vec<RecordEval> = test_records
        .iter()
        .map(|r| {
            let smoothed = crate::evalkit::bilateral_baseline(&r.noisy_depth, 1.5, 0.1)?;
            Ok(RecordEval {
                id: r.id.clone(),
                metrics: compute_metrics(&smoothed, &r.gt_depth)?,
            })
        })
        .collect::<Result<_>>()?;

    Ok(ExperimentReport {
        noisy: aggregate_reports(&noisy_evals)?,
        bilateral: aggregate_reports(&bilateral_evals)?,
        guided: guided_metrics,
        unguided: unguided_metrics,
        hdr: hdr_metrics,
        prior_probe: (prior.probe_loss_start, prior.probe_loss_end),
        guided_probe: (guided.probe_loss_start, guided.probe_loss_end),
    })
}
