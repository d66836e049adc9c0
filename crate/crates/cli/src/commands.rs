use std::fs;
use std::path::Path;

use serde_json::json;
use tvpr::aggregate::AggregationVariant;
use tvpr::io::heatmap::{render_grid, render_key_mask, render_level_map};
use tvpr::io::image::{load_image, parse_size, save_rgb, ResizeMode};
use tvpr::io::{load_weights, read_manifest, read_store, save_weights, write_manifest, write_store, ManifestRecord};
use tvpr::matcher::MatcherConfig;
use tvpr::model::{KeySelection, ModelConfig, ModelWeights};
use tvpr::pipeline::{extract_descriptors, extract_tokens, ExtractOptions};
use tvpr::retrieval::{
    pose_recall, recall_at_n, run_query, tag_map, DescriptorIndex, QueryOutcome, DEFAULT_POSE_TOLERANCES,
};
use tvpr::synth::{generate, SynthConfig};
use tvpr::training::{train_head, MiningConfig, TrainConfig};
use tvpr::{Error, Result};

use crate::{AttnArgs, EvaluateArgs, ExtractArgs, InitWeightsArgs, QueryArgs, SelftestArgs, SynthArgs, TrainArgs};

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn init_weights(a: InitWeightsArgs) -> Result<()> {
    let config = ModelConfig {
        dim: a.dim,
        layers: a.layers,
        heads: a.heads,
        variant: a.variant.parse()?,
        ..ModelConfig::default()
    };
    let model = ModelWeights::<f32>::random(config, a.seed)?;
    save_weights(&model, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let (width, height) = parse_size(&a.size)?;
    let cfg = SynthConfig { scenes: a.scenes, views: a.views, width, height, seed: a.seed, ..Default::default() };
    let views = generate(&cfg)?;
    let images = a.out_dir.join("images");
    fs::create_dir_all(&images)?;
    let (mut all, mut db, mut queries) = (Vec::new(), Vec::new(), Vec::new());
    for v in &views {
        let rel = Path::new("images").join(format!("{}.png", v.tag.id));
        save_rgb(&a.out_dir.join(&rel), &v.image)?;
        let rec = ManifestRecord {
            id: v.tag.id.clone(),
            image: rel,
            easting_m: v.tag.easting,
            northing_m: v.tag.northing,
            heading_deg: v.tag.heading_deg,
            pose: v.tag.pose,
        };
        if v.view == 0 { db.push(rec.clone()) } else { queries.push(rec.clone()) }
        all.push(rec);
    }
    write_manifest(&a.out_dir.join("manifest.jsonl"), &all)?;
    write_manifest(&a.out_dir.join("database.jsonl"), &db)?;
    write_manifest(&a.out_dir.join("queries.jsonl"), &queries)?;
    println!("wrote {} images ({} database, {} queries) to {}", all.len(), db.len(), queries.len(), a.out_dir.display());
    Ok(())
}

fn check_variant(model: &ModelWeights<f32>, requested: Option<&str>) -> Result<()> {
    if let Some(v) = requested {
        let v: AggregationVariant = v.parse()?;
        if v != model.config.variant {
            return Err(Error::Config(format!(
                "model head was built for variant {}, not {v}",
                model.config.variant
            )));
        }
    }
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let model = load_weights(&a.model)?;
    check_variant(&model, a.variant.as_deref())?;
    let (width, height) = parse_size(&a.size)?;
    let tau = a.tau.unwrap_or(model.config.tau);
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
    }
    let opts = ExtractOptions {
        width,
        height,
        resize: a.resize.parse()?,
        keys: if a.store_all_patches { KeySelection::All } else { KeySelection::Threshold(tau) },
    };
    let records = read_manifest(&a.manifest)?;
    let mut descs = Vec::with_capacity(records.len());
    let mut failed = 0;
    for (rec, r) in records.iter().zip(extract_descriptors(&model, &records, &opts)) {
        match r {
            Ok(d) => descs.push(d),
            Err(e) => {
                failed += 1;
                eprintln!("warning: skipped `{}`: {e}", rec.id);
            }
        }
    }
    write_store(&a.out, &descs)?;
    let patches: usize = descs.iter().map(|d| d.keys.len()).sum();
    println!(
        "wrote {} descriptors ({} key patches, {failed} failed) to {}",
        descs.len(),
        patches,
        a.out.display()
    );
    Ok(())
}

pub fn query(a: QueryArgs) -> Result<()> {
    let index = DescriptorIndex::build(read_store(&a.index)?)?;
    let queries = read_store(&a.queries)?;
    let config = MatcherConfig {
        reproj_threshold: a.reproj_threshold,
        iterations: a.iterations,
        seed: a.seed,
        ..MatcherConfig::default()
    };
    config.validate()?;
    let outcomes = queries
        .iter()
        .map(|q| run_query(q, &index, a.topk, a.rerank, &config))
        .collect::<Result<Vec<QueryOutcome>>>()?;
    write_json(&a.out, &json!({ "topk": a.topk, "rerank": a.rerank, "outcomes": outcomes }))?;
    println!("wrote rankings for {} queries to {}", outcomes.len(), a.out.display());
    Ok(())
}

pub fn read_outcomes(path: &Path) -> Result<Vec<QueryOutcome>> {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
    let outcomes = v
        .get("outcomes")
        .cloned()
        .ok_or_else(|| Error::Validation(format!("{}: no `outcomes` field", path.display())))?;
    Ok(serde_json::from_value(outcomes)?)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.manifest.is_empty() {
        return Err(Error::Config("at least one --manifest is required".into()));
    }
    let outcomes = read_outcomes(&a.results)?;
    let mut tags = Vec::new();
    for m in &a.manifest {
        tags.extend(read_manifest(m)?.iter().map(ManifestRecord::tag));
    }
    let tags = tag_map(&tags)?;
    let report = if a.pose_tolerances {
        let r = pose_recall(&outcomes, &tags, &DEFAULT_POSE_TOLERANCES)?;
        for (t, v) in r.tolerances.iter().zip(&r.recalls) {
            println!("{:>5} m / {:>4}°  {:.4}", t.meters, t.degrees, v);
        }
        serde_json::to_value(&r)?
    } else {
        let r = recall_at_n(&outcomes, &tags, a.radius, &a.n)?;
        for (n, v) in r.ns.iter().zip(&r.recalls) {
            println!("R@{n:<3} {v:.4}");
        }
        serde_json::to_value(&r)?
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn attn(a: AttnArgs) -> Result<()> {
    let model = load_weights(&a.model)?;
    let (width, height) = parse_size(&a.size)?;
    let resize: ResizeMode = a.resize.parse()?;
    let tau = a.tau.unwrap_or(model.config.tau);
    let image = load_image(&a.image, width, height, resize)?;
    let (desc, bundle) = model.describe("image", &image, KeySelection::Threshold(tau))?;
    let (rows, cols) = (desc.rows as usize, desc.cols as usize);
    let f64s = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let level_names: &[&str] = if bundle.maps.len() == 3 { &["low", "mid", "high"] } else { &["single"] };
    let mut outputs = Vec::new();
    for (name, map) in level_names.iter().zip(&bundle.maps) {
        outputs.push((format!("attention_{name}"), render_level_map(&f64s(map), rows, cols)?));
    }
    let fused = f64s(&bundle.fused);
    outputs.push(("attention_fused".into(), render_grid(&fused, rows, cols)?));
    outputs.push(("key_patches".into(), render_key_mask(&fused, tau, rows, cols)?));
    fs::create_dir_all(&a.out_dir)?;
    for (name, img) in &outputs {
        img.write_pgm(&a.out_dir.join(format!("{name}.pgm")))?;
        if a.png {
            img.write_png(&a.out_dir.join(format!("{name}.png")))?;
        }
    }
    println!("{} key patches of {}; maps written to {}", desc.keys.len(), rows * cols, a.out_dir.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut model = load_weights(&a.model)?;
    let (width, height) = parse_size(&a.size)?;
    let records = read_manifest(&a.manifest)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        margin: a.margin,
        mining: MiningConfig { mode: a.mode.parse()?, radius_pos: a.radius_pos, radius_neg: a.radius_neg, n_neg: a.n_neg },
        seed: a.seed,
    };
    if a.epochs > 0 {
        let opts = ExtractOptions { width, height, resize: a.resize.parse()?, ..ExtractOptions::default() };
        let tokens = extract_tokens(&model, &records, &opts)
            .into_iter()
            .map(|t| t.map(|t| t.cast::<f64>()))
            .collect::<Result<Vec<_>>>()?;
        let tags: Vec<_> = records.iter().map(ManifestRecord::tag).collect();
        let out = train_head(&tokens, &tags, &model.head.cast::<f64>(), &config)?;
        for (e, (loss, n)) in out.epoch_losses.iter().zip(&out.triplets_per_epoch).enumerate() {
            println!("epoch {:>3}  loss {loss:.6}  triplets {n}", e + 1);
        }
        model.head = out.params.cast();
    }
    save_weights(&model, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn selftest(a: SelftestArgs) -> Result<bool> {
    if let Some(f) = &a.inject_fault {
        if !tvpr::selftest::FAULTS.contains(&f.as_str()) {
            return Err(Error::Config(format!("unknown fault `{f}`")));
        }
    }
    let results = tvpr::selftest::run_selftest(a.inject_fault.as_deref());
    for r in &results {
        println!("{r}");
    }
    let ok = results.iter().all(|r| r.passed);
    println!("{}", if ok { "all checks passed" } else { "selftest FAILED" });
    Ok(ok)
}
