use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use proxyad_core::config::ExperimentConfig;
use proxyad_core::experiment::{
    evaluate_score_rows, format_evaluation, load_data, load_model, load_proxy_checkpoint, manifest,
    read_scores_csv, run_ablation, run_sweep, save_proxy_checkpoint, save_recon_checkpoint,
    train_proxy_stage, train_recon_stage, write_scores_csv, Evaluation, SweepParam,
};
use proxyad_core::imaging::{save_dataset, write_gray16, write_gray8, LabeledSample, Split};
use proxyad_core::nn::Tensor;
use proxyad_core::papc::construct_from_image;
use proxyad_core::plot::{plot_histograms, plot_sweep, recon_grid};
use proxyad_core::scoring::{
    evaluate_pixels, score_dataset, AnomalyModel, AnomalyRecord, LATENT, PIXEL, SI_ERROR,
};
use proxyad_core::superpixel::ProxyRegistry;
use proxyad_core::training::{write_loss_csv, PapcSource, ABLATION_ROWS};
use proxyad_core::{Error, Result};

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(cfg.output.dir.clone())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_proxy_png(dir: &Path, name: &str, proxy: &Tensor<f32>) -> Result<()> {
    if proxy.channels == 1 {
        write_gray16(&dir.join(format!("{name}.png")), proxy.height, proxy.width, &proxy.data)
    } else {
        for c in 0..proxy.channels {
            write_gray16(&dir.join(format!("{name}_{c}.png")), proxy.height, proxy.width, proxy.channel(c))?;
        }
        Ok(())
    }
}

pub fn phantom_gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let set = proxyad_core::imaging::generate_phantoms(&cfg.phantom)?;
    save_dataset(out, Split::Train, &set.train)?;
    save_dataset(out, Split::Test, &set.test)?;
    write_text(
        &out.join("manifest.txt"),
        &manifest(
            cfg,
            &[
                ("phantom_seed", cfg.phantom.seed.to_string()),
                ("n_train", set.train.len().to_string()),
                ("n_test", set.test.len().to_string()),
            ],
        ),
    )?;
    println!("wrote {} training and {} test phantoms to {}", set.train.len(), set.test.len(), out.display());
    Ok(())
}

pub fn prepare(cfg: &ExperimentConfig, emit_pseudo: usize) -> Result<()> {
    let data = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let mode = cfg.ablation.proxy_mode;
    let builder = ProxyRegistry::standard().get(mode.name())?;
    let root = dir.join("proxies");
    for (split, samples) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        let proxies = samples
            .par_iter()
            .map(|s| builder.build(&s.image, &cfg.proxy))
            .collect::<Result<Vec<_>>>()?;
        for (s, p) in samples.iter().zip(&proxies) {
            let d = root.join(split.dir_name()).join(s.label.as_str());
            fs::create_dir_all(&d)?;
            write_proxy_png(&d, &format!("{}_proxy", s.id), p)?;
        }
    }
    let (h, w) = data
        .train
        .first()
        .map(|s| (s.image.height(), s.image.width()))
        .ok_or_else(|| Error::Dataset("no training images".into()))?;
    write_text(
        &root.join("manifest.txt"),
        &manifest(
            cfg,
            &[
                ("mode", mode.name().to_string()),
                ("n_superpixels", cfg.proxy.superpixels_for(h, w).to_string()),
                ("compactness", cfg.proxy.compactness.to_string()),
                ("slic_iters", cfg.proxy.slic_iters.to_string()),
                ("n_train", data.train.len().to_string()),
                ("n_test", data.test.len().to_string()),
            ],
        ),
    )?;
    println!("cached {} proxies under {}", data.train.len() + data.test.len(), root.display());

    if emit_pseudo > 0 {
        let normals: Vec<&LabeledSample> = data.train.iter().filter(|s| !s.label.is_abnormal()).collect();
        let pdir = dir.join("pseudo");
        fs::create_dir_all(&pdir)?;
        let mut lines = String::from("index,base_id,source_id,top,left,height,width\n");
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.train.seed);
        for k in 0..emit_pseudo {
            use rand::Rng;
            let i = k % normals.len();
            let j = match cfg.train.papc_source {
                PapcSource::Other if normals.len() > 1 => {
                    let j = rng.random_range(0..normals.len() - 1);
                    if j >= i { j + 1 } else { j }
                }
                _ => i,
            };
            let base = builder.build(&normals[i].image, &cfg.proxy)?;
            let pp = construct_from_image(&base, &normals[j].image, &normals[j].id, builder.as_ref(), &cfg.proxy, &mut rng)?;
            let name = format!("pseudo_{k:04}");
            write_proxy_png(&pdir, &format!("{name}_proxy"), &pp.proxy)?;
            write_gray8(&pdir.join(format!("{name}_mask.png")), base.height, base.width, &pp.mask)?;
            lines.push_str(&format!(
                "{k},{},{},{},{},{},{}\n",
                normals[i].id, pp.source_id, pp.rect.top, pp.rect.left, pp.rect.height, pp.rect.width
            ));
        }
        write_text(&pdir.join("pseudo.csv"), &lines)?;
        println!("wrote {emit_pseudo} pseudo-abnormal proxies to {}", pdir.display());
    }
    Ok(())
}

pub fn train_proxy(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let data = load_data(cfg)?;
    let ckpt = match out {
        Some(p) => p,
        None => out_dir(cfg)?.join("proxy.ckpt"),
    };
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent)?;
    }
    let outcome = train_proxy_stage(cfg, &data.train)?;
    save_proxy_checkpoint(&ckpt, cfg, &outcome.module)?;
    write_loss_csv(&sibling(&ckpt, "_loss.csv"), "loss_proxy", &outcome.log)?;
    write_text(
        &sibling(&ckpt, ".manifest"),
        &manifest(cfg, &[("stage", "proxy".into()), ("epochs", outcome.log.len().to_string())]),
    )?;
    if let Some(last) = outcome.log.last() {
        println!("proxy stage: final loss_proxy {:.6}; checkpoint {}", last.main, ckpt.display());
    }
    Ok(())
}

pub fn train_recon(cfg: &ExperimentConfig, proxy_ckpt: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let proxy_ckpt = proxy_ckpt.unwrap_or_else(|| dir.join("proxy.ckpt"));
    let ckpt = out.unwrap_or_else(|| dir.join("recon.ckpt"));
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent)?;
    }
    let pem = load_proxy_checkpoint(&proxy_ckpt, cfg)?;
    let data = load_data(cfg)?;
    let outcome = train_recon_stage(cfg, &data.train, &pem)?.ok_or_else(|| {
        Error::Config(format!(
            "{} has no reconstruction stage (use_si_proxy = false)",
            cfg.ablation.tag()
        ))
    })?;
    save_recon_checkpoint(&ckpt, cfg, &outcome)?;
    write_loss_csv(&sibling(&ckpt, "_loss.csv"), "loss_rec", &outcome.log)?;
    write_text(
        &sibling(&ckpt, ".manifest"),
        &manifest(
            cfg,
            &[
                ("stage", "recon".into()),
                ("epochs", outcome.log.len().to_string()),
                ("papc_source", cfg.train.papc_source.to_string()),
                ("recon_train_input", cfg.train.recon_train_input.to_string()),
            ],
        ),
    )?;
    if let Some(last) = outcome.log.last() {
        println!("recon stage: final loss_rec {:.6}; checkpoint {}", last.main, ckpt.display());
    }
    Ok(())
}

fn grid_rows(model: &AnomalyModel, test: &[LabeledSample], records: &[AnomalyRecord], per_class: usize) -> Result<Vec<Vec<Tensor<f32>>>> {
    let builder = ProxyRegistry::standard().get(model.reference_mode().name())?;
    let mut rows = Vec::new();
    for abnormal in [false, true] {
        for (s, r) in test.iter().zip(records).filter(|(s, _)| s.label.is_abnormal() == abnormal).take(per_class) {
            let f = model.reconstruct(&s.image)?;
            let reference = builder.build(&s.image, &model.proxy_params)?;
            let a_pix = Tensor::from_vec(1, s.image.height(), s.image.width(), r.a_pix.clone());
            rows.push(vec![f.image, reference, f.proxy, f.reconstruction, a_pix]);
        }
    }
    Ok(rows)
}

pub fn score(cfg: &ExperimentConfig, proxy_ckpt: Option<PathBuf>, recon_ckpt: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let proxy_ckpt = proxy_ckpt.unwrap_or_else(|| dir.join("proxy.ckpt"));
    let recon_ckpt = recon_ckpt.or_else(|| {
        let p = dir.join("recon.ckpt");
        p.exists().then_some(p)
    });
    let model = load_model(cfg, &proxy_ckpt, recon_ckpt.as_deref())?;
    let data = load_data(cfg)?;
    let records = score_dataset(&model, &data.test)?;
    write_scores_csv(&dir.join("scores.csv"), &records)?;
    write_text(
        &dir.join("scores.manifest"),
        &manifest(cfg, &[("scorer", model.primary_scorer().to_string()), ("n_test", records.len().to_string())]),
    )?;

    if cfg.output.heatmaps {
        let hdir = dir.join("heatmaps");
        fs::create_dir_all(&hdir)?;
        for (s, r) in data.test.iter().zip(&records) {
            write_gray8(&hdir.join(format!("{}_apix.png", r.id)), s.image.height(), s.image.width(), &r.a_pix)?;
        }
    }
    recon_grid(&dir.join("recon_grid.png"), &grid_rows(&model, &data.test, &records, 3)?)?;
    for scorer in [LATENT, PIXEL, SI_ERROR] {
        let (mut normal, mut abnormal) = (Vec::new(), Vec::new());
        for r in &records {
            let v = r.score(scorer)?;
            if r.label.is_abnormal() { abnormal.push(v) } else { normal.push(v) }
        }
        plot_histograms(&dir.join(format!("hist_{scorer}.png")), &normal, &abnormal, 30)?;
    }
    if let Some(p) = evaluate_pixels(&records, cfg.output.threshold)? {
        let mut kv = format!("pixel.pooled_auc = {}\n", p.pooled_auc);
        if let Some(a) = p.mean_image_auc {
            kv.push_str(&format!("pixel.mean_image_auc = {a}\n"));
        }
        kv.push_str(&format!("pixel.acc = {}\npixel.f1 = {}\n", p.acc, p.f1));
        write_text(&dir.join("pixel_metrics.kv"), &kv)?;
        println!("pixel-level: pooled AUC {:.4}", p.pooled_auc);
    }
    println!("scored {} test images; wrote {}", records.len(), dir.join("scores.csv").display());
    Ok(())
}

fn read_kv(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .map(|t| {
            t.lines()
                .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
                .collect()
        })
        .unwrap_or_default()
}

fn scorer_name(s: &str) -> Result<&'static str> {
    [LATENT, PIXEL, SI_ERROR]
        .into_iter()
        .find(|n| *n == s)
        .ok_or_else(|| Error::Config(format!("unknown scorer '{s}' (expected latent|pixel|si-error)")))
}

pub fn eval(scores: &Path, scorer: Option<String>, threshold: f64, out: Option<PathBuf>) -> Result<()> {
    let rows = read_scores_csv(scores)?;
    let meta = read_kv(&sibling(scores, ".manifest"));
    let lookup = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    let scorer = scorer_name(&scorer.or_else(|| lookup("scorer")).unwrap_or_else(|| LATENT.into()))?;
    let tag = lookup("ablation").unwrap_or_else(|| "unknown".into());
    let evaluation = Evaluation {
        row: proxyad_core::training::ABLATION_ROWS.into_iter().find(|&r| {
            proxyad_core::training::AblationConfig::row(r).map(|a| a.tag() == tag).unwrap_or(false)
        }),
        tag,
        primary_scorer: scorer,
        primary: evaluate_score_rows(&rows, scorer, threshold)?,
        latent: evaluate_score_rows(&rows, LATENT, threshold)?,
        pixelspace: evaluate_score_rows(&rows, PIXEL, threshold)?,
        si_error: evaluate_score_rows(&rows, SI_ERROR, threshold)?,
        pixel: None,
    };
    let (mut text, mut kv) = format_evaluation(&evaluation);
    let pix = scores.with_file_name("pixel_metrics.kv");
    for (k, v) in read_kv(&pix) {
        kv.push_str(&format!("{k} = {v}\n"));
        text.push_str(&format!("{k}: {v}\n"));
    }
    print!("{text}");
    let prefix = out.unwrap_or_else(|| scores.with_file_name("report"));
    write_text(&prefix.with_extension("txt"), &text)?;
    write_text(&prefix.with_extension("kv"), &kv)?;
    Ok(())
}

pub fn ablate(cfg: &ExperimentConfig, rows: Option<Vec<u8>>) -> Result<()> {
    let rows = rows.unwrap_or_else(|| ABLATION_ROWS.to_vec());
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let results = run_ablation(cfg, &data, &rows)?;
    let mut csv = String::from("row,tag,scorer,auc,acc,f1,gap,auc_latent,auc_pixelspace,auc_si_error\n");
    let mut table = format!("{:<4} {:<28} {:<8} {:>7} {:>7} {:>7} {:>7}\n", "row", "model", "scorer", "AUC", "ACC", "F1", "gap");
    for (r, res) in rows.iter().zip(&results) {
        let e = &res.evaluation;
        csv.push_str(&format!(
            "{r},{},{},{},{},{},{},{},{},{}\n",
            e.tag, e.primary_scorer, e.primary.auc, e.primary.acc, e.primary.f1, e.primary.gap.gap,
            e.latent.auc, e.pixelspace.auc, e.si_error.auc
        ));
        table.push_str(&format!(
            "{r:<4} {:<28} {:<8} {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
            e.tag, e.primary_scorer, e.primary.auc, e.primary.acc, e.primary.f1, e.primary.gap.gap
        ));
    }
    write_text(&dir.join("ablation.csv"), &csv)?;
    write_text(&dir.join("ablation.txt"), &table)?;
    write_text(&dir.join("ablation.manifest"), &manifest(cfg, &[("rows", format!("{rows:?}"))]))?;
    print!("{table}");
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let results = run_sweep(cfg, &data, param, values)?;
    let mut csv = format!("{},auc,auc_latent,auc_pixelspace,gap\n", param.name());
    let mut points = Vec::new();
    for (v, res) in &results {
        let e = &res.evaluation;
        csv.push_str(&format!("{v},{},{},{},{}\n", e.primary.auc, e.latent.auc, e.pixelspace.auc, e.primary.gap.gap));
        println!("{} = {v}: AUC {:.4}", param.name(), e.primary.auc);
        points.push((*v, e.primary.auc));
    }
    write_text(&dir.join(format!("sweep_{}.csv", param.name())), &csv)?;
    plot_sweep(&dir.join(format!("sweep_{}.png", param.name())), &points)?;
    write_text(
        &dir.join(format!("sweep_{}.manifest", param.name())),
        &manifest(cfg, &[("param", param.name().into()), ("values", format!("{values:?}"))]),
    )?;
    Ok(())
}

pub fn config(dump_defaults: bool, check: Option<PathBuf>) -> Result<()> {
    if let Some(p) = check {
        let cfg = ExperimentConfig::load(&p)?;
        println!("{}: ok (hash {})", p.display(), cfg.hash());
        return Ok(());
    }
    if dump_defaults {
        print!("{}", ExperimentConfig::dump_defaults());
        return Ok(());
    }
    Err(Error::Config("config: pass --dump-defaults or --check <file>".into()))
}
