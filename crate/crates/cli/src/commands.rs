use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use taxograph::experiments::{run_grid, score, Setup};
use taxograph::model::Model;
use taxograph::numcore::GradCheckConfig;
use taxograph::synthdata::{
    decode_image, decode_mask, emit_embeddings, encode_image, encode_mask, generate_split,
    load_manifest, mask_to_color, write_manifest, DatasetManifest, ManifestRecord,
};
use taxograph::taxonomy::{load_embeddings, LabelTaxonomy, WordEmbeddingTable};
use taxograph::trainer::{load_checkpoint, predict, save_checkpoint, train, Checkpoint, Example};
use taxograph::verify::gradient_suite;
use taxograph::{Error, Result};

use crate::config::RunConfig;
use crate::palette::{dataset_colors, parse_palette, SHIPPED_PALETTE};

pub fn dispatch(cmd: &str, cfg: &RunConfig) -> Result<()> {
    match cmd {
        "synth" => synth(cfg),
        "train" => train_cmd(cfg),
        "eval" => eval(cfg),
        "infer" => infer(cfg),
        "gradcheck" => gradcheck(cfg),
        "ablate" => ablate(cfg),
        _ => Err(Error::Usage(format!("unknown command {cmd:?}"))),
    }
}

fn taxonomy(cfg: &RunConfig) -> Result<LabelTaxonomy> {
    match cfg.opt("taxonomy.path") {
        Some(p) => LabelTaxonomy::load(p),
        None => Ok(LabelTaxonomy::shipped()),
    }
}

fn embeddings(cfg: &RunConfig, tax: &LabelTaxonomy) -> Result<WordEmbeddingTable> {
    match cfg.opt("embeddings.path") {
        Some(p) => load_embeddings(p),
        None => emit_embeddings(tax, cfg.seed()?, cfg.usize("embeddings.dim")?),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.str("out"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(cfg: &'a RunConfig, key: &str) -> Result<&'a str> {
    cfg.opt(key)
        .ok_or_else(|| Error::Usage(format!("--{key}=... is required")))
}

/// Per dataset: `count` training and `test_count` test scenes, a manifest per
/// split, and the generated word embeddings.
fn synth(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let tax = LabelTaxonomy::shipped();
    let synth = cfg.synth()?;
    let seed = cfg.seed()?;
    for ds in tax.dataset_ids() {
        for (split, n) in [("train", cfg.usize("count")?), ("test", cfg.usize("test_count")?)] {
            let mut manifest = DatasetManifest {
                split: Some(split.to_string()),
                ..DatasetManifest::default()
            };
            for (i, s) in generate_split(seed, split, ds, n, &synth)?.iter().enumerate() {
                let image = out.join("images").join(ds).join(format!("{split}_{i:05}.ppm"));
                let mask = out.join("masks").join(ds).join(format!("{split}_{i:05}.pgm"));
                write(&image, &encode_image(&s.image)?)?;
                write(&mask, &encode_mask(s.mask(ds)?))?;
                manifest.records.push(ManifestRecord {
                    image,
                    mask,
                    dataset_id: ds.to_string(),
                });
            }
            write_manifest(out.join(format!("{split}_{ds}.tsv")), &manifest)?;
            println!("{split}_{ds}.tsv\t{n} scenes");
        }
    }
    emit_embeddings(&tax, seed, cfg.usize("embeddings.dim")?)?.save(out.join("embeddings.txt"))?;
    Ok(())
}

/// Examples of every manifest, grouped by dataset.
fn load_examples(paths: &[String], tax: &LabelTaxonomy) -> Result<BTreeMap<String, Vec<Example>>> {
    let mut out: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for p in paths {
        let m = load_manifest(p, tax)?;
        for w in &m.warnings {
            eprintln!("# warning: {w}");
        }
        for r in &m.records {
            let image = decode_image(&read(&r.image)?)?;
            let mask = decode_mask(&read(&r.mask)?)?;
            if image.shape()[..2] != [mask.height, mask.width] {
                return Err(Error::Data(format!(
                    "{} and {} differ in size",
                    r.image.display(),
                    r.mask.display()
                )));
            }
            let k = tax.num_labels(&r.dataset_id)?;
            if let Some(&v) = mask.data.iter().find(|&&v| v as usize >= k) {
                return Err(Error::Data(format!(
                    "{}: label {v} outside the {k} labels of {}",
                    r.mask.display(),
                    r.dataset_id
                )));
            }
            out.entry(r.dataset_id.clone()).or_default().push(Example {
                image,
                mask,
                dataset: r.dataset_id.clone(),
            });
        }
    }
    Ok(out)
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let tax = taxonomy(cfg)?;
    let emb = embeddings(cfg, &tax)?;
    let model_cfg = cfg.model()?;
    let tc = cfg.train()?;
    let data = match cfg.list("data.manifests") {
        m if m.is_empty() => {
            let bench = cfg.benchmark()?;
            let fraction = cfg.f64("data.fraction")?;
            model_cfg
                .heads
                .iter()
                .map(|h| Ok((h.clone(), bench.train_set(h, fraction)?)))
                .collect::<Result<BTreeMap<_, _>>>()?
        }
        paths => load_examples(&paths, &tax)?,
    };
    for h in &model_cfg.heads {
        if !data.contains_key(h) {
            return Err(Error::Config(format!("head {h} has no training data")));
        }
    }
    if let Some(ds) = data.keys().find(|d| !model_cfg.heads.contains(d)) {
        return Err(Error::Config(format!("training data for {ds}, which has no head")));
    }
    let mut model = Model::<f32>::new(model_cfg, &tax, Some(&emb), cfg.seed()?)?;

    let log_path = out.join("train.log");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut io_err = None;
    let mut emit = |line: &str, log: &mut BufWriter<fs::File>| {
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
    };
    for line in cfg.to_text().lines() {
        emit(&format!("# {line}"), &mut log);
    }
    if let Some(init) = cfg.opt("model.init") {
        let report = load_checkpoint(init)?.apply(&mut model.store, false)?;
        emit(&format!("# init {init}: {} loaded", report.loaded.len()), &mut log);
        for n in &report.fresh {
            emit(&format!("# fresh {n}"), &mut log);
        }
        for n in &report.unknown {
            emit(&format!("# unknown {n}"), &mut log);
        }
    }
    let summary = train(&mut model, &data, &tax, &tc, |l| emit(&l.to_string(), &mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    let ck_path = out.join("model.grfy");
    save_checkpoint(&model.store, summary.steps as u64, &cfg.to_text(), &ck_path)?;
    println!(
        "{} steps, final loss {:.4}, checkpoint {}",
        summary.steps,
        summary.last_loss,
        ck_path.display()
    );
    Ok(())
}

/// The model a checkpoint was trained as, with its parameters loaded.
fn restore(ck: &Checkpoint) -> Result<(RunConfig, LabelTaxonomy, Model<f32>)> {
    let run = RunConfig::from_text(&ck.config_text)?;
    let tax = taxonomy(&run)?;
    let emb = embeddings(&run, &tax)?;
    let mut model = Model::new(run.model()?, &tax, Some(&emb), run.seed()?)?;
    let report = ck.apply(&mut model.store, false)?;
    if !report.fresh.is_empty() {
        return Err(Error::Data(format!(
            "checkpoint lacks parameters of its own model: {}",
            report.fresh.join(", ")
        )));
    }
    Ok((run, tax, model))
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let ck = load_checkpoint(required(cfg, "checkpoint")?)?;
    let (_, tax, model) = restore(&ck)?;
    let sets = match cfg.opt("manifest") {
        Some(m) => load_examples(&[m.to_string()], &tax)?,
        None => {
            let bench = cfg.benchmark()?;
            model
                .config()
                .heads
                .iter()
                .map(|h| Ok((h.clone(), bench.test_set(h)?)))
                .collect::<Result<_>>()?
        }
    };
    for (ds, examples) in &sets {
        if !model.config().heads.contains(ds) {
            return Err(Error::Config(format!("checkpoint has no head for {ds}")));
        }
        let metrics = score(&model, examples, &tax)?;
        let labels = &tax.dataset(ds)?.labels;
        write(
            &out.join(format!("metrics_{ds}.tsv")),
            metrics.to_lines(labels).as_bytes(),
        )?;
        println!("dataset {ds} ({} images)", examples.len());
        print!("{}", metrics.to_table(labels));
    }
    Ok(())
}

fn infer(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let ck = load_checkpoint(required(cfg, "checkpoint")?)?;
    let (_, tax, model) = restore(&ck)?;
    let image_path = PathBuf::from(required(cfg, "image")?);
    let image = decode_image(&read(&image_path)?)?;
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let heads = match cfg.opt("dataset") {
        Some(d) => vec![d.to_string()],
        None => model.config().heads.clone(),
    };
    let palette = parse_palette(SHIPPED_PALETTE)?;
    for ds in &heads {
        let mask = predict(&model, &image, ds)?;
        let colors = dataset_colors(&palette, tax.dataset(ds)?)?;
        let color = out.join(format!("{stem}_{ds}.ppm"));
        let raw = out.join(format!("{stem}_{ds}.pgm"));
        write(&color, &mask_to_color(&mask, &colors)?)?;
        write(&raw, &encode_mask(&mask))?;
        println!("{}\t{}", raw.display(), color.display());
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let seeds = cfg.seeds("gradcheck.seeds")?;
    let gc = GradCheckConfig {
        tolerance: cfg.f64("gradcheck.tolerance")?,
        ..GradCheckConfig::default()
    };
    let report = gradient_suite(&LabelTaxonomy::shipped(), &seeds, &gc)?;
    print!("{}", report.to_table());
    if report.pass() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed at tolerance {:e}",
            report.tolerance
        )))
    }
}

fn ablate(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let tax = taxonomy(cfg)?;
    let setup = Setup {
        backbone: cfg.backbone()?,
        graph: cfg.graph()?,
        train: cfg.train()?,
        source_steps: cfg.usize("ablate.source_steps")?,
        embeddings: embeddings(cfg, &tax)?,
    };
    let arms = cfg.arms()?;
    let seeds = cfg.seeds("ablate.seeds")?;
    let (source, target) = (cfg.str("ablate.source"), cfg.str("ablate.target"));
    let result = run_grid(
        &setup,
        &tax,
        &cfg.benchmark()?,
        (source, target),
        &arms,
        &seeds,
        cfg.f64("data.fraction")?,
        |arm, seed, miou| eprintln!("# {}\tseed {seed}\tmIoU {:.2}", arm.label(), 100.0 * miou),
    )?;
    let table = result.table();
    print!("{table}");
    write(&out.join("ablation.txt"), table.as_bytes())
}
