use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qtune::dataset::{ingest, Dataset};
use qtune::entropy::EstimatorSet;
use qtune::evaluation::{compare_curves, measure_points, pearson, sig6, sweep};
use qtune::optimizer::{
    export_tables, per_image_train, trace_csv, universal_train, Sample, TrainConfig, TrainInit, TrainOutput,
};
use qtune::synth::{labeled_image, natural_image};
use qtune::taskloss::{train_toy_classifier, ClassifierTraining, LabeledImage, ToyClassifier};
use qtune::{QuantTableParams, Quality};

use crate::config::{resolve, Cli, Command, CorpusKind, RunConfig};
use crate::manifest::Manifest;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.command, cli.opts)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut run = Run { manifest: Manifest::new(cfg.clone()), outputs: Vec::new(), cfg };
    match cli.command {
        Command::OptimizeRd | Command::OptimizeRa => run.optimize_universal()?,
        Command::OptimizePerImage => run.optimize_per_image()?,
        Command::EvalCurve => run.eval_curve()?,
        Command::EstimateVsActual => run.estimate_vs_actual()?,
        Command::ExportTables => run.export()?,
        Command::GenCorpus { kind, count, classes } => run.gen_corpus(kind, count, classes)?,
    }
    let Run { manifest, outputs, cfg } = run;
    manifest.write(&cfg.out, &outputs)?;
    Ok(())
}

struct Run {
    cfg: RunConfig,
    manifest: Manifest,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.cfg.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn dataset(&mut self, need_labels: bool) -> Result<Dataset> {
        let dir = self.cfg.dataset.clone().context("--dataset is required for this command")?;
        if need_labels && self.cfg.labels.is_none() {
            bail!("{} needs --labels", self.cfg.command);
        }
        let mut ds = ingest(&dir, Some(self.cfg.size), self.cfg.labels.as_deref())?;
        for (name, why) in &ds.skipped {
            eprintln!("skipped {name}: {why}");
        }
        if !ds.skipped.is_empty() {
            eprintln!("skipped {} of {} files", ds.skipped.len(), ds.skipped.len() + ds.entries.len());
        }
        if let Some(n) = self.cfg.limit {
            ds.entries.truncate(n);
        }
        if need_labels {
            if let Some(name) = ds.first_unlabeled() {
                bail!("image {name} has no label in {}", self.cfg.labels.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
            }
        }
        for e in &ds.entries {
            self.manifest.input(&dir.join(&e.name))?;
        }
        if let Some(l) = self.cfg.labels.clone() {
            self.manifest.input(&l)?;
        }
        Ok(ds)
    }

    fn samples(&self, ds: &Dataset) -> Vec<Sample> {
        ds.entries.iter().map(|e| Sample::new(e.image.clone(), e.label, self.cfg.layout)).collect()
    }

    fn tables(&mut self) -> Result<QuantTableParams> {
        match self.cfg.tables.clone() {
            Some(p) => {
                self.manifest.input(&p)?;
                Ok(QuantTableParams::load(&p)?)
            }
            None => Ok(QuantTableParams::default()),
        }
    }

    fn entropy(&mut self) -> Result<Option<EstimatorSet>> {
        match self.cfg.entropy_ckpt.clone() {
            Some(p) => {
                self.manifest.input(&p)?;
                Ok(Some(EstimatorSet::load(&p)?))
            }
            None => Ok(None),
        }
    }

    /// Loads the classifier checkpoint, or fits one on the labeled dataset.
    fn classifier(&mut self, ds: &Dataset) -> Result<ToyClassifier> {
        if let Some(p) = self.cfg.classifier_ckpt.clone() {
            self.manifest.input(&p)?;
            return Ok(ToyClassifier::load(&p)?);
        }
        let corpus: Vec<LabeledImage> = ds
            .entries
            .iter()
            .map(|e| LabeledImage { image: e.image.clone(), label: e.label.unwrap_or(0) })
            .collect();
        let classes = corpus.iter().map(|c| c.label).max().unwrap_or(0).max(1) + 1;
        let clf = train_toy_classifier(&corpus, &ClassifierTraining { classes, ..Default::default() })?;
        self.write("classifier.ckpt", &clf.to_text())?;
        eprintln!("trained classifier: accuracy {:.3} on uncompressed images", clf.accuracy(&corpus)?);
        Ok(clf)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.cfg.steps,
            batch: self.cfg.batch,
            lr: self.cfg.lr,
            entropy_lr: self.cfg.entropy_lr,
            qualities: (self.cfg.qmin..=self.cfg.qmax).collect(),
            layout: self.cfg.layout,
            seed: self.cfg.seed,
            train_entropy: self.cfg.train_entropy,
            warmup_steps: self.cfg.warmup,
            relaxation: self.cfg.relaxation,
        }
    }

    fn optimize_universal(&mut self) -> Result<()> {
        let w = self.cfg.weights;
        let ds = self.dataset(w.task > 0.0)?;
        let classifier = if w.task > 0.0 { Some(self.classifier(&ds)?) } else { None };
        let samples = self.samples(&ds);
        let init = TrainInit { tables: self.tables()?, entropy: self.entropy()?.unwrap_or_default() };
        let out = universal_train(&samples, &self.train_config(), w, classifier.as_ref(), init)?;
        self.save_training(&out, "")?;
        Ok(())
    }

    fn save_training(&mut self, out: &TrainOutput, prefix: &str) -> Result<()> {
        let q = self.cfg.quality.map(Quality::new).transpose()?;
        let tables = self.write(&format!("{prefix}tables.txt"), &export_tables(&out.tables, q))?;
        self.write(&format!("{prefix}loss_trace.csv"), &trace_csv(&out.trace))?;
        if prefix.is_empty() {
            self.write("entropy.ckpt", &out.entropy.to_text())?;
        }
        if let Some(last) = out.trace.last() {
            let t = &last.terms;
            println!(
                "{}: {} steps, final batch loss {} (rate {} bpp, distortion {}, task {})",
                tables.display(),
                out.trace.len(),
                sig6(t.total),
                sig6(t.rate),
                sig6(t.distortion),
                sig6(t.task)
            );
        } else {
            println!("{}: 0 steps, initialization written", tables.display());
        }
        Ok(())
    }

    fn optimize_per_image(&mut self) -> Result<()> {
        let w = self.cfg.weights;
        let ds = self.dataset(w.task > 0.0)?;
        let classifier = if w.task > 0.0 { Some(self.classifier(&ds)?) } else { None };
        let samples = self.samples(&ds);
        let init = TrainInit { tables: self.tables()?, entropy: self.entropy()?.unwrap_or_default() };
        let cfg = self.train_config();
        for (entry, sample) in ds.entries.iter().zip(&samples) {
            let out = per_image_train(sample, &cfg, w, classifier.as_ref(), init)
                .with_context(|| format!("optimizing {}", entry.name))?;
            let stem = Path::new(&entry.name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            self.save_training(&out, &format!("per_image/{stem}."))?;
        }
        Ok(())
    }

    fn eval_curve(&mut self) -> Result<()> {
        let ds = self.dataset(self.cfg.classifier_ckpt.is_some())?;
        let classifier = match &self.cfg.classifier_ckpt {
            Some(_) => Some(self.classifier(&ds)?),
            None => None,
        };
        let samples = self.samples(&ds);
        let tables = self.tables()?;
        let entropy = self.entropy()?;
        let curve = sweep(&tables, &samples, &self.cfg.qlist, classifier.as_ref(), entropy.as_ref())?;
        self.write("curve.csv", &curve.to_csv())?;
        self.write("curve.json", &serde_json::to_string_pretty(&curve)?)?;
        print!("{}", curve.to_csv());
        if self.cfg.tables.is_some() {
            let base = sweep(&QuantTableParams::default(), &samples, &self.cfg.qlist, classifier.as_ref(), None)?;
            self.write("baseline_curve.csv", &base.to_csv())?;
            match compare_curves(&base, &curve) {
                Ok(cmp) => {
                    self.write("comparison.csv", &cmp.to_csv())?;
                    self.write("comparison.json", &serde_json::to_string_pretty(&cmp)?)?;
                    println!(
                        "vs standard tables: max PSNR gain {} dB, max size saving {} %",
                        cmp.max_psnr_gain().map(sig6).unwrap_or_default(),
                        cmp.max_bpp_saving().map(sig6).unwrap_or_default()
                    );
                }
                Err(e) => eprintln!("no comparison with standard tables: {e}"),
            }
        }
        Ok(())
    }

    fn estimate_vs_actual(&mut self) -> Result<()> {
        let ds = self.dataset(false)?;
        let samples = self.samples(&ds);
        let tables = self.tables()?;
        let entropy = match self.entropy()? {
            Some(e) => e,
            None => {
                eprintln!("no --entropy-ckpt given, using untrained entropy models");
                EstimatorSet::default()
            }
        };
        let points = measure_points(&tables, &samples, &self.cfg.qlist, None, Some(&entropy))?;
        let mut csv = String::from("image,q,bpp_actual,bpp_scan,bpp_estimated,psnr\n");
        for p in &points {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                ds.entries[p.image].name,
                p.q,
                sig6(p.bpp_actual),
                sig6(p.bpp_scan),
                p.bpp_estimated.map(sig6).unwrap_or_default(),
                sig6(p.psnr)
            );
        }
        self.write("scatter.csv", &csv)?;
        let est: Vec<f64> = points.iter().filter_map(|p| p.bpp_estimated).collect();
        let act: Vec<f64> = points.iter().map(|p| p.bpp_actual).collect();
        let r = pearson(&est, &act)?;
        self.write("pearson.txt", &format!("{r}\n"))?;
        println!("pearson r = {} over {} points", sig6(r), points.len());
        Ok(())
    }

    fn export(&mut self) -> Result<()> {
        let tables = self.tables()?;
        let q = self.cfg.quality.map(Quality::new).transpose()?;
        let text = export_tables(&tables, q);
        self.write("tables.txt", &text)?;
        if let Some(q) = q {
            self.write(&format!("tables_q{}.txt", q.get()), &tables.scale_table(q).to_text(None))?;
        }
        print!("{text}");
        Ok(())
    }

    fn gen_corpus(&mut self, kind: CorpusKind, count: usize, classes: usize) -> Result<()> {
        if count == 0 {
            bail!("--count must be at least 1");
        }
        if kind == CorpusKind::Labeled && classes < 2 {
            bail!("--classes must be at least 2");
        }
        let size = self.cfg.size;
        let mut labels = String::new();
        for i in 0..count {
            let name = format!("img_{i:05}.ppm");
            let image = match kind {
                CorpusKind::Natural => natural_image(size, size, self.cfg.seed, i),
                CorpusKind::Labeled => {
                    let item = labeled_image(size, i % classes, self.cfg.seed, i);
                    let _ = writeln!(labels, "{name} {}", item.label);
                    item.image
                }
            };
            let path = self.cfg.out.join(&name);
            image.write_ppm(&path)?;
            self.outputs.push(path);
        }
        if kind == CorpusKind::Labeled {
            self.write("labels.txt", &labels)?;
        }
        println!("wrote {count} images to {}", self.cfg.out.display());
        Ok(())
    }
}
