use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sourcebias::storage::{self, fmt_float, write_report, write_table, CsvTable};
use sourcebias::train::encode_dataset;
use sourcebias::{
    aggregation_check, evaluate_bias, extract_transforms, mix_training_set, oracle_alignment, parity_check,
    project_2d, reverse_transform_eval, score_distribution, select_candidate, synthesize, CandidateSet, Dataset,
    EmbeddingTable, Init, MetricSpec, PenaltyMode, PenaltyTarget, Provenance, ReverseMode, Seed, ShiftSign,
    SynthConfig, TrainConfig,
};

use crate::args::*;
use crate::output::{histogram_svg, with_outputs, Outputs};
use crate::CliResult;

fn specs(m: &MetricArgs) -> CliResult<Vec<MetricSpec>> {
    if m.k.is_empty() || m.k.contains(&0) {
        return Err("--k needs positive cutoffs".into());
    }
    Ok(MetricSpec::grid(&m.k))
}

fn report(command: &str, config: Value, body: Value) -> Value {
    let mut v = json!({ "command": command, "config": config });
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, body) {
        dst.extend(src);
    }
    v
}

fn load_model_dataset(data: &Path, model: Option<&Path>) -> CliResult<Dataset> {
    let ds = storage::load_dataset(data)?;
    Ok(match model {
        Some(p) => encode_dataset(&storage::read_model(p)?, &ds)?,
        None => ds,
    })
}

fn print_bias(report: &sourcebias::BiasReport) {
    println!("{:<8} {:>10} {:>10} {:>10}", "metric", "real", "generated", "delta");
    for r in &report.rows {
        println!(
            "{:<8} {:>10} {:>10} {:>10}",
            r.metric.to_string(),
            fmt_float(r.metric_real),
            fmt_float(r.metric_generated),
            fmt_float(r.relative_delta.unwrap_or(f64::NAN))
        );
    }
}

fn write_histogram(out: &mut Outputs, stem: &str, dist: &sourcebias::ScoreDistribution, title: &str) -> CliResult<()> {
    write_table(out.file(&format!("{stem}.csv")), &storage::histogram_csv(dist))?;
    fs::write(out.file(&format!("{stem}.svg")), histogram_svg(dist, title))?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        num_queries: a.queries,
        dim: a.dim,
        query_noise: a.noise,
        watermark_strength: a.lambda,
        watermark_alignment: a.gamma,
        query_anchor: a.anchor,
        orthogonal_queries: a.orthogonal_queries,
        seed: Seed(a.seed),
    };
    let synth = synthesize(&cfg)?;
    with_outputs(&a.out, |out| {
        let ds = &synth.dataset;
        storage::write_embeddings(&ds.img_table, out.file(storage::IMAGES_FILE))?;
        storage::write_embeddings(&ds.qry_table, out.file(storage::QUERIES_FILE))?;
        storage::write_metadata(&ds.items, &ds.queries, out.file(storage::METADATA_FILE))?;
        // full precision: the watermark feeds oracle checks
        let sidecar = json!({ "config": cfg, "watermark": synth.watermark });
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        fs::write(out.file(storage::WATERMARK_FILE), text)?;
        println!(
            "{} queries, {} items, dim {}",
            ds.queries.len(),
            ds.items.len(),
            ds.img_table.dim()
        );
        Ok(())
    })
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let specs = specs(&a.metrics)?;
    let ds = load_model_dataset(&a.data, a.model.as_deref())?;
    let bias = evaluate_bias(&ds, &specs)?;
    let dist = score_distribution(&ds, a.bins)?;
    let config = json!({
        "data": a.data,
        "model": a.model,
        "metrics": specs,
        "bins": a.bins,
    });
    with_outputs(&a.out, |out| {
        let body = json!({ "report": bias, "distribution": dist });
        write_report(&report("eval", config, body), out.file("report.json"))?;
        write_table(out.file("metrics.csv"), &storage::bias_report_csv(&bias))?;
        write_histogram(out, "scores", &dist, "relevant-item scores")?;
        print_bias(&bias);
        Ok(())
    })
}

fn resolve_train(t: &TrainArgs, preset: Preset) -> CliResult<TrainConfig> {
    let mut cfg = match (&t.config, t.preset.unwrap_or(preset)) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?
        }
        (None, Preset::Finetune) => TrainConfig::default(),
        (None, Preset::Scratch) => TrainConfig::from_scratch(),
    };
    if let Some(v) = t.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = t.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = t.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = t.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = t.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = t.penalty_mode {
        cfg.penalty_mode = match v {
            PenaltyModeArg::Hinge => PenaltyMode::IndicatorHinge,
            PenaltyModeArg::Raw => PenaltyMode::IndicatorRaw,
        };
    }
    if let Some(v) = t.penalty_weight {
        cfg.penalty_weight = v;
    }
    if let Some(v) = t.penalty_target {
        cfg.penalty_target = match v {
            PenaltyTargetArg::Image => PenaltyTarget::ImageHead,
            PenaltyTargetArg::Both => PenaltyTarget::Both,
        };
    }
    if let Some(v) = t.train_bias {
        cfg.train_bias = v;
    }
    if let Some(v) = t.init {
        cfg.init = match v {
            InitArg::Random => Init::Random,
            InitArg::Identity => Init::Identity,
        };
    }
    if t.d_out.is_some() {
        cfg.d_out = t.d_out;
    }
    if let Some(v) = t.seed {
        cfg.seed = Seed(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split(ds: Dataset, holdout: Option<usize>) -> CliResult<(Dataset, Dataset, usize)> {
    let n = holdout.unwrap_or((ds.queries.len() / 3).max(1));
    let (train, test) = ds.split(n)?;
    Ok((train, test, n))
}

pub fn train(a: &TrainCmdArgs) -> CliResult<()> {
    let specs = specs(&a.metrics)?;
    let mut cfg = resolve_train(&a.train, Preset::Finetune)?;
    cfg.beta = a.beta;
    cfg.validate()?;
    let ds = storage::load_dataset(&a.data)?;
    let (train_set, heldout) = match a.holdout {
        Some(n) => {
            let (tr, te) = ds.split(n)?;
            (tr, Some(te))
        }
        None => (ds, None),
    };
    let pairs = mix_training_set(&train_set, a.alpha, cfg.seed.derive(3))?;
    let (model, trace) = sourcebias::train(&train_set, &pairs, &train_set.triples(), &cfg, heldout.as_ref())?;
    let final_report = match &heldout {
        Some(te) => Some(evaluate_bias(&encode_dataset(&model, te)?, &specs)?),
        None => None,
    };
    let config = json!({
        "data": a.data,
        "alpha": a.alpha,
        "holdout": a.holdout,
        "metrics": specs,
        "train": cfg,
    });
    with_outputs(&a.out, |out| {
        storage::write_model(&model, out.file("model.dem"))?;
        let body = json!({ "trace": trace, "report": final_report });
        write_report(&report("train", config, body), out.file("trace.json"))?;
        let header = ["epoch", "base_loss", "penalty_loss", "sampled_triples"].map(String::from).to_vec();
        let rows = trace
            .epochs
            .iter()
            .map(|e| {
                vec![
                    e.epoch.to_string(),
                    fmt_float(e.base_loss),
                    fmt_float(e.penalty_loss),
                    e.sampled_triples.to_string(),
                ]
            })
            .collect();
        write_table(out.file("trace.csv"), &(header, rows))?;
        if let Some(r) = &final_report {
            print_bias(r);
        }
        Ok(())
    })
}

pub fn sweep_alpha(a: &SweepAlphaArgs) -> CliResult<()> {
    let specs = specs(&a.metrics)?;
    let cfg = resolve_train(&a.train, Preset::Scratch)?;
    let (train_set, heldout, n) = split(storage::load_dataset(&a.data)?, a.holdout)?;
    let rep = sourcebias::sweep_alpha(&train_set, &heldout, &a.alphas, &cfg, &specs, a.jobs.max(1))?;
    let config = json!({
        "data": a.data,
        "alphas": a.alphas,
        "holdout": n,
        "jobs": a.jobs,
        "metrics": specs,
        "train": TrainConfig { beta: 0.0, ..cfg },
    });
    with_outputs(&a.out, |out| {
        write_report(&report("sweep-alpha", config, json!({ "sweep": rep })), out.file("sweep_alpha.json"))?;
        let table = storage::sweep_alpha_csv(&rep);
        write_table(out.file("sweep_alpha.csv"), &table)?;
        print_table(&table);
        Ok(())
    })
}

fn print_table(t: &CsvTable) {
    println!("{}", t.0.join("\t"));
    for r in &t.1 {
        println!("{}", r.join("\t"));
    }
}

pub fn sweep_beta(a: &SweepBetaArgs) -> CliResult<()> {
    let specs = specs(&a.metrics)?;
    let cfg = resolve_train(&a.train, Preset::Finetune)?;
    let (train_set, heldout, n) = split(storage::load_dataset(&a.data)?, a.holdout)?;
    let (rep, models) = sourcebias::sweep_beta(
        &train_set,
        &heldout,
        &a.betas,
        a.alpha,
        &cfg,
        &specs,
        a.bins,
        a.jobs.max(1),
    )?;
    let config = json!({
        "data": a.data,
        "betas": a.betas,
        "alpha": a.alpha,
        "holdout": n,
        "jobs": a.jobs,
        "bins": a.bins,
        "metrics": specs,
        "train": cfg,
    });
    with_outputs(&a.out, |out| {
        write_report(&report("sweep-beta", config, json!({ "sweep": rep })), out.file("sweep_beta.json"))?;
        let table = storage::sweep_beta_csv(&rep);
        write_table(out.file("sweep_beta.csv"), &table)?;
        for (row, model) in rep.rows.iter().zip(&models) {
            let b = fmt_float(row.beta);
            write_histogram(out, &format!("scores_beta_{b}"), &row.distribution, &format!("β = {b}"))?;
            if a.save_models {
                storage::write_model(model, out.file(&format!("model_beta_{b}.dem")))?;
            }
        }
        print_table(&table);
        Ok(())
    })
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let specs = specs(&a.metrics)?;
    let mut ds = storage::load_dataset(&a.data)?;
    if let Some(n) = a.holdout {
        ds = ds.split(n)?.1;
    }
    let original = storage::read_model(&a.original)?;
    let debiased = storage::read_model(&a.debiased)?;
    let tset = extract_transforms(&original, &debiased, &ds)?;
    let (aggregated, margin) = aggregation_check(&tset, a.threshold)?;
    let projection = project_2d(&tset.vectors)?;
    let mode = match a.mode {
        ModeArg::Mean => ReverseMode::Mean,
        ModeArg::Paired => ReverseMode::Paired,
    };
    let sign = match a.sign {
        SignArg::Minus => ShiftSign::Minus,
        SignArg::Plus => ShiftSign::Plus,
    };
    let reverse = reverse_transform_eval(&original, &tset, &ds, &specs, mode, sign)?;
    let alignment = match &a.watermark {
        Some(p) => {
            let side: Value = serde_json::from_str(&fs::read_to_string(p)?)?;
            let w: Vec<f64> = serde_json::from_value(side["watermark"].clone())
                .map_err(|e| format!("{}: no usable watermark vector: {e}", p.display()))?;
            Some(oracle_alignment(&tset, &w, &debiased.image_head)?)
        }
        None => None,
    };
    let config = json!({
        "data": a.data,
        "original": a.original,
        "debiased": a.debiased,
        "holdout": a.holdout,
        "mode": mode,
        "sign": sign,
        "threshold": a.threshold,
        "watermark": a.watermark,
        "metrics": specs,
    });
    let body = json!({
        "transforms": {
            "count": tset.len(),
            "dispersion": tset.dispersion,
            "baseline_dispersion": tset.baseline_dispersion,
            "degenerate": tset.degenerate,
            "mean_vector": tset.mean_vector,
        },
        "aggregation": { "aggregated": aggregated, "margin": margin },
        "projection": { "explained": projection.explained, "rank_deficient": projection.rank_deficient },
        "reverse": reverse,
        "alignment": alignment,
    });
    with_outputs(&a.out, |out| {
        write_report(&report("analyze", config, body), out.file("analysis.json"))?;
        let header = ["item_id", "x", "y"].map(String::from).to_vec();
        let rows = tset
            .item_ids
            .iter()
            .zip(&projection.coords)
            .map(|(id, c)| vec![id.clone(), fmt_float(c[0]), fmt_float(c[1])])
            .collect();
        write_table(out.file("projection.csv"), &(header, rows))?;
        println!(
            "dispersion {} baseline {} margin {} aggregated {aggregated}",
            fmt_float(tset.dispersion),
            fmt_float(tset.baseline_dispersion),
            fmt_float(margin)
        );
        println!("before:");
        print_bias(&reverse.before);
        println!("after:");
        print_bias(&reverse.after);
        Ok(())
    })
}

pub fn parity(a: &ParityArgs) -> CliResult<()> {
    let specs = specs(&a.metrics)?;
    let ds = load_model_dataset(&a.data, a.model.as_deref())?;
    let real = ds.single_provenance(Provenance::Real)?;
    let generated = ds.single_provenance(Provenance::Generated)?;
    let results = specs
        .iter()
        .map(|&s| {
            let r = parity_check(&real, &generated, s)?;
            Ok(json!({
                "metric": r.metric,
                "metric_real_only": r.metric_real_only,
                "metric_generated_only": r.metric_generated_only,
                "abs_gap": r.abs_gap,
                "within": r.within(a.threshold),
            }))
        })
        .collect::<sourcebias::Result<Vec<Value>>>()?;
    let config = json!({
        "data": a.data,
        "model": a.model,
        "threshold": a.threshold,
        "metrics": specs,
    });
    with_outputs(&a.out, |out| {
        write_report(&report("parity", config, json!({ "results": results })), out.file("parity.json"))?;
        println!("{:<8} {:>10} {:>10} {:>8}  within", "metric", "real", "generated", "gap");
        for r in &results {
            println!(
                "{:<8} {:>10} {:>10} {:>8}  {}",
                r["metric"].as_str().unwrap_or_default(),
                fmt_float(r["metric_real_only"].as_f64().unwrap_or(f64::NAN)),
                fmt_float(r["metric_generated_only"].as_f64().unwrap_or(f64::NAN)),
                fmt_float(r["abs_gap"].as_f64().unwrap_or(f64::NAN)),
                r["within"]
            );
        }
        Ok(())
    })
}

fn parse_row_ref(s: &str) -> CliResult<(String, usize)> {
    let (file, row) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("expected FILE:ROW, got `{s}`"))?;
    let row = row.parse().map_err(|_| format!("invalid row in `{s}`"))?;
    Ok((file.to_string(), row))
}

pub fn select(a: &SelectArgs) -> CliResult<()> {
    let (real_file, real_row) = parse_row_ref(&a.real)?;
    let real_table = storage::read_embeddings(&real_file)?;
    let real = real_table
        .get(real_row)
        .ok_or_else(|| format!("row {real_row} outside the {}-row table {real_file}", real_table.len()))?;
    let cands = storage::read_embeddings(&a.candidates)?;
    if cands.dim() != real_table.dim() {
        return Err(format!(
            "dimension mismatch: real item has {}, candidates have {}",
            real_table.dim(),
            cands.dim()
        )
        .into());
    }
    let rows = a.rows.clone().unwrap_or_else(|| (0..cands.len()).collect());
    // the real vector goes after the candidates so one table serves both
    let mut flat = cands.as_flat().to_vec();
    flat.extend_from_slice(real);
    let table = EmbeddingTable::from_flat(cands.dim(), flat)?;
    let cset = CandidateSet {
        real_row: cands.len(),
        candidate_rows: rows.clone(),
    };
    if rows.iter().any(|&r| r >= cands.len()) {
        return Err(format!("candidate rows must be below {}", cands.len()).into());
    }
    let pos = select_candidate(&cset, &table)?;
    let chosen = rows[pos];
    println!("{chosen}");
    if let Some(path) = &a.out {
        let config = json!({
            "real": a.real,
            "candidates": a.candidates,
            "rows": a.rows,
        });
        let cos = cosine(real, cands.row(chosen));
        let body = json!({ "selected_row": chosen, "position": pos, "cosine": cos });
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or("--out needs a file name")?
            .to_string();
        with_outputs(parent, |out| Ok(write_report(&report("select", config, body), out.file(&name))?))?;
    }
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
