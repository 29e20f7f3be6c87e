use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use embaudit_core::cluster_tools::{
    assign_clusters, cluster_composition, cross_region_consistency, read_polygons_json, ClusterLabeling,
    CompositionField, ConsistencyReport,
};
use embaudit_core::data_model::{ingest_embeddings, read_embeddings, read_metadata_csv, validate_metadata};
use embaudit_core::image_analysis::{
    edge_profile, estimate_shift, load_and_normalize, mean_image_from, write_pgm, write_profiles_csv, Image,
    MeanProfile, EDGE_THRESHOLD,
};
use embaudit_core::probes::{run_lag, run_probe, Kernel, LagParams, ProbeConfig, ProbeTarget, SvmParams};
use embaudit_core::report::{table1, table1_markdown, write_metrics_csv, write_table1_csv, ProbeSummary};
use embaudit_core::synth::{generate_embeddings, write_ground_truth_csv, NeckImageSpec, SynthEmbeddingSpec};
use embaudit_core::tsne::{read_layout_csv, tsne_layout, write_kl_trace_csv, write_layout_csv, TsneParams, TsneWarning};
use embaudit_service::{AppState, ServiceConfig};
use rayon::prelude::*;

use crate::error::{CliError, CliResult, Context};
use crate::files::{self, open, write_text, write_with};
use crate::{
    AssignArgs, BiasCommand, ClustersCommand, Command, EdgesArgs, EdgesCommand, Env, IngestArgs, LagArgs, ProbeArgs,
    RegionsArgs, ReportCommand, ServeArgs, SynthCommand, SynthEmbeddingArgs, SynthImageArgs, Table1Args, TsneArgs,
};

pub fn run(env: &Env, command: &Command) -> CliResult<()> {
    match command {
        Command::Ingest(a) => ingest(env, a),
        Command::Tsne(a) => tsne(env, a),
        Command::Probe(a) => probe(env, a),
        Command::Lag(a) => lag(env, a),
        Command::Clusters(ClustersCommand::Assign(a)) => clusters_assign(env, a),
        Command::Bias(BiasCommand::Regions(a)) => bias_regions(env, a),
        Command::Edges(EdgesCommand::Report(a)) => edges_report(env, a),
        Command::Synth(SynthCommand::Embeddings(a)) => synth_embeddings(env, a),
        Command::Synth(SynthCommand::Images(a)) => synth_images(env, a),
        Command::Report(ReportCommand::Table1(a)) => report_table1(env, a),
        Command::Serve(a) => serve(env, a),
    }
}

fn ingest(env: &Env, a: &IngestArgs) -> CliResult<()> {
    let table = read_embeddings(&std::fs::read(&a.embeddings).at(&a.embeddings)?).at(&a.embeddings)?;
    let meta = read_metadata_csv(open(&a.metadata)?).at(&a.metadata)?;
    let warnings: usize = meta.iter().map(|m| validate_metadata(m).len()).sum();
    let (ds, report) = ingest_embeddings(table, meta)?;
    let out = env.out_dir(&a.output)?;
    files::write_dataset(&out, &ds)?;
    let report_path = out.join("ingest_report.json");
    write_with(&report_path, |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
    for s in &report.rejected_subjects {
        eprintln!("rejected subject {s}: no metadata");
    }
    if warnings > 0 {
        eprintln!("warning: {warnings} metadata values outside plausible ranges");
    }
    println!(
        "ingested {} records of {} subjects (dim {}) into {}",
        ds.len(),
        ds.subject_ids().count(),
        ds.dim(),
        out.display()
    );
    Ok(())
}

fn tsne(env: &Env, a: &TsneArgs) -> CliResult<()> {
    let c = &env.config;
    let defaults = TsneParams::default();
    let params = TsneParams {
        perplexity: c.pick(a.perplexity, "perplexity", defaults.perplexity)?,
        iterations: c.pick(a.iterations, "iterations", defaults.iterations)?,
        theta: c.pick(a.theta, "theta", defaults.theta)?,
        exact_threshold: c.pick(a.exact_threshold, "exact_threshold", defaults.exact_threshold)?,
        learning_rate: a.learning_rate,
        seed: env.seed,
        ..defaults
    };
    let ds = files::read_dataset(&env.dataset_dir(&a.dataset.dataset))?;
    params.validate(ds.len())?;
    let layout = tsne_layout::<f64>(&ds, &params, &())?;
    for w in &layout.warnings {
        match w {
            TsneWarning::DegenerateInput => eprintln!("warning: all points coincide"),
            TsneWarning::Calibration(c) => eprintln!("warning: {c:?}"),
        }
    }
    let out = env.out_dir(&a.output)?;
    write_with(&out.join("layout.csv"), |w| write_layout_csv(w, &layout.points))?;
    write_with(&out.join("kl_trace.csv"), |w| write_kl_trace_csv(w, &layout.kl_trace))?;
    println!(
        "{} points, {} gradients, final KL {:.6}",
        layout.points.len(),
        if layout.exact { "exact" } else { "Barnes-Hut" },
        layout.kl_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn kernel(env: &Env, name: Option<&str>, gamma: Option<f64>) -> CliResult<Kernel<f64>> {
    let name = match name {
        Some(n) => n.to_string(),
        None => env.config.get("kernel")?.unwrap_or_else(|| "linear".into()),
    };
    match name.as_str() {
        "linear" => Ok(Kernel::Linear),
        "rbf" => Ok(Kernel::Rbf { gamma: env.config.pick(gamma, "gamma", 1.0)? }),
        other => Err(CliError::Invalid(format!("unknown kernel `{other}` (linear or rbf)"))),
    }
}

fn probe(env: &Env, a: &ProbeArgs) -> CliResult<()> {
    let target: ProbeTarget = a.target.parse()?;
    let c = &env.config;
    let svm = SvmParams { kernel: kernel(env, a.kernel.as_deref(), a.gamma)?, c: c.pick(a.c, "c", 1.0)?, ..SvmParams::default() };
    svm.validate()?;
    let config = ProbeConfig {
        target,
        svm,
        balance: !a.no_balance,
        bins: c.pick(a.bins, "bins", ProbeConfig::default().bins)?,
        seed: env.seed,
        ..ProbeConfig::default()
    };
    let ds = files::read_dataset(&env.dataset_dir(&a.dataset.dataset))?;
    let clusters = a.clusters.as_deref().map(files::read_clusters_csv).transpose()?;
    let report = run_probe(&ds, &config, clusters.as_ref())?;

    let out = env.out_dir(&a.output)?;
    let label = c.pick(a.label.clone(), "label", "probe".to_string())?;
    write_with(&out.join(format!("{target}_metrics.csv")), |w| write_metrics_csv(w, &report.test))?;
    files::write_predictions_csv(&out.join(format!("{target}_predictions.csv")), &report)?;
    write_with(&out.join(format!("{target}_summary.json")), |w| ProbeSummary::from_report(label, &report).write_json(w))?;
    let m = &report.test;
    let headline = match (m.accuracy, m.mae) {
        (Some(acc), _) => format!("accuracy {acc:.4}"),
        (_, Some(mae)) => format!("MAE {mae:.4}"),
        _ => "no evaluable records".into(),
    };
    println!(
        "{target}: {headline} on {} test records ({} of {} training records used{})",
        m.n_eval,
        report.n_train_used,
        report.n_train,
        if report.converged { "" } else { ", SVM hit its iteration cap" }
    );
    Ok(())
}

fn lag(env: &Env, a: &LagArgs) -> CliResult<()> {
    let ds = files::read_dataset(&env.dataset_dir(&a.dataset.dataset))?;
    let subgroup = match (&a.cluster, &a.clusters, &a.members) {
        (Some(label), Some(path), None) => {
            let assignment = files::read_clusters_csv(path)?;
            assignment.into_iter().filter(|(_, l)| l == label).map(|(k, _)| k).collect()
        }
        (None, _, Some(path)) => files::read_members(path, &ds)?,
        _ => return Err(CliError::Invalid("give --cluster with --clusters, or --members".into())),
    };
    let c = &env.config;
    let d = LagParams::default();
    let params = LagParams {
        epochs: c.pick(a.epochs, "epochs", d.epochs)?,
        lr: c.pick(a.lr, "lr", d.lr)?,
        val_fraction: c.pick(a.val_fraction, "val_fraction", d.val_fraction)?,
        seed: env.seed,
    };
    let report = run_lag(&ds, &subgroup, &params)?;
    let out = env.out_dir(&a.output)?;
    write_with(&out.join("lag.csv"), |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "overall_train_acc", "subgroup_train_acc", "rest_train_acc", "overall_val_acc", "subgroup_val_acc"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &report.epochs {
            wr.write_record([
                e.epoch.to_string(),
                e.overall_train_acc.to_string(),
                e.subgroup_train_acc.to_string(),
                e.rest_train_acc.to_string(),
                opt(e.overall_val_acc),
                opt(e.subgroup_val_acc),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    write_with(&out.join("lag.json"), |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
    let lagging = report.epochs.iter().filter(|e| e.subgroup_train_acc < e.overall_train_acc).count();
    println!("subgroup of {} records below overall accuracy in {lagging} of {} epochs", subgroup.len(), report.epochs.len());
    Ok(())
}

fn write_composition(out: &Path, labeling: &ClusterLabeling, ds: &embaudit_core::data_model::Dataset) -> CliResult<()> {
    for field in [CompositionField::Sex, CompositionField::Location, CompositionField::Region, CompositionField::Year] {
        let comp = cluster_composition(labeling, ds, field);
        write_with(&out.join(format!("composition_{field}.csv")), |w| {
            let mut wr = csv::Writer::from_writer(w);
            let mut header = vec!["cluster".to_string()];
            header.extend(comp.categories.iter().cloned());
            header.extend(["total".into(), "dominant".into()]);
            wr.write_record(&header)?;
            for row in &comp.rows {
                let mut rec = vec![row.cluster.clone()];
                rec.extend(row.counts.iter().map(|c| c.to_string()));
                rec.push(row.total.to_string());
                rec.push(row.dominant.clone().unwrap_or_default());
                wr.write_record(&rec)?;
            }
            wr.flush()?;
            Ok(())
        })?;
        if field == CompositionField::Location {
            for cluster in comp.site_specific() {
                println!("cluster {cluster} is dominated by a single location");
            }
        }
    }
    Ok(())
}

fn clusters_assign(env: &Env, a: &AssignArgs) -> CliResult<()> {
    let layout = read_layout_csv(open(&a.layout)?).at(&a.layout)?;
    let polygons = read_polygons_json(open(&a.polygons)?).at(&a.polygons)?;
    let labeling = assign_clusters(&layout, &polygons)?;
    let out = env.out_dir(&a.output)?;
    files::write_clusters_csv(&out.join("clusters.csv"), &labeling.assignment)?;
    let counts = labeling.counts();
    write_with(&out.join("cluster_counts.csv"), |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["label", "count"])?;
        for label in labeling.labels() {
            wr.write_record([label.to_string(), counts.get(label).copied().unwrap_or(0).to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    if let Some(dir) = &a.dataset {
        write_composition(&out, &labeling, &files::read_dataset(dir)?)?;
    }
    let summary: Vec<String> = labeling.labels().iter().map(|l| format!("{l} {}", counts.get(*l).copied().unwrap_or(0))).collect();
    println!("{}", summary.join(", "));
    Ok(())
}

fn bias_regions(env: &Env, a: &RegionsArgs) -> CliResult<()> {
    let pairs = files::read_sex_predictions(&a.predictions)?;
    let report = ConsistencyReport::new(cross_region_consistency(&pairs)?)?;
    let out = env.out_dir(&a.output)?;
    write_with(&out.join("consistency.csv"), |w| report.write_csv(w))?;
    let md = report.to_markdown();
    write_text(&out.join("consistency.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn edges_report(env: &Env, a: &EdgesArgs) -> CliResult<()> {
    let c = &env.config;
    let tau = c.pick(a.tau, "tau", EDGE_THRESHOLD)?;
    let max_shift = c.pick(a.max_shift, "max_shift", 128usize)?;
    let spacing: Option<f64> = match a.spacing_mm {
        Some(s) => Some(s),
        None => c.get("spacing_mm")?,
    };
    if !(0.0..=1.0).contains(&tau) || spacing.is_some_and(|s| !(s > 0.0)) {
        return Err(CliError::Invalid("tau must lie in [0, 1] and spacing be positive".into()));
    }

    let mut images = files::list_images(&a.images)?;
    if let Some(path) = &a.labels {
        let mut rd = csv::Reader::from_reader(open(path)?);
        let mut labels = BTreeMap::new();
        for row in rd.records() {
            let row = row.map_err(embaudit_core::Error::from).at(path)?;
            labels.insert(row.get(0).unwrap_or_default().to_string(), row.get(1).unwrap_or_default().to_string());
        }
        for (p, cluster) in &mut images {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(l) = labels.get(name) {
                *cluster = l.clone();
            }
        }
    }
    let mut clusters: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for (p, cluster) in images {
        clusters.entry(cluster).or_default().push(p);
    }
    if clusters.is_empty() {
        return Err(CliError::Invalid(format!("no images under {}", a.images.display())));
    }

    let out = env.out_dir(&a.output)?;
    let mut profiles: Vec<(String, usize, MeanProfile)> = Vec::new();
    for (label, paths) in &clusters {
        let mean: Image<f64> = mean_image_from(paths.len(), |k| load_and_normalize(&paths[k])).at(&a.images)?;
        write_with(&out.join(format!("mean_{label}.pgm")), |w| write_pgm(w, &mean, u16::MAX))?;
        profiles.push((label.clone(), paths.len(), edge_profile(&mean, tau).to_mean()));
    }
    let cols: Vec<(&str, &MeanProfile)> = profiles.iter().map(|(l, _, p)| (l.as_str(), p)).collect();
    write_with(&out.join("profiles.csv"), |w| write_profiles_csv(w, &cols))?;

    let pairs: Vec<(usize, usize)> =
        (0..profiles.len()).flat_map(|i| (i + 1..profiles.len()).map(move |j| (i, j))).collect();
    let shifts: Vec<_> = pairs
        .par_iter()
        .map(|&(i, j)| (i, j, estimate_shift(&profiles[i].2, &profiles[j].2, max_shift)))
        .collect();

    let mut md = format!("# Edge report\n\nτ = {tau}, max shift {max_shift} rows\n\n| cluster | images |\n|---|---|\n");
    for (l, n, _) in &profiles {
        md.push_str(&format!("| {l} | {n} |\n"));
    }
    md.push_str("\n| a | b | shift (rows) | shift (mm) | score | overlap |\n|---|---|---|---|---|---|\n");
    write_with(&out.join("shifts.csv"), |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["a", "b", "shift", "shift_mm", "score", "overlap"])?;
        for (i, j, est) in &shifts {
            let (a, b) = (&profiles[*i].0, &profiles[*j].0);
            match est {
                Ok(e) => {
                    let mm = spacing.map(|s| format!("{:.2}", e.shift as f64 * s)).unwrap_or_default();
                    wr.write_record([a.clone(), b.clone(), e.shift.to_string(), mm.clone(), e.score.to_string(), e.overlap.to_string()])?;
                    md.push_str(&format!("| {a} | {b} | {} | {} | {:.4} | {} |\n", e.shift, if mm.is_empty() { "–" } else { &mm }, e.score, e.overlap));
                }
                Err(err) => {
                    wr.write_record([a.as_str(), b.as_str(), "", "", "", ""])?;
                    md.push_str(&format!("| {a} | {b} | – | – | {err} | – |\n"));
                }
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    write_text(&out.join("edges.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn synth_embeddings(env: &Env, a: &SynthEmbeddingArgs) -> CliResult<()> {
    let d = SynthEmbeddingSpec::default();
    let spec = SynthEmbeddingSpec {
        n_subjects: a.n.unwrap_or(d.n_subjects),
        dim: a.dim.unwrap_or(d.dim),
        flipped_fraction: a.flip.unwrap_or(d.flipped_fraction),
        sex_separation: a.sex_separation.unwrap_or(d.sex_separation),
        region_separation: a.region_separation.unwrap_or(d.region_separation),
        location_separation: a.location_separation.unwrap_or(d.location_separation),
        noise_std: a.noise.unwrap_or(d.noise_std),
        seed: env.seed,
        ..d
    };
    let synth = generate_embeddings(&spec)?;
    let out = env.out_dir(&a.output)?;
    files::write_dataset(&out, &synth.dataset)?;
    write_with(&out.join("ground_truth.csv"), |w| write_ground_truth_csv(w, &synth.truth))?;
    write_with(&out.join("synth_spec.json"), |w| Ok(serde_json::to_writer_pretty(w, &spec)?))?;
    println!(
        "{} records of {} subjects ({} flipped) in {}",
        synth.dataset.len(),
        spec.n_subjects,
        spec.flipped_count(),
        out.display()
    );
    Ok(())
}

fn synth_images(env: &Env, a: &SynthImageArgs) -> CliResult<()> {
    let d = NeckImageSpec::default();
    let spec = NeckImageSpec {
        count: a.count.unwrap_or(d.count),
        size: a.size.unwrap_or(d.size),
        vertical_shift: a.shift.unwrap_or(d.vertical_shift),
        noise_std: a.noise.unwrap_or(d.noise_std),
        seed: env.seed,
        ..d
    };
    spec.validate()?;
    let out = env.out_dir(&a.output)?;
    let width = spec.count.saturating_sub(1).to_string().len().max(4);
    (0..spec.count).into_par_iter().try_for_each(|k| {
        let img = spec.image(k)?;
        let path = out.join(format!("img_{k:0width$}.pgm"));
        write_with(&path, |w| write_pgm(w, &img, u16::MAX))
    })?;
    write_with(&out.join("edge_truth.csv"), |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["row", "column"])?;
        for (r, c) in spec.ground_truth().iter().enumerate() {
            wr.write_record([r.to_string(), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    write_with(&out.join("synth_spec.json"), |w| Ok(serde_json::to_writer_pretty(w, &spec)?))?;
    println!("{} images of {}x{} in {}", spec.count, spec.size, spec.size, out.display());
    Ok(())
}

fn report_table1(env: &Env, a: &Table1Args) -> CliResult<()> {
    let mut paths = Vec::new();
    for input in &a.inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .at(input)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()
                .at(input)?
                .into_iter()
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_summary.json")))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(input.clone());
        }
    }
    if paths.is_empty() {
        return Err(CliError::Invalid("no probe summaries found".into()));
    }
    let summaries = paths.iter().map(|p| ProbeSummary::read_json(open(p)?).at(p)).collect::<CliResult<Vec<_>>>()?;
    let rows = table1(&summaries)?;
    let out = env.out_dir(&a.output)?;
    let md = table1_markdown(&rows);
    write_text(&out.join("table1.md"), &md)?;
    write_with(&out.join("table1.csv"), |w| write_table1_csv(w, &rows))?;
    print!("{md}");
    Ok(())
}

fn serve(env: &Env, a: &ServeArgs) -> CliResult<()> {
    let c = &env.config;
    let addr = c.pick(a.addr.clone(), "addr", "127.0.0.1:8080".to_string())?;
    let config = ServiceConfig {
        data_dir: Some(env.root.clone()),
        max_concurrent_jobs: c.pick(a.max_jobs, "max_jobs", 2)?,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io { path: PathBuf::from("<runtime>"), source })?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| CliError::Io { path: PathBuf::from(&addr), source })?;
        eprintln!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr.clone()));
        embaudit_service::serve(listener, AppState::new(config))
            .await
            .map_err(|source| CliError::Io { path: PathBuf::from(&addr), source })
    })
}
