use std::fmt::Write as _;
use std::path::Path;

use anyhow::anyhow;
use quasitrack::experiments::{run_ablation, run_oracles, Benchmark, LearnedBenchmark, RowSummary, RunMode};
use quasitrack::io::{self, DetectionSet};
use quasitrack::losscheck::{loss_check, LossCheckConfig};
use quasitrack::metrics::{evaluate, Counts};
use quasitrack::synth::{corrupt, generate_scenario, SynthConfig};
use quasitrack::tracker::{run_sequence_with, InitSource, TrackerConfig};
use quasitrack::Error;

use crate::{AblateArgs, EvalArgs, LosscheckArgs, SynthArgs, TrackArgs};

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Invariant(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Failure::Invariant(e.into()),
            e => Failure::Data(e.into()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn load_config(path: Option<&Path>) -> Result<SynthConfig, Failure> {
    match path {
        Some(p) => SynthConfig::load(p).map_err(Failure::from),
        None => Ok(SynthConfig::default()),
    }
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let scn = generate_scenario(&cfg.scenario(), a.seed)?;
    let dets = corrupt(&scn, &cfg.noise(), a.seed.wrapping_add(1))?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let gt_path = a.out.join("gt.txt");
    io::write_mot(&gt_path, &io::objects_to_mot(&scn.ground_truth()))?;
    let det_path = a.out.join("detections.jsonl");
    let set = DetectionSet::new(dets.frames.clone()).with_identities(dets.identity_labels())?;
    io::write_detections(&det_path, &set)?;
    println!("frames={}", scn.frames);
    println!("objects={}", scn.objects.len());
    println!("detections={}", set.len());
    println!("gt={}", gt_path.display());
    println!("detections_file={}", det_path.display());
    Ok(())
}

fn tracker_config(a: &TrackArgs) -> Result<TrackerConfig, Failure> {
    let cfg = TrackerConfig {
        similarity: a.similarity.parse().map_err(usage)?,
        use_backdrops: !a.no_backdrops,
        inter_class_dedup: !a.no_dedup,
        init_threshold: a.tau_init,
        obj_threshold: a.tau_obj,
        match_threshold: a.tau_match,
        memory_frames: a.memory,
        momentum: a.momentum,
        init_source: if a.init_source == "external" {
            InitSource::External
        } else {
            InitSource::Internal
        },
        identity_oracle: a.identity_oracle,
        ..TrackerConfig::default()
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn track(a: TrackArgs) -> CmdResult {
    let cfg = tracker_config(&a)?;
    if cfg.init_source == InitSource::External && a.external_inits.is_none() {
        return Err(usage("--init-source external needs --external-inits"));
    }
    let set = io::read_detections(&a.detections)?;
    if let Some(dim) = a.dim {
        if !set.is_empty() && set.dim != dim {
            return Err(Failure::Data(anyhow!(
                "{}: embeddings have dimension {}, --dim is {dim}",
                a.detections.display(),
                set.dim
            )));
        }
    }
    let external: Option<Vec<Vec<_>>> = match &a.external_inits {
        Some(p) => Some(
            io::read_mot(p)?
                .into_iter()
                .map(|f| f.into_iter().map(|r| r.bbox).collect())
                .collect(),
        ),
        None => None,
    };
    let labels = cfg.identity_oracle.then_some(set.identities.as_slice());
    let outputs = run_sequence_with(&cfg, &set.frames, external.as_deref(), labels)?;
    io::write_mot(&a.out, &io::tracks_to_mot(&outputs))?;
    let ids: std::collections::BTreeSet<_> = outputs.iter().flatten().map(|o| o.id).collect();
    println!("frames={}", set.frames.len());
    println!("records={}", outputs.iter().map(Vec::len).sum::<usize>());
    println!("tracks={}", ids.len());
    if set.identities.iter().flatten().any(Option::is_some) {
        let fp: usize = outputs
            .iter()
            .zip(&set.identities)
            .map(|(outs, ids)| outs.iter().filter(|o| ids[o.index].is_none()).count())
            .sum();
        println!("fp_associations={fp}");
    }
    Ok(())
}

fn counts_lines(out: &mut String, prefix: &str, c: &Counts) {
    let fields: [(&str, String); 15] = [
        ("mota", format!("{:?}", c.mota)),
        ("motp", format!("{:?}", c.motp)),
        ("idf1", format!("{:?}", c.idf1)),
        ("idp", format!("{:?}", c.idp)),
        ("idr", format!("{:?}", c.idr)),
        ("fp", c.false_positives.to_string()),
        ("fn", c.misses.to_string()),
        ("idsw", c.id_switches.to_string()),
        ("mt", c.mostly_tracked.to_string()),
        ("ml", c.mostly_lost.to_string()),
        ("num_gt", c.num_gt.to_string()),
        ("num_pred", c.num_pred.to_string()),
        ("num_matches", c.num_matches.to_string()),
        ("num_gt_ids", c.num_gt_ids.to_string()),
        ("idtp", c.idtp.to_string()),
    ];
    for (k, v) in fields {
        let _ = writeln!(out, "{prefix}{k}={v}");
    }
}

fn table_row(out: &mut String, scope: &str, c: &Counts) {
    let _ = writeln!(
        out,
        "{scope:<10} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6} {:>5} {:>4} {:>4} {:>7}",
        c.mota, c.idf1, c.motp, c.false_positives, c.misses, c.id_switches, c.mostly_tracked, c.mostly_lost, c.num_gt
    );
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let gt = io::mot_to_objects(&io::read_mot(&a.gt)?)?;
    let mut pred = io::mot_to_objects(&io::read_mot(&a.results)?)?;
    if pred.len() > gt.len() {
        return Err(Error::FrameMismatch {
            gt: gt.len(),
            pred: pred.len(),
        }
        .into());
    }
    pred.resize(gt.len(), Vec::new());
    let report = evaluate(&gt, &pred, a.iou_gate)?;

    let mut out = String::new();
    counts_lines(&mut out, "", &report.overall);
    let _ = writeln!(out, "macro_mota={:?}", report.macro_mota);
    let _ = writeln!(out, "macro_idf1={:?}", report.macro_idf1);
    for (cat, c) in &report.per_category {
        counts_lines(&mut out, &format!("category.{cat}."), c);
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<10} {:>7} {:>7} {:>7} {:>6} {:>6} {:>5} {:>4} {:>4} {:>7}",
        "scope", "MOTA", "IDF1", "MOTP", "FP", "FN", "IDSW", "MT", "ML", "GT"
    );
    table_row(&mut out, "overall", &report.overall);
    for (cat, c) in &report.per_category {
        table_row(&mut out, &format!("cat {cat}"), c);
    }
    print!("{out}");
    Ok(())
}

fn summary_fields(s: &RowSummary) -> String {
    format!(
        "seeds={} mota_mean={:.6} mota_sd={:.6} idf1_mean={:.6} idf1_sd={:.6} fp_assoc_mean={:.3} fp_assoc_sd={:.3}",
        s.runs.len(),
        s.mota.mean,
        s.mota.sd,
        s.idf1.mean,
        s.idf1.sd,
        s.fp_associations.mean,
        s.fp_associations.sd
    )
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let mut bench = LearnedBenchmark::default();
    if let Some(p) = &a.config {
        let cfg = SynthConfig::load(p)?;
        cfg.validate()?;
        bench.base = Benchmark {
            scenario: cfg.scenario(),
            noise: cfg.noise(),
        };
    }
    if let Some(steps) = a.steps {
        bench.fit.steps = steps;
    }
    if let Some(n) = a.train_frames {
        bench.train_frames = n;
    }
    let mut seeds = a.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let base = TrackerConfig::default();
    let rows = run_ablation(&bench, &base, &seeds)?;

    let mut out = String::new();
    for row in &rows {
        let c = row.cell;
        for r in &row.summary.runs {
            let _ = writeln!(
                out,
                "run kind={} similarity={} backdrops={} dedup={} seed={} mota={:.6} idf1={:.6} fp_assoc={}",
                c.kind.name(),
                c.similarity.name(),
                on_off(c.backdrops),
                on_off(c.dedup),
                r.seed,
                r.mota,
                r.idf1,
                r.fp_associations
            );
        }
    }
    for row in &rows {
        let c = row.cell;
        let _ = writeln!(
            out,
            "row kind={} similarity={} backdrops={} dedup={} {}",
            c.kind.name(),
            c.similarity.name(),
            on_off(c.backdrops),
            on_off(c.dedup),
            summary_fields(&row.summary)
        );
    }

    let mut modes = Vec::new();
    for o in &a.oracle {
        let mode: RunMode = o.parse().map_err(usage)?;
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    let oracle_rows = if modes.is_empty() {
        Vec::new()
    } else {
        modes.insert(0, RunMode::Normal);
        run_oracles(&bench.base, &base, &modes, &seeds)?
    };
    for row in &oracle_rows {
        let _ = writeln!(out, "oracle mode={} {}", row.mode.name(), summary_fields(&row.summary));
    }

    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<7} {:<10} {:<9} {:<6} {:>16} {:>16} {:>9}",
        "loss", "metric", "backdrops", "dedup", "MOTA", "IDF1", "FP-assoc"
    );
    let pm = |s: quasitrack::experiments::Summary| format!("{:.4}±{:.4}", s.mean, s.sd);
    for row in &rows {
        let c = row.cell;
        let _ = writeln!(
            out,
            "{:<7} {:<10} {:<9} {:<6} {:>16} {:>16} {:>9.1}",
            c.kind.name(),
            c.similarity.name(),
            on_off(c.backdrops),
            on_off(c.dedup),
            pm(row.summary.mota),
            pm(row.summary.idf1),
            row.summary.fp_associations.mean
        );
    }
    for row in &oracle_rows {
        let _ = writeln!(
            out,
            "{:<7} {:<10} {:<9} {:<6} {:>16} {:>16} {:>9.1}",
            "oracle",
            row.mode.name(),
            "on",
            "on",
            pm(row.summary.mota),
            pm(row.summary.idf1),
            row.summary.fp_associations.mean
        );
    }
    print!("{out}");
    Ok(())
}

pub fn losscheck(a: LosscheckArgs) -> CmdResult {
    let cfg = LossCheckConfig {
        seed: a.seed,
        trials: a.trials,
        tolerance: a.tolerance,
        fault: a.inject_fault,
    };
    if cfg.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let report = loss_check(&cfg)?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!("{verdict}");
    println!("trials={}", report.trials);
    println!("max_gradient_error={:e}", report.max_gradient_error);
    println!("max_identity_gap={:e}", report.max_identity_gap);
    println!("failures={}", report.failures.len());
    for f in &report.failures {
        println!("failure trial={} check={} {}", f.trial, f.check, f.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invariant(anyhow!(
            "{} loss check(s) failed, first at trial {}",
            report.failures.len(),
            report.failures[0].trial
        )))
    }
}
