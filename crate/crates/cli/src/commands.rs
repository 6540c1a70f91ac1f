use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use reasonseg::curation::{
    build_prompt, filter_dataset, run_jobs, split_by_image, CenterMode, FilterConfig, FixtureClient, HttpClient,
    HttpClientConfig, ImageRecord, JobResult, ModelClient, PromptKind, RunConfig,
};
use reasonseg::dataset_io::{
    coco_json, load_coco, read_jsonl, read_predictions, read_records, semantic_targets, write_jsonl, write_records,
    CocoDataset, LoadOptions, PredictionLine,
};
use reasonseg::mask::{mask_union, RasterMask};
use reasonseg::matching::{assign_targets, CostConfig};
use reasonseg::metrics::{evaluate_ap, evaluate_semseg, render_report, ApProtocol, EvalReport};
use reasonseg::parsing::{parse_response, Diagnostic, DialogueRecord, Severity, TaskMode};
use reasonseg::transforms::{append_task_template, merge_uncountable, to_pure_text, to_semantic, TemplateMode};

use crate::{
    CenterArg, ClientKind, CliError, Context, CurateArgs, EvalMode, EvaluateArgs, MatchArgs, ParseArgs, ReportArgs,
    ReportFormat, SplitArgs, TargetMode, TransformArgs,
};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_dataset(ctx: &Context, path: &Path, center: Option<CenterArg>) -> Result<CocoDataset, CliError> {
    let center_mode = match center.map(Ok).unwrap_or_else(|| match ctx.file.center.as_deref() {
        None | Some("bbox") => Ok(CenterArg::Bbox),
        Some("centroid") => Ok(CenterArg::Centroid),
        Some(other) => Err(CliError::Validation(format!("config: unknown center mode '{other}'"))),
    })? {
        CenterArg::Bbox => CenterMode::BboxCenter,
        CenterArg::Centroid => CenterMode::MaskCentroid,
    };
    let mut options = LoadOptions {
        center_mode,
        ..LoadOptions::default()
    };
    if let Some(t) = ctx.file.area_tolerance {
        options.area_tolerance = t;
    }
    let dataset = load_coco(path, &options)?;
    for w in &dataset.report.warnings {
        log::warn!("{w}");
    }
    if !dataset.report.skipped_crowd.is_empty() {
        log::info!("skipped {} crowd annotations", dataset.report.skipped_crowd.len());
    }
    Ok(dataset)
}

pub fn curate(ctx: &Context, args: CurateArgs, jobs: usize) -> Result<(), CliError> {
    let dataset = load_dataset(ctx, &args.input, args.center)?;
    let defaults = FilterConfig::default();
    let filter = FilterConfig {
        min_image_side: args.min_image_side.or(ctx.file.min_image_side).unwrap_or(defaults.min_image_side),
        min_area: args.min_area.or(ctx.file.min_area).unwrap_or(defaults.min_area),
    };
    let outcome = filter_dataset(dataset.images, &filter);
    for d in &outcome.dropped {
        match d.instance_id {
            Some(id) => log::info!("dropped image {} instance {id}: {}", d.image_id, d.message),
            None => log::info!("dropped image {}: {}", d.image_id, d.message),
        }
    }
    if let Some(path) = &args.dropped {
        write_jsonl(path, &outcome.dropped)?;
    }
    if let Some(path) = &args.filtered_out {
        let text = serde_json::to_string_pretty(&coco_json(&outcome.kept, &dataset.categories))
            .map_err(|e| CliError::Validation(e.to_string()))?;
        write_text(path, &text)?;
    }

    let kind = PromptKind::from(args.task);
    let prompts = outcome
        .kept
        .iter()
        .map(|img| build_prompt(kind, img))
        .collect::<reasonseg::Result<Vec<_>>>()?;

    let client: Option<Box<dyn ModelClient>> = match args.client {
        None => None,
        Some(ClientKind::Fixture) => {
            let dir = args
                .fixture_dir
                .ok_or_else(|| CliError::Validation("--client fixture needs --fixture-dir".into()))?;
            Some(Box::new(FixtureClient::new(dir)))
        }
        Some(ClientKind::Http) => {
            let mut config = HttpClientConfig::default();
            if let Some(e) = args.endpoint.or(ctx.file.endpoint.clone()) {
                config.endpoint = e;
            }
            config.token = args.token.or(ctx.file.token.clone());
            if let Some(m) = args.model.or(ctx.file.model.clone()) {
                config.model = m;
            }
            config.image_root = args.image_root.or(ctx.file.image_root.as_ref().map(PathBuf::from));
            Some(Box::new(HttpClient::new(config)))
        }
    };
    let results: Vec<JobResult> = match client {
        Some(client) => {
            let run = RunConfig {
                retries: args.retries.or(ctx.file.retries).unwrap_or(RunConfig::default().retries),
                parallelism: if jobs == 0 { rayon::current_num_threads() } else { jobs },
                retry_delay: Duration::ZERO,
            };
            run_jobs(prompts, client.as_ref(), &run)
        }
        None => prompts
            .into_iter()
            .map(|job| JobResult {
                job,
                response: None,
                error: None,
                attempts: 0,
            })
            .collect(),
    };
    let failed = results.iter().filter(|r| r.attempts > 0 && !r.succeeded()).count();
    write_jsonl(&args.out, &results)?;
    eprintln!(
        "kept {} images, dropped {} items, {} jobs written ({failed} failed)",
        outcome.kept.len(),
        outcome.dropped.len(),
        results.len()
    );
    Ok(())
}

/// `(image_id, response text)` from a response directory or a jobs file.
fn collect_responses(path: &Path, kind: PromptKind) -> Result<Vec<(u64, String)>, CliError> {
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| io_err(path, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| io_err(path, e))?;
            let p = entry.path();
            if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
                log::warn!("ignoring {}: file name is not an image id", p.display());
                continue;
            };
            let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            out.push((id, text));
        }
        out.sort_by_key(|(id, _)| *id);
        return Ok(out);
    }
    let results: Vec<JobResult> = read_jsonl(path)?;
    let mut out = Vec::new();
    for r in results {
        if r.job.kind != kind {
            return Err(CliError::Validation(format!(
                "{}: job for image {} is a {} job, expected {kind}",
                path.display(),
                r.job.image_ref.image_id,
                r.job.kind
            )));
        }
        match r.response {
            Some(text) => out.push((r.job.image_ref.image_id, text)),
            None => log::warn!("image {}: no response ({})", r.job.image_ref.image_id, r.error.unwrap_or_default()),
        }
    }
    Ok(out)
}

pub fn parse(ctx: &Context, args: ParseArgs) -> Result<(), CliError> {
    let dataset = load_dataset(ctx, &args.annotations, None)?;
    let kind = PromptKind::from(args.task);
    let responses = collect_responses(&args.responses, kind)?;
    let by_id: BTreeMap<u64, &ImageRecord> = dataset.images.iter().map(|i| (i.image_id, i)).collect();
    let parsed: Vec<(Vec<DialogueRecord>, Vec<Diagnostic>)> = responses
        .par_iter()
        .map(|(id, text)| match by_id.get(id) {
            Some(image) => parse_response(kind, text, image),
            None => (
                Vec::new(),
                vec![Diagnostic {
                    image_id: *id,
                    severity: Severity::Error,
                    line: None,
                    message: format!("image {id} is not in the annotation file"),
                }],
            ),
        })
        .collect();
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (r, d) in parsed {
        records.extend(r);
        diagnostics.extend(d);
    }
    for d in &diagnostics {
        let line = d.line.map(|l| format!(" line {l}")).unwrap_or_default();
        match d.severity {
            Severity::Error => log::warn!("image {}{line}: {}", d.image_id, d.message),
            Severity::Warning => log::info!("image {}{line}: {}", d.image_id, d.message),
        }
    }
    write_records(&records, &args.out)?;
    if let Some(path) = &args.diagnostics {
        write_jsonl(path, &diagnostics)?;
    }
    let errors = diagnostics.iter().filter(|d| d.severity == Severity::Error).count();
    eprintln!(
        "{} responses, {} records, {} diagnostics ({errors} errors)",
        responses.len(),
        records.len(),
        diagnostics.len()
    );
    Ok(())
}

fn convert(
    record: &DialogueRecord,
    to: TargetMode,
    image: Option<&ImageRecord>,
    uncountable: &BTreeSet<u64>,
) -> Result<DialogueRecord, CliError> {
    let need_image = || {
        image.ok_or_else(|| CliError::Validation(format!("image {} is not in the annotation file", record.image_id)))
    };
    let keep_or_merge = |r: &DialogueRecord| -> Result<DialogueRecord, CliError> {
        if uncountable.is_empty() || r.seg_count() == 0 {
            Ok(r.clone())
        } else {
            Ok(merge_uncountable(r, need_image()?, uncountable)?)
        }
    };
    let mismatch = |requested: TaskMode| reasonseg::Error::ModeMismatch {
        requested: requested.as_str().into(),
        found: record.task_mode.as_str().into(),
    };
    match (to, record.task_mode) {
        (TargetMode::Pure, _) => Ok(to_pure_text(record)),
        (TargetMode::Semseg, TaskMode::Semseg) | (TargetMode::SidSemseg, TaskMode::SidSemseg) => Ok(record.clone()),
        (TargetMode::Semseg, TaskMode::Instseg) | (TargetMode::SidSemseg, TaskMode::SidInstseg) => {
            Ok(to_semantic(record, need_image()?)?)
        }
        (TargetMode::Instseg, TaskMode::Instseg) | (TargetMode::SidInstseg, TaskMode::SidInstseg) => {
            keep_or_merge(record)
        }
        (TargetMode::Semseg, _) => Err(mismatch(TaskMode::Semseg).into()),
        (TargetMode::SidSemseg, _) => Err(mismatch(TaskMode::SidSemseg).into()),
        (TargetMode::Instseg, _) => Err(mismatch(TaskMode::Instseg).into()),
        (TargetMode::SidInstseg, _) => Err(mismatch(TaskMode::SidInstseg).into()),
    }
}

pub fn transform(ctx: &Context, args: TransformArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let mut uncountable: BTreeSet<u64> = args.uncountable.iter().copied().collect();
    uncountable.extend(ctx.file.uncountable_categories.iter().copied());
    let needs_annotations = match args.to {
        TargetMode::Pure => false,
        TargetMode::Semseg | TargetMode::SidSemseg => true,
        TargetMode::Instseg | TargetMode::SidInstseg => !uncountable.is_empty(),
    };
    let dataset = match &args.annotations {
        Some(p) => Some(load_dataset(ctx, p, None)?),
        None if needs_annotations => {
            return Err(CliError::Validation(
                "--annotations is required for semantic targets or uncountable merging".into(),
            ))
        }
        None => None,
    };
    let by_id: BTreeMap<u64, &ImageRecord> = dataset
        .as_ref()
        .map(|d| d.images.iter().map(|i| (i.image_id, i)).collect())
        .unwrap_or_default();

    let converted: Vec<Result<DialogueRecord, CliError>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let image = by_id.get(&r.image_id).copied();
            let out = convert(r, args.to, image, &uncountable)?;
            if args.no_template {
                Ok(out)
            } else {
                let mode = TemplateMode::for_task_mode(out.task_mode);
                Ok(append_task_template(&out, mode, ctx.seed.wrapping_add(i as u64))?)
            }
        })
        .collect();
    let mut out = Vec::with_capacity(converted.len());
    for (i, r) in converted.into_iter().enumerate() {
        match r {
            Ok(r) => out.push(r),
            Err(err) => {
                let (CliError::Validation(m) | CliError::Io(m)) = &err;
                let message = format!("record {} (image {}): {m}", i + 1, records[i].image_id);
                return Err(match err {
                    CliError::Io(_) => CliError::Io(message),
                    CliError::Validation(_) => CliError::Validation(message),
                });
            }
        }
    }
    write_records(&out, &args.out)?;
    eprintln!("{} records written", out.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MatchedPair {
    /// 0-based line of the prediction in the input file.
    prediction: usize,
    instance_id: u64,
    cost: f64,
}

#[derive(Debug, Serialize)]
struct ImageAssignment {
    image_id: u64,
    pairs: Vec<MatchedPair>,
    unmatched_predictions: Vec<usize>,
    unmatched_instances: Vec<u64>,
    total_cost: f64,
}

pub fn match_cmd(ctx: &Context, args: MatchArgs) -> Result<(), CliError> {
    let dataset = load_dataset(ctx, &args.gt, None)?;
    let preds = read_predictions(&args.predictions)?;
    let config = CostConfig {
        iou_weight: args.iou_weight,
        dice_weight: args.dice_weight,
    };
    let known: BTreeSet<u64> = dataset.images.iter().map(|i| i.image_id).collect();
    if let Some((line, p)) = preds.iter().enumerate().find(|(_, p)| !known.contains(&p.image_id)) {
        return Err(CliError::Validation(format!(
            "{}:{}: unknown image id {}",
            args.predictions.display(),
            line + 1,
            p.image_id
        )));
    }
    let rows: Vec<ImageAssignment> = dataset
        .images
        .par_iter()
        .map(|img| -> reasonseg::Result<ImageAssignment> {
            let indices: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].image_id == img.image_id).collect();
            let pred_masks = indices
                .iter()
                .map(|&i| preds[i].geometry.to_mask(img.width, img.height))
                .collect::<reasonseg::Result<Vec<_>>>()?;
            let gt_masks = img
                .annotations
                .iter()
                .map(|a| a.mask(img.width, img.height))
                .collect::<reasonseg::Result<Vec<_>>>()?;
            let a = assign_targets(&pred_masks, &gt_masks, &config)?;
            let costs = reasonseg::matching::build_cost_matrix(&pred_masks, &gt_masks, &config)?;
            Ok(ImageAssignment {
                image_id: img.image_id,
                pairs: a
                    .pairs
                    .iter()
                    .map(|&(p, g)| MatchedPair {
                        prediction: indices[p],
                        instance_id: img.annotations[g].instance_id,
                        cost: costs.get(p, g),
                    })
                    .collect(),
                unmatched_predictions: a.unmatched_predictions.iter().map(|&p| indices[p]).collect(),
                unmatched_instances: a
                    .unmatched_groundtruths
                    .iter()
                    .map(|&g| img.annotations[g].instance_id)
                    .collect(),
                total_cost: a.total_cost,
            })
        })
        .collect::<reasonseg::Result<_>>()?;
    write_jsonl(&args.out, &rows)?;
    Ok(())
}

fn write_report(report: &EvalReport, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Validation(e.to_string()))?;
        write_text(path, &(text + "\n"))?;
    }
    print!("{}", render_report(report));
    Ok(())
}

/// Semantic ground truth given as JSONL lines of `{image_id, rle | polygon}`.
fn semantic_targets_jsonl(path: &Path) -> Result<Vec<(u64, RasterMask)>, CliError> {
    let lines: Vec<PredictionLine> = read_jsonl(path)?;
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| match (&l.rle, l.geometry()) {
            (Some(rle), Ok(g)) => {
                let [h, w] = rle.size;
                Ok((l.image_id, g.to_mask(w, h)?))
            }
            (None, Ok(_)) => Err(CliError::Validation(format!(
                "{}:{}: semantic ground truth needs an rle mask",
                path.display(),
                i + 1
            ))),
            (_, Err(m)) => Err(CliError::Validation(format!("{}:{}: {m}", path.display(), i + 1))),
        })
        .collect()
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> Result<(), CliError> {
    let preds = read_predictions(&args.predictions)?;
    let report = match args.mode {
        EvalMode::Inst => {
            let dataset = load_dataset(ctx, &args.gt, None)?;
            let protocol = ApProtocol {
                extra_categories: dataset.categories.keys().copied().collect(),
                ..ApProtocol::default()
            };
            EvalReport::Inst(evaluate_ap(&preds, &dataset.images, &protocol)?)
        }
        EvalMode::Sem => {
            let is_jsonl = args.gt.extension().and_then(|e| e.to_str()) == Some("jsonl");
            let gts = if is_jsonl {
                semantic_targets_jsonl(&args.gt)?
            } else {
                semantic_targets(&load_dataset(ctx, &args.gt, None)?.images)?
            };
            let dims: BTreeMap<u64, (u32, u32)> = gts.iter().map(|(id, m)| (*id, (m.width(), m.height()))).collect();
            // Several masks for one image are scored as their union.
            let mut per_image: BTreeMap<u64, Vec<RasterMask>> = BTreeMap::new();
            for (i, p) in preds.iter().enumerate() {
                let Some(&(w, h)) = dims.get(&p.image_id) else {
                    log::warn!("prediction {} for image {} has no ground truth", i + 1, p.image_id);
                    continue;
                };
                let m = p.geometry.to_mask(w, h).map_err(|e| {
                    CliError::Validation(format!("{}:{}: {e}", args.predictions.display(), i + 1))
                })?;
                per_image.entry(p.image_id).or_default().push(m);
            }
            let pred_masks = per_image
                .into_iter()
                .map(|(id, masks)| mask_union(&masks).map(|m| (id, m)))
                .collect::<reasonseg::Result<Vec<_>>>()?;
            EvalReport::Sem(evaluate_semseg(&pred_masks, &gts)?)
        }
    };
    write_report(&report, args.out.as_deref())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| io_err(&args.input, e))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.input.display())))?;
    match args.format {
        ReportFormat::Table => print!("{}", render_report(&report)),
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Validation(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

pub fn split(ctx: &Context, args: SplitArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.eval_fraction) {
        return Err(CliError::Validation(format!(
            "--eval-fraction must be within [0, 1], got {}",
            args.eval_fraction
        )));
    }
    let records = read_records(&args.input)?;
    let (train, eval) = split_by_image(records, |r| r.image_id, args.eval_fraction, ctx.seed);
    write_records(&train, &args.train_out)?;
    write_records(&eval, &args.eval_out)?;
    eprintln!("{} train records, {} eval records", train.len(), eval.len());
    Ok(())
}
