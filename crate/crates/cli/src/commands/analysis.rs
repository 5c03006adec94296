use std::fs;
use std::path::PathBuf;

use clap::Args;
use schema_miner::embed::{CachedEmbedder, Embedder, HttpEmbedder};
use schema_miner::grounding::{
    ground_schema, preprocess_term, GroundingConfig, GroundingOutcome, OlsClient, OntologyAllowList, ResourceKind,
    DEFAULT_TOP_K,
};
use schema_miner::metrics::{build_pairwise_report, FieldMode, PairwiseReport};
use schema_miner::prompt::StageId;
use schema_miner::schema::{flatten, SchemaDoc};
use serde_json::{json, Value};

use super::{dedup_kinds, Ctx, Format};
use crate::target::{labelled, Target};
use crate::{CliError, Output};

#[derive(Debug, Args)]
pub(super) struct GroundArgs {
    /// Schema file or `run_id/Stage/iteration`.
    target: String,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// OLS resource kinds to search, comma-separated.
    #[arg(long, value_delimiter = ',', default_values = ["class", "property"])]
    kinds: Vec<ResourceKind>,
    /// Query with the property name only.
    #[arg(long)]
    no_description: bool,
    /// Report path for file targets; default is beside the schema.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn embedder(ctx: &Ctx) -> Result<Option<CachedEmbedder<HttpEmbedder>>, CliError> {
    match ctx.cfg.embed_settings() {
        Some((base, model, key)) => Ok(Some(CachedEmbedder::new(HttpEmbedder::new(base, model, key)?))),
        None => Ok(None),
    }
}

fn allow_list(ctx: &Ctx) -> Result<Option<OntologyAllowList>, CliError> {
    match ctx.cfg.get("ONTOLOGY_ALLOWLIST") {
        Some(path) => Ok(Some(
            OntologyAllowList::load(path.as_ref()).map_err(|e| CliError::usage(e.code(), e.to_string()))?,
        )),
        None => Ok(None),
    }
}

pub(super) fn ground(ctx: &Ctx, a: GroundArgs) -> Result<Output, CliError> {
    if a.k == 0 {
        return Err(CliError::usage("BadArgument", "--k must be at least 1"));
    }
    let store = ctx.store();
    let target = Target::parse(&a.target);
    let doc = target.load(&store)?;
    let cfg = GroundingConfig {
        k: a.k,
        kinds: dedup_kinds(&a.kinds),
        allow: allow_list(ctx)?,
        use_description: !a.no_description,
    };
    let dest = match (&target, &a.out) {
        (_, Some(out)) => out.clone(),
        (Target::File(p), None) => {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let stem = name.trim_end_matches(".json").trim_end_matches(".schema");
            p.with_file_name(format!("{stem}.grounding.json"))
        }
        (Target::Snapshot { run_id, stage, iteration }, None) => store
            .schema_path(run_id, *stage, *iteration)
            .with_file_name(format!("{iteration:03}.grounding.json")),
    };

    if ctx.dry_run {
        let queries: Vec<Value> = flatten(&doc)
            .into_iter()
            .map(|e| json!({"path": e.path.to_string(), "query": preprocess_term(e.path.leaf_name().unwrap_or_default())}))
            .collect();
        return Ok(Output::Json(json!({
            "ok": true,
            "dry_run": true,
            "command": "ground",
            "k": cfg.k,
            "kinds": cfg.kinds,
            "allow_list": cfg.allow.as_ref().map(|l| l.ids().collect::<Vec<_>>()),
            "ols_base_url": ctx.cfg.get("OLS_BASE_URL"),
            "embedder": ctx.cfg.get("EMBED_BASE_URL"),
            "queries": queries,
            "report": dest,
        })));
    }

    let ols_base = ctx
        .cfg
        .get("OLS_BASE_URL")
        .ok_or_else(|| CliError::usage("MissingConfig", "OLS_BASE_URL is not set"))?;
    let ols = OlsClient::new(ols_base)?;
    let emb = embedder(ctx)?.ok_or_else(|| CliError::usage("MissingConfig", "EMBED_BASE_URL is not set"))?;
    let report = ground_schema(&doc, &cfg, &ols, &emb);
    let value = serde_json::to_value(&report).expect("report serializes");

    let path = match (&target, &a.out) {
        (Target::Snapshot { run_id, stage, iteration }, None) => store
            .write_grounding(run_id, *stage, *iteration, &value)
            .map_err(|e| CliError::from(e).with_run(run_id))?,
        _ => {
            let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
            text.push('\n');
            fs::write(&dest, text).map_err(|e| CliError::io(&dest, e))?;
            dest
        }
    };

    let count = |f: fn(&GroundingOutcome) -> bool| report.entries.iter().filter(|e| f(&e.outcome)).count();
    let errors = count(|o| matches!(o, GroundingOutcome::Error { .. }));
    let line = json!({
        "ok": true,
        "command": "ground",
        "report": path,
        "entries": report.entries.len(),
        "matched": count(|o| matches!(o, GroundingOutcome::Matched { .. })),
        "no_match": count(|o| matches!(o, GroundingOutcome::NoMatch)),
        "errors": errors,
    });
    if errors > 0 && errors == report.entries.len() {
        println!("{line}");
        return Err(CliError::failure(
            "GroundingFailed",
            format!("every entry failed; see {}", path.display()),
        ));
    }
    Ok(Output::Json(line))
}

#[derive(Debug, Args)]
pub(super) struct CompareArgs {
    /// Schemas as `label=target`, where a target is a file or `run_id/Stage/iteration`.
    targets: Vec<String>,
    /// Compare the last snapshot of each stage across these runs instead.
    #[arg(long, num_args = 1.., conflicts_with = "targets")]
    runs: Vec<String>,
    /// Restrict `--runs` to one stage; names the block for explicit targets.
    #[arg(long)]
    stage: Option<StageId>,
    #[arg(long, default_value = "full")]
    fields: FieldMode,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Skip the embedding F1 even if an embedder is configured.
    #[arg(long)]
    no_embed: bool,
}

type Block = (String, Vec<(String, SchemaDoc)>);

fn blocks_from_runs(ctx: &Ctx, a: &CompareArgs) -> Result<Vec<Block>, CliError> {
    let store = ctx.store();
    let mut per_run = Vec::new();
    for run in &a.runs {
        let snaps = store.list_snapshots(run).map_err(|e| CliError::from(e).with_run(run))?;
        per_run.push((run.clone(), snaps));
    }
    let stages: Vec<StageId> = match a.stage {
        Some(s) => vec![s],
        None => StageId::ALL.to_vec(),
    };
    let mut blocks = Vec::new();
    for stage in stages {
        let docs: Vec<(String, SchemaDoc)> = per_run
            .iter()
            .filter_map(|(run, snaps)| {
                snaps
                    .iter()
                    .filter(|s| s.stage == stage)
                    .max_by_key(|s| s.iteration)
                    .map(|s| (run.clone(), s.schema.clone()))
            })
            .collect();
        if docs.len() == per_run.len() {
            blocks.push((stage.as_str().to_string(), docs));
        } else if a.stage.is_some() {
            return Err(CliError::usage("UnknownSnapshot", format!("not every run has a {stage} snapshot")));
        }
    }
    if blocks.is_empty() {
        return Err(CliError::usage("UnknownSnapshot", "the runs share no stage"));
    }
    Ok(blocks)
}

pub(super) fn compare(ctx: &Ctx, a: CompareArgs) -> Result<Output, CliError> {
    let blocks = if !a.runs.is_empty() {
        if a.runs.len() < 2 {
            return Err(CliError::usage("Usage", "compare needs at least two runs"));
        }
        blocks_from_runs(ctx, &a)?
    } else {
        if a.targets.len() < 2 {
            return Err(CliError::usage("Usage", "compare needs at least two schemas"));
        }
        let store = ctx.store();
        let mut docs = Vec::new();
        for t in &a.targets {
            let (label, target) = labelled(t);
            if docs.iter().any(|(l, _): &(String, SchemaDoc)| *l == label) {
                return Err(CliError::usage("Usage", format!("duplicate label `{label}`; use label=target")));
            }
            docs.push((label, target.load(&store)?));
        }
        let name = a.stage.map_or("custom".to_string(), |s| s.as_str().to_string());
        vec![(name, docs)]
    };

    let use_embed = !a.no_embed && ctx.cfg.embed_settings().is_some();
    if ctx.dry_run {
        let plan: Vec<Value> = blocks
            .iter()
            .map(|(stage, docs)| json!({"stage": stage, "models": docs.iter().map(|(l, _)| l).collect::<Vec<_>>()}))
            .collect();
        return Ok(Output::Json(json!({
            "ok": true,
            "dry_run": true,
            "command": "compare",
            "fields": a.fields,
            "emb_f1": use_embed,
            "blocks": plan,
        })));
    }

    let emb = if use_embed { embedder(ctx)? } else { None };
    let emb_ref = emb.as_ref().map(|e| e as &dyn Embedder);
    let reports: Vec<PairwiseReport> = blocks
        .iter()
        .map(|(stage, docs)| build_pairwise_report(docs, stage, a.fields, emb_ref))
        .collect::<Result<_, _>>()?;
    Ok(match a.format {
        Format::Json => Output::Json(json!({"ok": true, "command": "compare", "reports": reports})),
        Format::Text => Output::Text(reports.iter().map(|r| r.render_table()).collect::<Vec<_>>().join("\n")),
    })
}
