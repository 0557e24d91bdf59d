use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use stimusel::client::{
    ChatClient, EchoClient, EndpointConfig, FixtureStore, HttpChatClient, RecordingClient,
    ReplayClient,
};
use stimusel::config::{Settings, SCHEMA_VERSION};
use stimusel::flow::compute_flow_curve;
use stimusel::instructgen::{self, BatchOptions, Clients, Clock, FixedClock, Prompts, SystemClock};
use stimusel::metrics::{
    self, EmotionTaxonomy, LexiconClassifier, LlmEmotionClassifier, TextEmotionClassifier,
};
use stimusel::sampler::plan_from_curve;
use stimusel::tensorio::{self, ColorMode, Tensor};
use stimusel::tubes::{self, ScorerWeights, TokenGrid};
use stimusel::{viz, Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "stimusel",
    version,
    about = "Event-driven frame sampling, tube selection and affective-reasoning tooling"
)]
struct Cli {
    /// TOML settings file, or a JSON artifact whose `config` is reused.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (instructgen: output JSONL file).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Seed for the random scorer used when no weights are given.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pick N frames from a frame directory.
    Sample {
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        #[command(flatten)]
        knobs: SamplingKnobs,
    },
    /// Export the optical-flow curve as CSV and SVG.
    Flowcurve {
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        #[command(flatten)]
        knobs: SamplingKnobs,
    },
    /// Score tokens and keep the Top-K tubes.
    Tubes {
        /// STVT patch tokens `[N, L, C]`.
        #[arg(long, value_name = "FILE")]
        tokens: PathBuf,
        /// STVT CLS tokens `[N, C]`.
        #[arg(long, value_name = "FILE")]
        cls: Option<PathBuf>,
        /// STVB scorer weights; a seeded random scorer is used when absent.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        #[arg(long, value_name = "T,H,W", value_parser = parse_triple)]
        tube: Option<[usize; 3]>,
        #[arg(long, value_name = "T,H,W", value_parser = parse_triple)]
        stride: Option<[usize; 3]>,
        #[arg(long, value_name = "K")]
        topk: Option<usize>,
        #[arg(long, value_name = "H")]
        hidden: Option<usize>,
    },
    /// Accuracy, Emo-align, doubly-right and judge tallies.
    Eval {
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        #[arg(long, value_name = "FILE")]
        taxonomy: PathBuf,
        #[arg(long, value_name = "K")]
        k: Option<usize>,
        /// `lexicon`, `echo`, or an endpoint `MODEL[@URL]`.
        #[arg(long, default_value = "lexicon")]
        classifier: String,
        /// Replay classifier replies from this fixture directory.
        #[arg(long, value_name = "DIR")]
        fixtures: Option<PathBuf>,
    },
    /// Generate reasoning instruction records for a manifest of videos.
    Instructgen {
        /// JSONL manifest of {video_id, frames_dir, emotion}.
        #[arg(long, value_name = "FILE")]
        videos: PathBuf,
        #[arg(long, value_name = "FILE")]
        taxonomy: PathBuf,
        #[arg(long, value_name = "SPEC")]
        captioner: String,
        #[arg(long, value_name = "SPEC")]
        summarizer: String,
        #[arg(long, value_name = "SPEC")]
        reasoner: String,
        /// Replay (or with --record, record) client replies here.
        #[arg(long, value_name = "DIR")]
        fixtures: Option<PathBuf>,
        #[arg(long, requires = "fixtures")]
        record: bool,
        /// Summary prompt template file; must contain `{captions}`.
        #[arg(long, value_name = "FILE")]
        summary_template: Option<PathBuf>,
        #[command(flatten)]
        knobs: SamplingKnobs,
    },
    /// Render heatmap overlays for the sampled frames.
    Viz {
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        /// STVT `[N, G, G]` score volume from `tubes`.
        #[arg(long, value_name = "FILE")]
        heatmap: PathBuf,
        /// Plan JSON from `sample`.
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct SamplingKnobs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    min_distance: Option<usize>,
    #[arg(long)]
    prominence_frac: Option<f64>,
    #[arg(long)]
    window_radius: Option<usize>,
    #[arg(long)]
    presmooth_sigma: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    downscale: Option<usize>,
}

impl SamplingKnobs {
    fn settings(&self) -> Settings {
        Settings {
            n: self.n,
            p: self.p,
            d: self.d,
            sigma: self.sigma,
            min_distance: self.min_distance,
            prominence_frac: self.prominence_frac,
            window_radius: self.window_radius,
            presmooth_sigma: self.presmooth_sigma,
            eps: self.eps,
            downscale: self.downscale,
            ..Settings::default()
        }
    }
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected T,H,W, got {s:?}"));
    };
    let p = |x: &str| x.parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok([p(a)?, p(b)?, p(c)?])
}

fn fail(kind: &str, message: &str) {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message } })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            fail("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::invalid("--jobs must be >= 1"));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    let file = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let global = Settings {
        seed: cli.seed,
        ..Settings::default()
    };
    let base = file.overlay(&global);

    match &cli.command {
        Command::Sample { frames, knobs } => {
            cmd_sample(&cli, base.overlay(&knobs.settings()), frames)
        }
        Command::Flowcurve { frames, knobs } => {
            cmd_flowcurve(&cli, base.overlay(&knobs.settings()), frames)
        }
        Command::Tubes {
            tokens,
            cls,
            weights,
            tube,
            stride,
            topk,
            hidden,
        } => {
            let flags = Settings {
                tube: *tube,
                stride: *stride,
                topk: *topk,
                hidden: *hidden,
                ..Settings::default()
            };
            cmd_tubes(
                &cli,
                base.overlay(&flags),
                tokens,
                cls.as_deref(),
                weights.as_deref(),
            )
        }
        Command::Eval {
            records,
            taxonomy,
            k,
            classifier,
            fixtures,
        } => {
            let flags = Settings {
                k: *k,
                ..Settings::default()
            };
            cmd_eval(
                &cli,
                base.overlay(&flags),
                records,
                taxonomy,
                classifier,
                fixtures.as_deref(),
            )
        }
        Command::Instructgen {
            videos,
            taxonomy,
            captioner,
            summarizer,
            reasoner,
            fixtures,
            record,
            summary_template,
            knobs,
        } => {
            let specs = [captioner.as_str(), summarizer.as_str(), reasoner.as_str()];
            let gen = GenArgs {
                videos,
                taxonomy,
                specs,
                fixtures: fixtures.as_deref(),
                record: *record,
                summary_template: summary_template.as_deref(),
            };
            cmd_instructgen(&cli, base.overlay(&knobs.settings()), &gen)
        }
        Command::Viz {
            frames,
            heatmap,
            plan,
        } => cmd_viz(&cli, base, frames, heatmap, plan),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    schema_version: &'a str,
    command: &'a str,
    #[serde(flatten)]
    body: T,
    config: &'a Settings,
}

fn write_artifact<T: Serialize>(
    path: &Path,
    command: &str,
    body: T,
    config: &Settings,
) -> Result<()> {
    let art = Artifact {
        schema_version: SCHEMA_VERSION,
        command,
        body,
        config,
    };
    tensorio::write_json(&art, path)
}

fn cmd_sample(cli: &Cli, s: Settings, frames: &Path) -> Result<()> {
    let cfg = s.sampler()?;
    let fp = s.flow()?;
    let effective = s.effective_sampling()?;
    let video = tensorio::load_frame_sequence(frames, ColorMode::Gray)?;
    let raw = compute_flow_curve(&video, &fp)?;
    let (_, _, plan) = plan_from_curve(raw, &cfg)?;
    let body = json!({
        "source_id": video.source_id(),
        "frame_count": video.frame_count(),
        "N": cfg.n,
        "indices": plan.indices,
        "windows": plan.partition.windows,
        "quotas": plan.per_event_quota,
    });
    let dir = out_dir(cli)?;
    write_artifact(&dir.join("plan.json"), "sample", body, &effective)?;
    log::info!(
        "sampled {:?} from {} frames",
        plan.indices,
        video.frame_count()
    );
    Ok(())
}

fn cmd_flowcurve(cli: &Cli, s: Settings, frames: &Path) -> Result<()> {
    let cfg = s.sampler()?;
    let fp = s.flow()?;
    let effective = s.effective_sampling()?;
    let video = tensorio::load_frame_sequence(frames, ColorMode::Gray)?;
    let raw = compute_flow_curve(&video, &fp)?;
    let (curve, peaks, plan) = plan_from_curve(raw, &cfg)?;
    let windows = &plan.partition.windows;
    let dir = out_dir(cli)?;
    write_text(
        &dir.join("curve.csv"),
        &viz::curve_csv(&curve, &peaks, windows),
    )?;
    write_text(
        &dir.join("curve.svg"),
        &viz::curve_svg(&curve, &peaks, windows),
    )?;
    let body = json!({
        "source_id": video.source_id(),
        "csv": "curve.csv",
        "svg": "curve.svg",
        "peaks": peaks,
        "windows": windows,
    });
    write_artifact(&dir.join("curve.json"), "flowcurve", body, &effective)
}

fn cmd_tubes(
    cli: &Cli,
    s: Settings,
    tokens: &Path,
    cls: Option<&Path>,
    weights: Option<&Path>,
) -> Result<()> {
    let patch = tensorio::read_tensor(tokens)?;
    let cls = cls.map(tensorio::read_tensor).transpose()?;
    let grid = TokenGrid::new(patch, cls)?;
    let mut effective = s.effective_tubes();
    let scorer = match weights {
        Some(p) => {
            effective.seed = None;
            ScorerWeights::from_bundle(&tensorio::read_bundle(p)?).map_err(|e| e.in_file(p))?
        }
        None => {
            let hidden = s
                .hidden
                .unwrap_or_else(|| ScorerWeights::default_hidden(grid.channels()));
            effective.hidden = Some(hidden);
            log::warn!(
                "no --weights given; using a random scorer (seed {})",
                s.seed()
            );
            ScorerWeights::random(grid.channels(), hidden, s.seed())?
        }
    };
    let geo = s.geometry();
    let out = tubes::select_pipeline(&grid, &scorer, &geo, s.topk())?;
    let dir = out_dir(cli)?;
    tensorio::write_tensor(&out.spatial, &dir.join("spatial.stvt"))?;
    if let Some(t) = &out.temporal {
        tensorio::write_tensor(t, &dir.join("temporal.stvt"))?;
    }
    tensorio::write_tensor(&out.heatmap, &dir.join("heatmap.stvt"))?;
    let body = json!({
        "tube_counts": out.selection.counts,
        "tube_coords": out.selection.selected,
        "scores": out.selection.selected_scores(),
        "token_count": out.spatial.dims()[0],
        "weights": weights.map(|p| p.display().to_string()),
    });
    write_artifact(&dir.join("selection.json"), "tubes", body, &effective)
}

fn make_client(
    spec: &str,
    role: &str,
    fixtures: Option<&Path>,
    record: bool,
) -> Result<Box<dyn ChatClient>> {
    if spec == "echo" {
        return Ok(Box::new(EchoClient));
    }
    if let (Some(dir), false) = (fixtures, record) {
        return Ok(Box::new(ReplayClient::new(FixtureStore::new(dir), role)));
    }
    let http = HttpChatClient::from_env(EndpointConfig::parse(spec)?)?;
    Ok(match fixtures {
        Some(dir) => Box::new(RecordingClient::new(http, FixtureStore::new(dir), role)),
        None => Box::new(http),
    })
}

fn load_taxonomy(path: &Path) -> Result<EmotionTaxonomy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmotionTaxonomy::from_json(&text).map_err(|e| e.in_file(path))
}

fn cmd_eval(
    cli: &Cli,
    s: Settings,
    records: &Path,
    taxonomy: &Path,
    classifier: &str,
    fixtures: Option<&Path>,
) -> Result<()> {
    let tax = load_taxonomy(taxonomy)?;
    let file = fs::File::open(records).map_err(|e| Error::io(records, e))?;
    let recs = metrics::parse_records(BufReader::new(file)).map_err(|e| e.in_file(records))?;
    let clf: Box<dyn TextEmotionClassifier> = match classifier {
        "lexicon" => Box::new(LexiconClassifier::new(&tax)),
        spec => Box::new(LlmEmotionClassifier::new(
            make_client(spec, "classifier", fixtures, false)?,
            tax.clone(),
        )),
    };
    let report = metrics::evaluate(&recs, s.eval_k(), clf.as_ref())?;
    let dir = out_dir(cli)?;
    let pct = |x: f64| metrics::format_percent(x);
    let summary: Value = json!({
        "top1": pct(report.top1),
        "top_k": pct(report.top_k),
        "emo_align": report.emo_align.map(pct),
        "rr": report.doubly_right.as_ref().map(|d| pct(d.rr)),
        "rw": report.doubly_right.as_ref().map(|d| pct(d.rw)),
        "wr": report.doubly_right.as_ref().map(|d| pct(d.wr)),
        "ww": report.doubly_right.as_ref().map(|d| pct(d.ww)),
    });
    let body = json!({
        "taxonomy": tax.name,
        "classifier": classifier,
        "summary": summary,
        "report": report,
    });
    write_artifact(&dir.join("report.json"), "eval", body, &s.effective_eval())
}

struct GenArgs<'a> {
    videos: &'a Path,
    taxonomy: &'a Path,
    specs: [&'a str; 3],
    fixtures: Option<&'a Path>,
    record: bool,
    summary_template: Option<&'a Path>,
}

fn cmd_instructgen(cli: &Cli, s: Settings, g: &GenArgs<'_>) -> Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::invalid("instructgen needs --out FILE.jsonl"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tax = load_taxonomy(g.taxonomy)?;
    let manifest = fs::File::open(g.videos).map_err(|e| Error::io(g.videos, e))?;
    let entries = instructgen::parse_manifest(BufReader::new(manifest), g.videos.parent())
        .map_err(|e| e.in_file(g.videos))?;
    let mut prompts = Prompts::default();
    if let Some(p) = g.summary_template {
        prompts.summary_template = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        if !prompts.summary_template.contains("{captions}") {
            return Err(Error::invalid(format!(
                "{}: template lacks {{captions}}",
                p.display()
            )));
        }
    }
    let [c, sm, r] = g.specs;
    let captioner = make_client(c, "captioner", g.fixtures, g.record)?;
    let summarizer = make_client(sm, "summarizer", g.fixtures, g.record)?;
    let reasoner = make_client(r, "reasoner", g.fixtures, g.record)?;
    let clients = Clients {
        captioner: captioner.as_ref(),
        summarizer: summarizer.as_ref(),
        reasoner: reasoner.as_ref(),
    };
    let opts = BatchOptions {
        sampler: s.sampler()?,
        flow: s.flow()?,
        prompts,
        jobs: cli.jobs.unwrap_or(1),
    };
    // replayed runs are stamped with a fixed clock so reruns are byte-identical
    let replaying = g.fixtures.is_some() && !g.record || g.specs.iter().all(|s| *s == "echo");
    let clock: Box<dyn Clock> = if replaying {
        Box::new(FixedClock(0))
    } else {
        Box::new(SystemClock)
    };
    let summary = instructgen::run_batch(&entries, &tax, &clients, &opts, clock.as_ref(), &out)?;
    let report = out.with_extension("summary.json");
    let body = json!({
        "output": out.file_name().map(|n| n.to_string_lossy().into_owned()),
        "written": summary.written,
        "skipped": summary.skipped,
        "failed": summary.failed,
        "reasoning_template_sha256": instructgen::reasoning_template_digest(),
    });
    write_artifact(&report, "instructgen", body, &s.effective_sampling()?)?;
    if !summary.failed.is_empty() {
        log::warn!(
            "{} of {} videos failed; see {}",
            summary.failed.len(),
            entries.len(),
            report.display()
        );
    }
    Ok(())
}

fn cmd_viz(cli: &Cli, s: Settings, frames: &Path, heatmap: &Path, plan: &Path) -> Result<()> {
    let video = tensorio::load_frame_sequence(frames, ColorMode::Gray)?;
    let heat: Tensor = tensorio::read_tensor(heatmap)?;
    let text = fs::read_to_string(plan).map_err(|e| Error::io(plan, e))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", plan.display())))?;
    let indices: Vec<usize> = v
        .get("indices")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| Error::format(format!("{}: indices: {e}", plan.display())))?
        .ok_or_else(|| Error::format(format!("{}: no `indices` field", plan.display())))?;
    let images = viz::render_overlay(&video, &heat, &indices)?;
    let dir = out_dir(cli)?;
    let mut names = Vec::with_capacity(images.len());
    for r in &images {
        let path = dir.join(&r.name);
        fs::write(&path, r.png()?).map_err(|e| Error::io(&path, e))?;
        names.push(r.name.clone());
    }
    let body = json!({ "indices": indices, "images": names });
    let config = match v.get("config") {
        Some(c) => serde_json::from_value(c.clone())
            .map_err(|e| Error::format(format!("{}: config: {e}", plan.display())))?,
        None => s,
    };
    write_artifact(&dir.join("viz.json"), "viz", body, &config)
}
