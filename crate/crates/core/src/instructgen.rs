//! Instruction-data generation: caption the sampled frames, summarize them
//! into a video caption, then ask a reasoning model to explain the labelled
//! emotion. Output is JSON Lines, one [`InstructionRecord`] per video.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{ChatClient, ChatMessage};
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::metrics::EmotionTaxonomy;
use crate::sampler::{sample_frames, SamplerConfig};
use crate::tensorio::{load_frame_sequence, ColorMode, Frame, VideoFrames};

pub const REASONING_SYSTEM: &str = "Given the below (QUESTION, ANSWER) pair examples of emotion estimation, left fill-in the REASONING process which derives ANSWERS from QUESTIONS in three sentences.";
pub const REASONING_QUESTION: &str = "QUESTION: These are frame descriptions from a video. After reading the descriptions, how people might emotionally feel about the content and why. Only provide the one most likely emotion.";
pub const REASONING_OPENER: &str = "REASONING: Let's think of step-by-step";

/// Default video-summary prompt. Not canonical: the wording is ours.
/// `{captions}` is replaced by the formatted frame captions.
pub const DEFAULT_SUMMARY_TEMPLATE: &str = "Below are descriptions of frames sampled from one video, listed in temporal order. Write a single video-level caption describing what happens across the frames, taking the order of events into account.\n\n{captions}";

pub const DEFAULT_CAPTION_PROMPT: &str = "Describe this video frame in one or two sentences.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCaption {
    pub frame_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub video_id: String,
    pub frame_captions: Vec<FrameCaption>,
    pub video_caption: Option<String>,
}

impl CaptionSet {
    pub fn new(video_id: impl Into<String>, frame_captions: Vec<FrameCaption>) -> Result<Self> {
        let set = Self {
            video_id: video_id.into(),
            frame_captions,
            video_caption: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_captions.is_empty() {
            return Err(Error::invalid(format!(
                "{}: no frame captions",
                self.video_id
            )));
        }
        for (i, c) in self.frame_captions.iter().enumerate() {
            if c.text.trim().is_empty() {
                return Err(Error::invalid(format!(
                    "{}: caption {i} is empty",
                    self.video_id
                )));
            }
            if i > 0 && self.frame_captions[i - 1].frame_index >= c.frame_index {
                return Err(Error::invalid(format!(
                    "{}: frame indices must be strictly increasing",
                    self.video_id
                )));
            }
        }
        Ok(())
    }
}

/// `"; "` is the clause delimiter, so captions carry `", "` in its place.
pub fn escape_caption(text: &str) -> String {
    text.replace("; ", ", ")
}

/// `Frame 1 description: <c1>; Frame 2 description: <c2>; ...`, numbered by
/// position among the sampled frames.
pub fn format_frame_captions(set: &CaptionSet) -> Result<String> {
    set.validate()?;
    Ok(set
        .frame_captions
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Frame {} description: {}", i + 1, escape_caption(&c.text)))
        .collect::<Vec<_>>()
        .join("; "))
}

/// Asks `client` for a video-level caption and stores it in `set`.
pub fn summarize_video(
    set: &mut CaptionSet,
    client: &dyn ChatClient,
    template: &str,
) -> Result<String> {
    let captions = format_frame_captions(set)?;
    let prompt = template.replace("{captions}", &captions);
    let summary = client.complete(&[ChatMessage::user(prompt)])?;
    let summary = summary.trim().to_owned();
    if summary.is_empty() {
        return Err(crate::client::ClientError::Empty(client.id()).into());
    }
    set.video_caption = Some(summary.clone());
    Ok(summary)
}

/// The system and user messages asking for a reasoning chain from a video
/// caption to its emotion label.
pub fn build_reasoning_prompt(video_caption: &str, emotion: &str) -> Result<Vec<ChatMessage>> {
    if video_caption.trim().is_empty() || emotion.trim().is_empty() {
        return Err(Error::invalid(
            "reasoning prompt needs a caption and an emotion",
        ));
    }
    let user = format!(
        "{REASONING_QUESTION} {video_caption}\nANSWER: The viewer feels {emotion}.\n{REASONING_OPENER}"
    );
    Ok(vec![
        ChatMessage::system(REASONING_SYSTEM),
        ChatMessage::user(user),
    ])
}

/// SHA-256 over the fixed parts of the reasoning prompt.
pub fn reasoning_template_digest() -> String {
    let mut h = Sha256::new();
    for part in [REASONING_SYSTEM, REASONING_QUESTION, REASONING_OPENER] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Captions each sampled frame with an image-capable chat client.
pub fn caption_frames(
    video: &VideoFrames,
    indices: &[usize],
    captioner: &dyn ChatClient,
    prompt: &str,
) -> Result<CaptionSet> {
    let mut captions = Vec::with_capacity(indices.len());
    for &i in indices {
        let frame = video
            .frames()
            .get(i)
            .ok_or_else(|| Error::invalid(format!("frame index {i} outside the video")))?;
        let png = encode_png(frame)?;
        let text = captioner.complete(&[ChatMessage::user_with_image(prompt, &png)])?;
        let text = text.trim().to_owned();
        if text.is_empty() {
            return Err(crate::client::ClientError::Empty(captioner.id()).into());
        }
        captions.push(FrameCaption {
            frame_index: i,
            text,
        });
    }
    CaptionSet::new(video.source_id(), captions)
}

fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    let res = match &frame.rgb {
        Some(rgb) => {
            image::RgbImage::from_raw(frame.width as u32, frame.height as u32, rgb.clone())
                .map(|img| img.write_to(&mut out, image::ImageFormat::Png))
        }
        None => {
            image::GrayImage::from_raw(frame.width as u32, frame.height as u32, frame.gray.clone())
                .map(|img| img.write_to(&mut out, image::ImageFormat::Png))
        }
    };
    match res {
        Some(Ok(())) => Ok(out.into_inner()),
        Some(Err(e)) => Err(Error::invalid(format!("png encode: {e}"))),
        None => Err(Error::invalid("frame buffer does not match its dimensions")),
    }
}

pub trait Clock: Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Constant time source, used for reproducible fixture runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub captioner: String,
    pub summarizer: String,
    pub reasoner: String,
    pub frame_indices: Vec<usize>,
    pub frame_captions: Vec<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub video_id: String,
    pub emotion: String,
    pub reasoning: String,
    pub video_caption: String,
    pub provenance: Provenance,
}

pub struct Clients<'a> {
    pub captioner: &'a dyn ChatClient,
    pub summarizer: &'a dyn ChatClient,
    pub reasoner: &'a dyn ChatClient,
}

#[derive(Debug, Clone)]
pub struct Prompts {
    pub caption: String,
    pub summary_template: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            caption: DEFAULT_CAPTION_PROMPT.into(),
            summary_template: DEFAULT_SUMMARY_TEMPLATE.into(),
        }
    }
}

/// Summarizes an already captioned video and generates its reasoning.
pub fn generate_record(
    video_id: &str,
    mut set: CaptionSet,
    emotion: &str,
    taxonomy: &EmotionTaxonomy,
    clients: &Clients<'_>,
    prompts: &Prompts,
    clock: &dyn Clock,
) -> Result<InstructionRecord> {
    let label = taxonomy
        .position(emotion)
        .map(|i| taxonomy.labels[i].clone())
        .ok_or_else(|| {
            Error::invalid(format!(
                "{video_id}: emotion {emotion:?} is not a {} label",
                taxonomy.name
            ))
        })?;
    let started = clock.now_ms();
    let caption = summarize_video(&mut set, clients.summarizer, &prompts.summary_template)?;
    let prompt = build_reasoning_prompt(&caption, &label)?;
    let reasoning = clients.reasoner.complete(&prompt)?.trim().to_owned();
    if reasoning.is_empty() {
        return Err(crate::client::ClientError::Empty(clients.reasoner.id()).into());
    }
    Ok(InstructionRecord {
        video_id: video_id.to_owned(),
        emotion: label,
        reasoning,
        video_caption: caption,
        provenance: Provenance {
            captioner: clients.captioner.id(),
            summarizer: clients.summarizer.id(),
            reasoner: clients.reasoner.id(),
            frame_indices: set.frame_captions.iter().map(|c| c.frame_index).collect(),
            frame_captions: set.frame_captions.iter().map(|c| c.text.clone()).collect(),
            started_unix_ms: started,
            finished_unix_ms: clock.now_ms(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frames_dir: PathBuf,
    pub emotion: String,
}

/// JSON Lines manifest; relative `frames_dir` values are resolved against `base`.
pub fn parse_manifest<R: BufRead>(reader: R, base: Option<&Path>) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(format!("manifest line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("manifest line {}: {e}", n + 1)))?;
        if e.video_id.is_empty() {
            return Err(Error::format(format!(
                "manifest line {}: empty video_id",
                n + 1
            )));
        }
        if !seen.insert(e.video_id.clone()) {
            return Err(Error::format(format!(
                "manifest line {}: duplicate video_id {:?}",
                n + 1,
                e.video_id
            )));
        }
        if let Some(base) = base {
            if e.frames_dir.is_relative() {
                e.frames_dir = base.join(&e.frames_dir);
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Completed and failed video ids of a batch run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub completed: BTreeSet<String>,
    pub failed: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::format(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Write-then-rename so a crash never leaves a half-written checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".checkpoint.json");
    out.with_file_name(name)
}

/// Video ids already present in `out`. A torn final line (no trailing newline)
/// is cut off so later appends start on a fresh line.
fn existing_ids(out: &Path) -> Result<HashSet<String>> {
    let bytes = match fs::read(out) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(Error::io(out, e)),
    };
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(p) => p + 1,
        None => 0,
    };
    if complete < bytes.len() {
        log::warn!("{}: dropping torn trailing line", out.display());
        let f = OpenOptions::new()
            .write(true)
            .open(out)
            .map_err(|e| Error::io(out, e))?;
        f.set_len(complete as u64).map_err(|e| Error::io(out, e))?;
    }
    let mut ids = HashSet::new();
    for line in bytes[..complete]
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
    {
        #[derive(Deserialize)]
        struct Id {
            video_id: String,
        }
        let id: Id = serde_json::from_slice(line)
            .map_err(|e| Error::format(format!("{}: {e}", out.display())))?;
        ids.insert(id.video_id);
    }
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub sampler: SamplerConfig,
    pub flow: FlowParams,
    pub prompts: Prompts,
    pub jobs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub written: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: BTreeMap<String, String>,
}

fn process_entry(
    entry: &ManifestEntry,
    taxonomy: &EmotionTaxonomy,
    clients: &Clients<'_>,
    opts: &BatchOptions,
    clock: &dyn Clock,
) -> Result<InstructionRecord> {
    // reject bad labels before any client call
    if !taxonomy.contains(&entry.emotion) {
        return Err(Error::invalid(format!(
            "{}: emotion {:?} is not a {} label",
            entry.video_id, entry.emotion, taxonomy.name
        )));
    }
    let video = load_frame_sequence(&entry.frames_dir, ColorMode::Rgb)?;
    let plan = sample_frames(&video, &opts.sampler, &opts.flow)?;
    let mut set = caption_frames(
        &video,
        &plan.indices,
        clients.captioner,
        &opts.prompts.caption,
    )?;
    set.video_id = entry.video_id.clone();
    generate_record(
        &entry.video_id,
        set,
        &entry.emotion,
        taxonomy,
        clients,
        &opts.prompts,
        clock,
    )
}

/// Generates records for every manifest entry not yet in `out`, appending in
/// manifest order and updating the checkpoint after each record.
pub fn run_batch(
    entries: &[ManifestEntry],
    taxonomy: &EmotionTaxonomy,
    clients: &Clients<'_>,
    opts: &BatchOptions,
    clock: &dyn Clock,
    out: &Path,
) -> Result<BatchSummary> {
    let ckpt_path = checkpoint_path(out);
    let mut ckpt = Checkpoint::load(&ckpt_path)?;
    let done = existing_ids(out)?;
    let mut summary = BatchSummary::default();
    let todo: Vec<&ManifestEntry> = entries
        .iter()
        .filter(|e| {
            let skip = done.contains(&e.video_id) || ckpt.completed.contains(&e.video_id);
            if skip {
                summary.skipped.push(e.video_id.clone());
            }
            !skip
        })
        .collect();

    let jobs = opts.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(|e| Error::io(out, e))?;

    for chunk in todo.chunks(jobs) {
        let results: Vec<Result<InstructionRecord>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|e| process_entry(e, taxonomy, clients, opts, clock))
                .collect()
        });
        for (entry, res) in chunk.iter().zip(results) {
            match res {
                Ok(rec) => {
                    let mut line =
                        serde_json::to_string(&rec).map_err(|e| Error::invalid(e.to_string()))?;
                    line.push('\n');
                    file.write_all(line.as_bytes())
                        .map_err(|e| Error::io(out, e))?;
                    file.flush().map_err(|e| Error::io(out, e))?;
                    ckpt.completed.insert(rec.video_id.clone());
                    ckpt.failed.remove(&rec.video_id);
                    summary.written.push(rec.video_id);
                }
                Err(e) => {
                    log::error!("{}: {e}", entry.video_id);
                    ckpt.failed.insert(entry.video_id.clone(), e.to_string());
                    summary.failed.insert(entry.video_id.clone(), e.to_string());
                }
            }
            ckpt.save(&ckpt_path)?;
        }
    }
    Ok(summary)
}
