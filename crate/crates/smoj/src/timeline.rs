//! Timeline files: a header `# smoj-timeline v1 <names, comma-separated>`
//! followed by lines `t,w1,...,wK` with `t` in seconds.

use std::fmt::Write as _;
use std::path::Path;

use smoj_core::animation::AnimationError;
use smoj_core::{BlendTimeline, BlendWeights};

const HEADER: &str = "# smoj-timeline v1";

#[derive(Debug, thiserror::Error)]
pub enum TimelineFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("missing or malformed header (expected {HEADER:?} and channel names)")]
    Header,
    #[error("line {line}: expected {expected} weights, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse {value:?}")]
    Number { line: usize, value: String },
    #[error("timeline channels {found:?} do not match asset channels {expected:?}")]
    Channels {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error(transparent)]
    Timeline(#[from] AnimationError),
}

/// A parsed timeline with the channel order declared in its header.
#[derive(Clone, Debug, PartialEq)]
pub struct TimelineFile {
    pub channels: Vec<String>,
    pub timeline: BlendTimeline,
}

impl TimelineFile {
    /// Fails unless the header lists exactly `channels`, in order.
    pub fn check_channels(&self, channels: &[String]) -> Result<(), TimelineFileError> {
        if self.channels == channels {
            Ok(())
        } else {
            Err(TimelineFileError::Channels {
                expected: channels.to_vec(),
                found: self.channels.clone(),
            })
        }
    }
}

pub fn format_timeline(channels: &[String], timeline: &BlendTimeline) -> String {
    let mut out = format!("{HEADER} {}\n", channels.join(","));
    for (t, w) in &timeline.frames {
        write!(out, "{t:?}").unwrap();
        for v in &w.0 {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_timeline(text: &str) -> Result<TimelineFile, TimelineFileError> {
    let mut lines = text.lines().enumerate();
    let channels: Vec<String> = lines
        .next()
        .and_then(|(_, l)| l.strip_prefix(HEADER))
        .map(|rest| {
            rest.trim()
                .split(',')
                .map(|s| s.trim().to_string())
                .collect()
        })
        .filter(|names: &Vec<String>| names.iter().all(|n| !n.is_empty()))
        .ok_or(TimelineFileError::Header)?;
    let mut frames = Vec::new();
    for (i, l) in lines {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let line = i + 1;
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != channels.len() + 1 {
            return Err(TimelineFileError::FieldCount {
                line,
                expected: channels.len(),
                found: fields.len() - 1,
            });
        }
        let bad = |v: &str| TimelineFileError::Number {
            line,
            value: v.into(),
        };
        let t: f64 = fields[0].parse().map_err(|_| bad(fields[0]))?;
        let w = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(f))
            })
            .collect::<Result<Vec<f32>, _>>()?;
        frames.push((t, BlendWeights(w)));
    }
    Ok(TimelineFile {
        channels,
        timeline: BlendTimeline::new(frames)?,
    })
}

pub fn read_timeline(path: impl AsRef<Path>) -> Result<TimelineFile, TimelineFileError> {
    parse_timeline(&std::fs::read_to_string(path)?)
}

pub fn write_timeline(
    path: impl AsRef<Path>,
    channels: &[String],
    timeline: &BlendTimeline,
) -> Result<(), TimelineFileError> {
    Ok(std::fs::write(path, format_timeline(channels, timeline))?)
}
