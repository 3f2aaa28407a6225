//! `render`: a trial log as numbered PPM frames, optionally an animated GIF.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use swarmgen_core::render::{render_frames, write_frames, Frame};
use swarmgen_core::trial::TrialLog;

use crate::{CliError, CliResult, Exit};

/// GIF frame delay in hundredths of a second.
const GIF_DELAY: u16 = 10;

#[derive(Debug, clap::Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Frame directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Samples between frames.
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Also write an animation here.
    #[arg(long)]
    pub gif: Option<PathBuf>,
}

/// Encodes `frames` as a looping GIF.
pub fn write_gif(path: &Path, frames: &[Frame]) -> Result<(), CliError> {
    let Some(first) = frames.first() else {
        return Err(CliError::config("no frames to animate"));
    };
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let gif_err = |e: gif::EncodingError| CliError::infra(format!("{}: {e}", path.display()));
    let (w, h) = (first.width as u16, first.height as u16);
    let mut encoder = gif::Encoder::new(file, w, h, &[]).map_err(gif_err)?;
    encoder.set_repeat(gif::Repeat::Infinite).map_err(gif_err)?;
    for f in frames {
        let mut frame = gif::Frame::from_rgb(w, h, &f.pixels);
        frame.delay = GIF_DELAY;
        encoder.write_frame(&frame).map_err(gif_err)?;
    }
    Ok(())
}

pub fn cmd_render(args: &RenderArgs, out: &mut dyn Write) -> CliResult {
    let log = TrialLog::load(&args.log).map_err(|e| CliError::config(format!("{}: {e}", args.log.display())))?;
    let frames = render_frames(&log, args.stride).map_err(|e| CliError::config(format!("{}: {e}", args.log.display())))?;
    let paths = write_frames(&args.out, &frames).map_err(|e| CliError::infra(e.to_string()))?;
    if let Some(gif) = &args.gif {
        write_gif(gif, &frames)?;
    }
    writeln!(out, "{} frames in {}", paths.len(), args.out.display()).map_err(|e| CliError::infra(e.to_string()))?;
    Ok(Exit::Ok)
}
