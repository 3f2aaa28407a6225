//! Top-down raster frames of a trial, written as binary PPM images.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::geometry::{Bounds, Vec2};
use crate::model::{Layout, RobotKind};
use crate::trial::TrialLog;

pub const FRAME_SIZE: u32 = 256;
const MARGIN: u32 = 8;

const BACKGROUND: [u8; 3] = [255, 255, 255];
const BORDER: [u8; 3] = [40, 40, 40];
const OBSTACLE: [u8; 3] = [150, 150, 150];
const LANDMARK: [u8; 3] = [40, 160, 60];
const REGION: [u8; 3] = [200, 230, 200];
const WORKER: [u8; 3] = [30, 90, 200];
const PREY: [u8; 3] = [220, 40, 40];
const LEADER: [u8; 3] = [240, 150, 20];

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("trial log has no records")]
    EmptyLog,
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// An RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tick: u64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Frame {
    fn blank(tick: u64) -> Self {
        let n = (FRAME_SIZE * FRAME_SIZE) as usize;
        Frame {
            tick,
            width: FRAME_SIZE,
            height: FRAME_SIZE,
            pixels: BACKGROUND.repeat(n),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
        let r = r.max(1.5);
        for y in (cy - r).floor() as i64..=(cy + r).ceil() as i64 {
            for x in (cx - r).floor() as i64..=(cx + r).ceil() as i64 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.put(x, y, color);
                }
            }
        }
    }

    fn ring(&mut self, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
        let steps = (r * 8.0).ceil().max(16.0) as usize;
        for k in 0..steps {
            let a = std::f64::consts::TAU * k as f64 / steps as f64;
            self.put((cx + r * a.cos()).floor() as i64, (cy + r * a.sin()).floor() as i64, color);
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        for x in x0..=x1 {
            self.put(x, y0, color);
            self.put(x, y1, color);
        }
        for y in y0..=y1 {
            self.put(x0, y, color);
            self.put(x1, y, color);
        }
    }

    /// Binary `P6` encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_ppm()))
    }

    /// 8-bit RGB PNG encoding.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&self.pixels).expect("in-memory png data");
        writer.finish().expect("in-memory png end");
        out
    }
}

/// Maps world coordinates onto the frame, y pointing up.
struct Projection {
    bounds: Bounds,
    scale: f64,
}

impl Projection {
    fn new(bounds: Bounds) -> Self {
        let inner = (FRAME_SIZE - 2 * MARGIN) as f64;
        let scale = inner / bounds.width().max(bounds.height());
        Projection { bounds, scale }
    }

    fn map(&self, p: Vec2) -> (f64, f64) {
        let x = MARGIN as f64 + (p.x - self.bounds.min.x) * self.scale;
        let y = (FRAME_SIZE - MARGIN) as f64 - (p.y - self.bounds.min.y) * self.scale;
        (x, y)
    }
}

/// One frame per `stride` recorded samples, starting at the first, so a log
/// with T samples gives `ceil(T / stride)` frames.
pub fn render_frames(log: &TrialLog, stride: usize) -> Result<Vec<Frame>, RenderError> {
    if stride == 0 {
        return Err(RenderError::ZeroStride);
    }
    let ticks = log.sample_ticks();
    if ticks.is_empty() {
        return Err(RenderError::EmptyLog);
    }
    let layout = log.spec.as_ref().map(|s| &s.layout);
    let bounds = layout.map_or_else(|| Bounds::square(2.5), |l| l.bounds);
    let target_kind = log.task.target_kind();
    let body = log.spec.as_ref().map_or(0.1, |s| s.robot.body_radius);
    let proj = Projection::new(bounds);

    let background = static_layer(&proj, layout);
    let mut frames = Vec::with_capacity(ticks.len().div_ceil(stride));
    for &tick in ticks.iter().step_by(stride) {
        let mut frame = background.clone();
        frame.tick = tick;
        for p in log.positions_at(tick) {
            let (x, y) = proj.map(p);
            frame.disc(x, y, body * proj.scale, WORKER);
        }
        if let Some(p) = log.target_at(tick) {
            let (x, y) = proj.map(p);
            let color = if target_kind == Some(RobotKind::Leader) { LEADER } else { PREY };
            frame.disc(x, y, body * proj.scale * 1.2, color);
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn static_layer(proj: &Projection, layout: Option<&Layout>) -> Frame {
    let mut f = Frame::blank(0);
    if let Some(l) = layout {
        for r in &l.regions {
            let (x, y) = proj.map(r.center);
            f.disc(x, y, r.radius * proj.scale, REGION);
        }
        for o in &l.obstacles {
            let (x, y) = proj.map(o.center);
            f.disc(x, y, o.radius * proj.scale, OBSTACLE);
        }
        for &p in &l.landmarks {
            let (x, y) = proj.map(p);
            f.ring(x, y, 4.0, LANDMARK);
        }
    }
    let (x0, y1) = proj.map(proj.bounds.min);
    let (x1, y0) = proj.map(proj.bounds.max);
    f.rect(x0.floor() as i64, y0.floor() as i64, x1.floor() as i64, y1.floor() as i64, BORDER);
    f
}

/// Writes `frame_00000.ppm`, `frame_00001.ppm`, ... into `dir`.
pub fn write_frames(dir: impl AsRef<Path>, frames: &[Frame]) -> Result<Vec<PathBuf>, RenderError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| RenderError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let path = dir.join(format!("frame_{i:05}.ppm"));
            std::fs::write(&path, frame.to_ppm()).map_err(io(&path))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskKind, TaskSpec};
    use crate::trial::{run_trial, Idle};

    fn idle_log() -> TrialLog {
        let spec = TaskSpec::default_for(TaskKind::Aggregation);
        run_trial(&mut Idle, &spec, 3).unwrap()
    }

    #[test]
    fn idle_frames_are_identical() {
        let frames = render_frames(&idle_log(), 50).unwrap();
        assert!(frames.len() > 2);
        assert!(frames.windows(2).all(|w| w[0].pixels == w[1].pixels));
    }

    #[test]
    fn png_decodes_to_same_pixels() {
        let frame = &render_frames(&idle_log(), 600).unwrap()[0];
        let png = frame.to_png();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
        let decoder = png::Decoder::new(std::io::Cursor::new(png));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (frame.width, frame.height));
        assert_eq!(&buf[..info.buffer_size()], frame.pixels.as_slice());
    }

    #[test]
    fn frame_count_is_ceiling() {
        let log = idle_log();
        let t = log.sample_ticks().len();
        for stride in [1, 7, 60, 600, t, t + 5] {
            assert_eq!(render_frames(&log, stride).unwrap().len(), t.div_ceil(stride));
        }
        assert!(matches!(render_frames(&log, 0), Err(RenderError::ZeroStride)));
    }

    #[test]
    fn empty_log_is_rejected() {
        let mut log = idle_log();
        log.records.clear();
        assert!(matches!(render_frames(&log, 1), Err(RenderError::EmptyLog)));
    }

    #[test]
    fn robots_and_target_are_drawn() {
        let spec = TaskSpec::default_for(TaskKind::Encircling);
        let log = run_trial(&mut Idle, &spec, 1).unwrap();
        let f = &render_frames(&log, 1000).unwrap()[0];
        let proj = Projection::new(spec.layout.bounds);
        let (x, y) = proj.map(log.target_at(0).unwrap());
        assert_eq!(f.pixel(x as u32, y as u32), PREY);
        let (x, y) = proj.map(log.positions_at(0)[0]);
        assert_eq!(f.pixel(x as u32, y as u32), WORKER);
        assert_eq!(f.pixel(0, 0), BACKGROUND);
    }

    #[test]
    fn ppm_encoding() {
        let f = Frame::blank(0);
        let ppm = f.to_ppm();
        assert!(ppm.starts_with(b"P6\n256 256\n255\n"));
        assert_eq!(ppm.len(), 15 + 256 * 256 * 3);
    }
}
