use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::caption::Caption;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Side of the square bounding box every object occupies, in pixels.
pub const OBJECT_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    Orange,
    Purple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Black,
    White,
    Noise,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether local pixel `(x, y)` of the bounding box is covered.
    fn covers(self, x: usize, y: usize) -> bool {
        let s = OBJECT_SIZE as f64;
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        match self {
            Shape::Square => true,
            Shape::Circle => (fx - s / 2.0).powi(2) + (fy - s / 2.0).powi(2) <= (s / 2.0).powi(2),
            // Apex up, base on the bottom row.
            Shape::Triangle => (fx - s / 2.0).abs() <= fy / 2.0,
        }
    }
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Cyan,
        Color::Magenta,
        Color::Orange,
        Color::Purple,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
            Color::Orange => "orange",
            Color::Purple => "purple",
        }
    }

    /// RGB in `[0, 1]`; every component is a multiple of 1/255 so frames
    /// survive 8-bit storage exactly.
    pub fn rgb(self) -> [f32; 3] {
        let half = 128.0 / 255.0;
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Cyan => [0.0, 1.0, 1.0],
            Color::Magenta => [1.0, 0.0, 1.0],
            Color::Orange => [1.0, half, 0.0],
            Color::Purple => [half, 0.0, 1.0],
        }
    }
}

impl Motion {
    pub const ALL: [Motion; 5] = [Motion::Left, Motion::Right, Motion::Up, Motion::Down, Motion::Static];

    pub fn word(self) -> &'static str {
        match self {
            Motion::Left => "left",
            Motion::Right => "right",
            Motion::Up => "up",
            Motion::Down => "down",
            Motion::Static => "static",
        }
    }

    /// Unit displacement per frame as `(dx, dy)`, image y pointing down.
    pub fn direction(self) -> (i64, i64) {
        match self {
            Motion::Left => (-1, 0),
            Motion::Right => (1, 0),
            Motion::Up => (0, -1),
            Motion::Down => (0, 1),
            Motion::Static => (0, 0),
        }
    }
}

impl Background {
    pub const ALL: [Background; 3] = [Background::Black, Background::White, Background::Noise];

    pub fn word(self) -> &'static str {
        match self {
            Background::Black => "black",
            Background::White => "white",
            Background::Noise => "noise",
        }
    }
}

/// Everything that determines a clip apart from its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    pub motion: Motion,
    /// Pixels per frame: 0 when static, 1 or 2 otherwise.
    pub speed: usize,
    pub background: Background,
}

impl SceneSpec {
    /// Moving at speed 1 on black: the plain "a red circle moving left" form.
    pub fn simple(shape: Shape, color: Color, motion: Motion) -> Self {
        let speed = if motion == Motion::Static { 0 } else { 1 };
        Self {
            shape,
            color,
            motion,
            speed,
            background: Background::Black,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.motion, self.speed) {
            (Motion::Static, 0) | (Motion::Left | Motion::Right | Motion::Up | Motion::Down, 1 | 2) => Ok(()),
            (m, s) => Err(Error::Spec(format!("speed {s} is not allowed for motion `{}`", m.word()))),
        }
    }

    /// Every valid spec, in a fixed order.
    pub fn all() -> Vec<SceneSpec> {
        let mut out = Vec::new();
        for shape in Shape::ALL {
            for color in Color::ALL {
                for motion in Motion::ALL {
                    let speeds: &[usize] = if motion == Motion::Static { &[0] } else { &[1, 2] };
                    for &speed in speeds {
                        for background in Background::ALL {
                            out.push(SceneSpec {
                                shape,
                                color,
                                motion,
                                speed,
                                background,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// A rendered clip with its ground truth.
#[derive(Debug, Clone)]
pub struct Video {
    pub spec: SceneSpec,
    pub seed: u64,
    /// `[L, 3, H, W]`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub caption: Caption,
    /// Top-left corner of the object's box per frame, `(x, y)`.
    pub positions: Vec<(usize, usize)>,
}

impl Video {
    pub fn frames(&self) -> usize {
        self.pixels.dim(0)
    }

    /// Ground-truth object mask of frame `i`, row-major `H x W`.
    pub fn mask(&self, i: usize) -> Vec<bool> {
        let (h, w) = (self.pixels.dim(2), self.pixels.dim(3));
        object_mask(self.spec.shape, self.positions[i], h, w)
    }
}

pub fn object_mask(shape: Shape, pos: (usize, usize), h: usize, w: usize) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for y in 0..OBJECT_SIZE {
        for x in 0..OBJECT_SIZE {
            let (px, py) = (pos.0 + x, pos.1 + y);
            if px < w && py < h && shape.covers(x, y) {
                m[py * w + px] = true;
            }
        }
    }
    m
}

/// Renders `spec` as an `L x 3 x H x W` clip. The start position (and the
/// noise background) are drawn from `seed`.
pub fn synth_video(spec: &SceneSpec, l: usize, h: usize, w: usize, seed: u64) -> Result<Video> {
    spec.validate()?;
    if l == 0 {
        return Err(Error::Spec("clip needs at least one frame".into()));
    }
    let (dx, dy) = spec.motion.direction();
    let travel = spec.speed * (l - 1);
    let span_x = (if dx != 0 { travel } else { 0 }) + OBJECT_SIZE;
    let span_y = (if dy != 0 { travel } else { 0 }) + OBJECT_SIZE;
    if span_x > w || span_y > h {
        return Err(Error::Spec(format!(
            "object of size {OBJECT_SIZE} moving {} px over {l} frames leaves a {h}x{w} canvas",
            travel
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ox = rng.gen_range(0..=w - span_x);
    let oy = rng.gen_range(0..=h - span_y);
    // Start at the far side of the travel range so motion stays inside.
    let start = (
        if dx < 0 { ox + travel } else { ox },
        if dy < 0 { oy + travel } else { oy },
    );
    let plane = h * w;
    let mut background = vec![0f32; 3 * plane];
    match spec.background {
        Background::Black => {}
        Background::White => background.fill(1.0),
        Background::Noise => {
            for v in background.iter_mut() {
                *v = rng.gen_range(0u32..256) as f32 / 255.0;
            }
        }
    }
    let rgb = spec.color.rgb();
    let mut data = Vec::with_capacity(l * 3 * plane);
    let mut positions = Vec::with_capacity(l);
    for i in 0..l {
        let step = (spec.speed * i) as i64;
        let pos = (
            (start.0 as i64 + dx * step) as usize,
            (start.1 as i64 + dy * step) as usize,
        );
        positions.push(pos);
        let mask = object_mask(spec.shape, pos, h, w);
        let mut frame = background.clone();
        for (j, &on) in mask.iter().enumerate() {
            if on {
                for c in 0..3 {
                    frame[c * plane + j] = rgb[c];
                }
            }
        }
        data.extend(frame);
    }
    Ok(Video {
        spec: *spec,
        seed,
        pixels: Tensor::from_vec(data, &[l, 3, h, w])?,
        caption: Caption::from_spec(spec)?,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_frames_identical() {
        let spec = SceneSpec::simple(Shape::Circle, Color::Red, Motion::Static);
        let v = synth_video(&spec, 4, 32, 32, 3).unwrap();
        let d = v.pixels.to_vec();
        let n = 3 * 32 * 32;
        for i in 1..4 {
            assert_eq!(&d[..n], &d[i * n..(i + 1) * n]);
        }
    }

    #[test]
    fn exit_rejected() {
        let spec = SceneSpec {
            speed: 2,
            ..SceneSpec::simple(Shape::Square, Color::Blue, Motion::Right)
        };
        assert!(matches!(synth_video(&spec, 16, 32, 32, 0), Err(Error::Spec(_))));
        assert!(synth_video(&spec, 8, 32, 32, 0).is_ok());
    }

    #[test]
    fn shapes_have_distinct_masks() {
        let areas: Vec<usize> = Shape::ALL
            .iter()
            .map(|&s| object_mask(s, (0, 0), 8, 8).iter().filter(|&&b| b).count())
            .collect();
        assert_eq!(areas[1], 64);
        assert!(areas[0] < 64 && areas[2] < areas[0]);
    }
}
