//! Synthetic scenes with known flows, matching feature maps and corrupted
//! initial flows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor_io::{FeatureMap, FlowField, Image, Planar, Planes};

/// Seed behind every default fixture.
pub const DEFAULT_SEED: u64 = 20240;
/// Lattice spacing of the value-noise texture, in pixels.
pub const TEXTURE_SPACING: f64 = 4.0;
/// Channel count of content-identity features.
pub const CONTENT_CHANNELS: usize = 128;
/// Norm of each content-identity code.
pub const CONTENT_AMPLITUDE: f64 = 15.0;
pub const ONEHOT_AMPLITUDE: f64 = 20.0;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash(parts: &[u64]) -> u64 {
    parts.iter().fold(0x51_7cc1_b727_220a, |acc, &p| mix(acc ^ p))
}

/// Smooth seeded value noise in `[0, 1]`, defined on the whole plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Texture {
    pub seed: u64,
    pub layer: u64,
}

impl Texture {
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / TEXTURE_SPACING, y / TEXTURE_SPACING);
        let (x0, y0) = (gx.floor(), gy.floor());
        let (fx, fy) = (smooth(gx - x0), smooth(gy - y0));
        let lattice = |i: f64, j: f64| {
            let h = hash(&[self.seed, self.layer, c as u64, i as i64 as u64, j as i64 as u64]);
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        let top = lattice(x0, y0) * (1.0 - fx) + lattice(x0 + 1.0, y0) * fx;
        let bottom = lattice(x0, y0 + 1.0) * (1.0 - fx) + lattice(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Axis-aligned pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Rect {
        Rect { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn dilated(&self, by: f64) -> Rect {
        Rect { x: self.x - by, y: self.y - by, width: self.width + 2.0 * by, height: self.height + 2.0 * by }
    }

    /// Same rectangle measured on a grid downscaled by `2^scale_exponent`.
    pub fn scaled_down(&self, scale_exponent: u8) -> Rect {
        let s = (1u32 << scale_exponent) as f64;
        Rect { x: self.x / s, y: self.y / s, width: self.width / s, height: self.height / s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneKind {
    /// The whole frame translates by `displacement`.
    Translation { displacement: (f64, f64) },
    /// A textured square over a static textured background.
    MovingSquare { square0: Rect, displacement: (f64, f64) },
}

/// Two frames, the ground-truth midpoint frame and the exact flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub i0: Image,
    pub i1: Image,
    pub igt: Image,
    pub flow01: FlowField,
    pub ft0: FlowField,
    pub ft1: FlowField,
    pub t: f64,
    pub kind: SceneKind,
    pub seed: u64,
}

fn render(h: usize, w: usize, f: impl Fn(usize, f64, f64) -> f64) -> Result<Image> {
    Image::from_fn(3, h, w, |c, y, x| f(c, x as f64, y as f64))
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        Err(Error::InvalidDimensions(format!("scene size {h}x{w}")))
    } else {
        Ok(())
    }
}

/// A frame-filling texture translated by `displacement`, midpoint at
/// `t = 0.5`. There is no occlusion: content leaving the frame is still
/// defined beyond the border.
pub fn translation_scene(height: usize, width: usize, displacement: (f64, f64), seed: u64) -> Result<Scene> {
    check_size(height, width)?;
    let tex = Texture { seed, layer: 0 };
    let (dx, dy) = displacement;
    let at = |s: f64| render(height, width, |c, x, y| tex.sample(c, x - s * dx, y - s * dy));
    Ok(Scene {
        i0: at(0.0)?,
        i1: at(1.0)?,
        igt: at(0.5)?,
        flow01: FlowField::constant(height, width, dx, dy)?,
        ft0: FlowField::constant(height, width, -0.5 * dx, -0.5 * dy)?,
        ft1: FlowField::constant(height, width, 0.5 * dx, 0.5 * dy)?,
        t: 0.5,
        kind: SceneKind::Translation { displacement },
        seed,
    })
}

/// A `square`-pixel textured square moving by `displacement` over a static
/// background. The square is placed so that its midpoint position is
/// centred in the frame.
pub fn moving_square(
    height: usize,
    width: usize,
    square: usize,
    displacement: (f64, f64),
    seed: u64,
) -> Result<Scene> {
    check_size(height, width)?;
    if square == 0 || square > height.min(width) {
        return Err(Error::InvalidParameter(format!("square size {square} for a {height}x{width} frame")));
    }
    let (dx, dy) = displacement;
    let s = square as f64;
    let square0 = Rect {
        x: ((width as f64 - s - dx) / 2.0).round(),
        y: ((height as f64 - s - dy) / 2.0).round(),
        width: s,
        height: s,
    };
    let background = Texture { seed, layer: 0 };
    let foreground = Texture { seed, layer: 1 };
    let at = |step: f64| {
        let r = square0.translated(step * dx, step * dy);
        render(height, width, |c, x, y| {
            if r.contains(x, y) {
                foreground.sample(c, x - r.x, y - r.y)
            } else {
                background.sample(c, x, y)
            }
        })
    };
    let mid = square0.translated(0.5 * dx, 0.5 * dy);
    let inside = |r: Rect, k: f64| {
        FlowField::from_fn(height, width, |y, x| if r.contains(x as f64, y as f64) { (k * dx, k * dy) } else { (0.0, 0.0) })
    };
    Ok(Scene {
        i0: at(0.0)?,
        i1: at(1.0)?,
        igt: at(0.5)?,
        flow01: inside(square0, 1.0)?,
        ft0: inside(mid, -0.5)?,
        ft1: inside(mid, 0.5)?,
        t: 0.5,
        kind: SceneKind::MovingSquare { square0, displacement },
        seed,
    })
}

impl Scene {
    pub fn height(&self) -> usize {
        self.i0.height()
    }

    pub fn width(&self) -> usize {
        self.i0.width()
    }

    /// Square position at time `s` (moving-square scenes only).
    pub fn square_at(&self, s: f64) -> Option<Rect> {
        match self.kind {
            SceneKind::MovingSquare { square0, displacement: (dx, dy) } => Some(square0.translated(s * dx, s * dy)),
            SceneKind::Translation { .. } => None,
        }
    }

    fn content_id(&self, frame: f64, x: f64, y: f64, cell: f64) -> u64 {
        match self.kind {
            SceneKind::Translation { displacement: (dx, dy) } => {
                let (cx, cy) = ((x - frame * dx) / cell, (y - frame * dy) / cell);
                hash(&[0, cx.floor() as i64 as u64, cy.floor() as i64 as u64])
            }
            SceneKind::MovingSquare { .. } => {
                let r = self.square_at(frame).expect("moving square");
                if r.contains(x, y) {
                    hash(&[1, ((x - r.x) / cell).floor() as u64, ((y - r.y) / cell).floor() as u64])
                } else {
                    hash(&[0, (x / cell).floor() as u64, (y / cell).floor() as u64])
                }
            }
        }
    }

    /// Feature maps on the grid downscaled by `2^scale_exponent` where every
    /// cell carries a random code identifying the scene content under its
    /// centre. Content visible in both frames gets the same code; content
    /// visible in one frame only has no counterpart.
    pub fn content_features(&self, scale_exponent: u8, channels: usize, amplitude: f64) -> Result<(FeatureMap, FeatureMap)> {
        let cell = (1u32 << scale_exponent) as f64;
        let (gh, gw) = (self.height() >> scale_exponent, self.width() >> scale_exponent);
        if gh == 0 || gw == 0 || channels == 0 {
            return Err(Error::InvalidDimensions(format!("feature grid {gh}x{gw}x{channels}")));
        }
        let build = |frame: f64| -> Result<FeatureMap> {
            let mut data = vec![0.0; channels * gh * gw];
            for gy in 0..gh {
                for gx in 0..gw {
                    let (x, y) = ((gx as f64 + 0.5) * cell - 0.5, (gy as f64 + 0.5) * cell - 0.5);
                    let code = unit_code(hash(&[self.seed, self.content_id(frame, x, y, cell)]), channels, amplitude);
                    for (c, v) in code.into_iter().enumerate() {
                        data[(c * gh + gy) * gw + gx] = v;
                    }
                }
            }
            Ok(FeatureMap::new(Planes::new(channels, gh, gw, data)?, scale_exponent))
        };
        Ok((build(0.0)?, build(1.0)?))
    }
}

fn unit_code(seed: u64, channels: usize, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..channels).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|a| a * amplitude / norm).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositionalMode {
    /// Orthogonal per-position codes; needs `channels >= height * width`.
    OneHot,
    /// Sinusoids of seeded integer frequencies, periodic on the grid.
    Fourier,
}

/// Position-code feature pair: the second map is the first rolled
/// circularly by `roll`, so position `p` of the first matches `p + roll`
/// (wrapped) of the second. Returns the maps and the wrapped ground-truth
/// displacement of every cell.
pub fn positional_features(
    height: usize,
    width: usize,
    mode: PositionalMode,
    channels: usize,
    roll: (i64, i64),
    scale_exponent: u8,
) -> Result<(FeatureMap, FeatureMap, FlowField)> {
    check_size(height, width)?;
    let codes: Vec<Vec<f64>> = match mode {
        PositionalMode::OneHot => {
            if channels < height * width {
                return Err(Error::InvalidParameter(format!(
                    "one-hot codes need {} channels, got {channels}",
                    height * width
                )));
            }
            (0..height * width)
                .map(|p| {
                    let mut v = vec![0.0; channels];
                    v[p] = ONEHOT_AMPLITUDE;
                    v
                })
                .collect()
        }
        PositionalMode::Fourier => {
            if channels < 2 || channels % 2 != 0 {
                return Err(Error::InvalidParameter(format!("fourier codes need an even channel count, got {channels}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
            let freqs: Vec<(f64, f64)> = (0..channels / 2)
                .map(|_| {
                    let kx = rng.gen_range(0..width) as f64;
                    let ky = rng.gen_range(0..height) as f64;
                    (std::f64::consts::TAU * kx / width as f64, std::f64::consts::TAU * ky / height as f64)
                })
                .collect();
            (0..height * width)
                .map(|p| {
                    let (x, y) = ((p % width) as f64, (p / width) as f64);
                    freqs.iter().flat_map(|(wx, wy)| {
                        let phase = wx * x + wy * y;
                        [phase.cos(), phase.sin()]
                    }).collect()
                })
                .collect()
        }
    };
    let (h, w) = (height as i64, width as i64);
    let a0 = Planes::from_fn(channels, height, width, |c, y, x| codes[y * width + x][c])?;
    let a1 = Planes::from_fn(channels, height, width, |c, y, x| {
        let sx = (x as i64 - roll.0).rem_euclid(w) as usize;
        let sy = (y as i64 - roll.1).rem_euclid(h) as usize;
        codes[sy * width + sx][c]
    })?;
    let gt = FlowField::from_fn(height, width, |y, x| {
        let tx = (x as i64 + roll.0).rem_euclid(w);
        let ty = (y as i64 + roll.1).rem_euclid(h);
        ((tx - x as i64) as f64, (ty - y as i64) as f64)
    })?;
    Ok((FeatureMap::new(a0, scale_exponent), FeatureMap::new(a1, scale_exponent), gt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    Zero,
    /// Adds independent `N(0, sigma^2)` noise to both components.
    Noise { sigma: f64 },
}

/// Replaces (or perturbs) the flow on pixels whose centre lies in `region`.
pub fn corrupt_flow(flow: &FlowField, region: Rect, mode: Corruption, seed: u64) -> Result<FlowField> {
    let normal = match mode {
        Corruption::Noise { sigma } => Some(
            Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(format!("noise sigma {sigma}: {e}")))?,
        ),
        Corruption::Zero => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (flow.height(), flow.width());
    let (mut u, mut v) = (flow.u().to_vec(), flow.v().to_vec());
    for i in 0..h * w {
        if !region.contains((i % w) as f64, (i / w) as f64) {
            continue;
        }
        match &normal {
            None => {
                u[i] = 0.0;
                v[i] = 0.0;
            }
            Some(n) => {
                u[i] += n.sample(&mut rng);
                v[i] += n.sample(&mut rng);
            }
        }
    }
    FlowField::from_uv(h, w, u, v)
}

/// Everything the pipeline consumes, plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub scene: Scene,
    pub ft0_init: FlowField,
    pub ft1_init: FlowField,
    pub a0: FeatureMap,
    pub a1: FeatureMap,
}

pub const FIXTURE_SIZE: usize = 128;
pub const FIXTURE_SQUARE: usize = 40;
pub const FIXTURE_DISPLACEMENT: (f64, f64) = (40.0, 0.0);
pub const FIXTURE_SCALE: u8 = 2;

/// The moving-square fixture: 128x128 frames, a 40 px square moving 40 px
/// right, features on the 32x32 grid, and initial flows that miss the
/// square's motion entirely (zeroed inside the midpoint square).
pub fn moving_square_fixture(seed: u64) -> Result<Fixture> {
    let scene = moving_square(FIXTURE_SIZE, FIXTURE_SIZE, FIXTURE_SQUARE, FIXTURE_DISPLACEMENT, seed)?;
    let mid = scene.square_at(0.5).expect("moving square");
    let ft0_init = corrupt_flow(&scene.ft0, mid, Corruption::Zero, seed)?;
    let ft1_init = corrupt_flow(&scene.ft1, mid, Corruption::Zero, seed)?;
    let (a0, a1) = scene.content_features(FIXTURE_SCALE, CONTENT_CHANNELS, CONTENT_AMPLITUDE)?;
    Ok(Fixture { scene, ft0_init, ft1_init, a0, a1 })
}

/// A fixture whose initial flows are the exact ones.
pub fn exact_fixture(scene: Scene, scale_exponent: u8) -> Result<Fixture> {
    let (a0, a1) = scene.content_features(scale_exponent, CONTENT_CHANNELS, CONTENT_AMPLITUDE)?;
    Ok(Fixture { ft0_init: scene.ft0.clone(), ft1_init: scene.ft1.clone(), scene, a0, a1 })
}
