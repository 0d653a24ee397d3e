//! Procedural traffic-camera scenes.
//!
//! Drawing happens in `[0, 1]` RGB; the final tensor is mapped to `[−1, 1]`.
//! Scene geometry depends only on the seed, so the day and night renderings
//! of one seed show the same road, cars and precipitation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classes::{Domain, WeatherClass};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_SCENE_SIZE: usize = 8;

/// Fraction of day brightness kept at night.
pub const NIGHT_SCALE: f64 = 0.25;
/// Standard deviation of night sensor noise in the `[−1, 1]` tensor range.
pub const NIGHT_NOISE: f64 = 0.05;
/// Additive sodium-lamp cast at night.
pub const NIGHT_CAST: [f64; 3] = [0.06, 0.03, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class: WeatherClass,
    pub domain: Domain,
    pub seed: u64,
    pub size: usize,
}

type Rgb = [f64; 3];

struct Canvas {
    size: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, c: Rgb, alpha: f64) {
        if x < self.size && y < self.size {
            let p = &mut self.px[y * self.size + x];
            for (v, t) in p.iter_mut().zip(c) {
                *v = (1.0 - alpha) * *v + alpha * t;
            }
        }
    }
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

const CLEAR_SKY: (Rgb, Rgb) = ([0.30, 0.50, 0.90], [0.70, 0.82, 0.97]);
const OVERCAST_SKY: (Rgb, Rgb) = ([0.55, 0.57, 0.62], [0.72, 0.73, 0.76]);

fn draw_day(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Canvas {
    let n = spec.size;
    let s = n as f64;
    let mut canvas = Canvas {
        size: n,
        px: vec![[0.0; 3]; n * n],
    };

    // Cloud cover overlaps between classes so sky colour alone is not enough.
    let cloud = match spec.class {
        WeatherClass::NoPrecipitation => rng.random_range(0.0..0.7),
        WeatherClass::Rain => rng.random_range(0.5..1.0),
        WeatherClass::Snow => rng.random_range(0.4..1.0),
    };
    let sky_top = lerp(CLEAR_SKY.0, OVERCAST_SKY.0, cloud);
    let sky_bottom = lerp(CLEAR_SKY.1, OVERCAST_SKY.1, cloud);
    let horizon = rng.random_range(0.35..0.5);
    let center = rng.random_range(0.4..0.6);
    let half_bottom = rng.random_range(0.35..0.45);
    let half_top = 0.03;

    let (road, verge): (Rgb, Rgb) = match spec.class {
        WeatherClass::NoPrecipitation => ([0.42, 0.42, 0.44], [0.36, 0.58, 0.28]),
        WeatherClass::Rain => ([0.38, 0.38, 0.41], [0.33, 0.54, 0.26]),
        WeatherClass::Snow => ([0.58, 0.58, 0.60], [0.88, 0.90, 0.93]),
    };

    for y in 0..n {
        let fy = (y as f64 + 0.5) / s;
        for x in 0..n {
            let fx = (x as f64 + 0.5) / s;
            let c = if fy < horizon {
                lerp(sky_top, sky_bottom, fy / horizon)
            } else {
                let depth = (fy - horizon) / (1.0 - horizon);
                let half = half_top + (half_bottom - half_top) * depth;
                if (fx - center).abs() < half {
                    road
                } else {
                    lerp(
                        verge,
                        [verge[0] * 0.8, verge[1] * 0.8, verge[2] * 0.8],
                        depth,
                    )
                }
            };
            canvas.px[y * n + x] = c;
        }
    }

    // Dashed centre line in perspective.
    let phase = rng.random_range(0.0..1.0);
    for y in 0..n {
        let fy = (y as f64 + 0.5) / s;
        if fy < horizon {
            continue;
        }
        let depth = (fy - horizon) / (1.0 - horizon);
        if ((depth * 4.0 + phase).fract()) < 0.5 {
            let x = (center * s) as usize;
            canvas.blend(x, y, [0.95, 0.92, 0.7], 0.8);
        }
    }

    // Cars as boxes on the road.
    let cars = rng.random_range(0..3usize);
    for _ in 0..cars {
        let depth: f64 = rng.random_range(0.2..0.9);
        let fy = horizon + depth * (1.0 - horizon);
        let half = half_top + (half_bottom - half_top) * depth;
        let fx = center + rng.random_range(-0.6..0.6) * half;
        let w = (0.25 * depth * s).max(1.0);
        let h = (0.15 * depth * s).max(1.0);
        let color: Rgb = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let x0 = (fx * s - w / 2.0).max(0.0) as usize;
        let y0 = (fy * s - h).max(0.0) as usize;
        for y in y0..((y0 as f64 + h) as usize).min(n) {
            for x in x0..((x0 as f64 + w) as usize).min(n) {
                canvas.blend(x, y, color, 1.0);
            }
        }
    }

    let scale = s / 32.0;
    match spec.class {
        WeatherClass::NoPrecipitation => {}
        WeatherClass::Rain => {
            let count = (s * s / 12.0) as usize;
            let (dx, dy) = (0.35, 1.0);
            for _ in 0..count {
                let x0 = rng.random_range(0.0..s);
                let y0 = rng.random_range(0.0..s);
                let len = rng.random_range(3.0..6.0) * scale;
                let steps = len.ceil() as usize;
                for t in 0..steps {
                    let x = x0 + dx * t as f64;
                    let y = y0 + dy * t as f64;
                    if x < s && y < s {
                        canvas.blend(x as usize, y as usize, [0.85, 0.87, 0.92], 0.45);
                    }
                }
            }
        }
        WeatherClass::Snow => {
            let count = (s * s / 10.0) as usize;
            let flake = scale.round().max(1.0) as usize;
            for _ in 0..count {
                let x0 = rng.random_range(0..n);
                let y0 = rng.random_range(0..n);
                for y in y0..(y0 + flake) {
                    for x in x0..(x0 + flake) {
                        canvas.blend(x, y, [1.0, 1.0, 1.0], 0.85);
                    }
                }
            }
        }
    }
    canvas
}

/// Renders a `[3×size×size]` scene with values in `[−1, 1]`.
pub fn render_scene(spec: &SceneSpec) -> Result<Tensor> {
    if spec.size < MIN_SCENE_SIZE {
        return Err(Error::contract(format!(
            "render_scene: size {} is below the minimum {MIN_SCENE_SIZE}",
            spec.size
        )));
    }
    let mut geometry = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut canvas = draw_day(spec, &mut geometry);

    if spec.domain == Domain::Night {
        let mut sensor = ChaCha8Rng::seed_from_u64(spec.seed);
        sensor.set_stream(1);
        // the canvas is in [0, 1], half the tensor range
        let noise = Normal::new(0.0, NIGHT_NOISE / 2.0).expect("valid sigma");
        for p in &mut canvas.px {
            for (v, cast) in p.iter_mut().zip(NIGHT_CAST) {
                *v = NIGHT_SCALE * *v + cast + noise.sample(&mut sensor);
            }
        }
    }

    let n = spec.size;
    let mut data = vec![0.0; 3 * n * n];
    for (i, p) in canvas.px.iter().enumerate() {
        for c in 0..3 {
            data[c * n * n + i] = (2.0 * p[c] - 1.0).clamp(-1.0, 1.0);
        }
    }
    Tensor::new(&[3, n, n], data)
}
