use std::f64::consts::PI;

use crate::image::ImageTensor;
use crate::rng::Stream;

use super::SceneKind;

/// Checkerboard with `cells` squares per side alternating between `lo` and `hi`.
pub fn checkerboard(size: usize, cells: usize, lo: f32, hi: f32) -> ImageTensor {
    let cells = cells.max(1);
    ImageTensor::from_fn(1, size, size, |_, y, x| {
        if (y * cells / size + x * cells / size) % 2 == 0 {
            hi
        } else {
            lo
        }
    })
}

fn two_levels(rng: &mut Stream) -> (f64, f64) {
    let a = rng.uniform(-0.9, 0.9);
    let mut b = rng.uniform(-0.9, 0.9);
    if (a - b).abs() < 0.6 {
        b = if a > 0.0 { a - 0.9 } else { a + 0.9 };
    }
    (a, b)
}

/// Per-pixel coverage of a half plane `n . p <= d` with a one-pixel soft edge.
fn edge_coverage(dist: f64) -> f64 {
    (0.5 - dist).clamp(0.0, 1.0)
}

struct Canvas {
    size: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(size: usize, v: f64) -> Self {
        Canvas { size, data: vec![v; size * size] }
    }

    /// Blends `v` in with per-pixel coverage `f(x, y)` at pixel centres.
    fn paint(&mut self, v: f64, f: impl Fn(f64, f64) -> f64) {
        for y in 0..self.size {
            for x in 0..self.size {
                let a = f(x as f64, y as f64);
                let p = &mut self.data[y * self.size + x];
                *p = (1.0 - a) * *p + a * v;
            }
        }
    }

    fn line(&mut self, rng: &mut Stream, v: f64) {
        let s = self.size as f64;
        let (px, py) = (rng.uniform(0.2 * s, 0.8 * s), rng.uniform(0.2 * s, 0.8 * s));
        let th = rng.uniform(0.0, PI);
        let half = rng.uniform(0.6, 1.4);
        let (nx, ny) = (-th.sin(), th.cos());
        self.paint(v, |x, y| edge_coverage(((x - px) * nx + (y - py) * ny).abs() - half));
    }

    fn polygon(&mut self, rng: &mut Stream, v: f64) {
        let s = self.size as f64;
        let (cx, cy) = (rng.uniform(0.2 * s, 0.8 * s), rng.uniform(0.2 * s, 0.8 * s));
        let radius = rng.uniform(0.15 * s, 0.35 * s);
        let sides = rng.int(3, 6);
        let rot = rng.uniform(0.0, 2.0 * PI);
        let apothem = radius * (PI / sides as f64).cos();
        let normals: Vec<(f64, f64)> = (0..sides)
            .map(|k| {
                let a = rot + 2.0 * PI * (k as f64 + 0.5) / sides as f64;
                (a.cos(), a.sin())
            })
            .collect();
        self.paint(v, |x, y| {
            let out = normals.iter().map(|(nx, ny)| (x - cx) * nx + (y - cy) * ny - apothem).fold(f64::MIN, f64::max);
            edge_coverage(out)
        });
    }

    fn gradient(&mut self, rng: &mut Stream, lo: f64, hi: f64) {
        let th = rng.uniform(0.0, 2.0 * PI);
        let (dx, dy) = (th.cos(), th.sin());
        let proj: Vec<f64> = (0..self.size * self.size)
            .map(|i| (i % self.size) as f64 * dx + (i / self.size) as f64 * dy)
            .collect();
        let (mn, mx) = proj.iter().fold((f64::MAX, f64::MIN), |(a, b), &p| (a.min(p), b.max(p)));
        for (d, p) in self.data.iter_mut().zip(proj) {
            *d = lo + (hi - lo) * (p - mn) / (mx - mn);
        }
    }
}

fn render(seed: u64, kind: SceneKind, size: usize) -> Vec<f64> {
    let mut rng = Stream::new(seed);
    match kind {
        SceneKind::Checkerboard => {
            let cells = rng.int(3, 6);
            let (a, b) = two_levels(&mut rng);
            checkerboard(size, cells, a as f32, b as f32).data().iter().map(|&v| v as f64).collect()
        }
        SceneKind::RandomLines => {
            let (bg, fg) = two_levels(&mut rng);
            let mut c = Canvas::new(size, bg);
            for _ in 0..rng.int(4, 8) {
                let jitter = rng.uniform(-0.1, 0.1);
                c.line(&mut rng, (fg + jitter).clamp(-1.0, 1.0));
            }
            c.data
        }
        SceneKind::Polygons => {
            let mut c = Canvas::new(size, rng.uniform(-0.8, 0.8));
            for _ in 0..rng.int(2, 4) {
                let v = rng.uniform(-0.95, 0.95);
                c.polygon(&mut rng, v);
            }
            c.data
        }
        SceneKind::Gradient => {
            let mut c = Canvas::new(size, 0.0);
            c.gradient(&mut rng, -0.95, 0.95);
            c.data
        }
        SceneKind::Mixed => {
            let mut c = Canvas::new(size, 0.0);
            let base = rng.uniform(-0.5, 0.3);
            c.gradient(&mut rng, base - 0.3, base + 0.3);
            let v = rng.uniform(-0.9, 0.9);
            c.polygon(&mut rng, v);
            for _ in 0..rng.int(2, 4) {
                let v = if rng.uniform(0.0, 1.0) < 0.5 { rng.uniform(-1.0, -0.5) } else { rng.uniform(0.5, 1.0) };
                c.line(&mut rng, v);
            }
            c.data
        }
    }
}

/// Deterministic scene of the given kind. Colour scenes tint the grey
/// pattern with a per-channel affine shift.
pub fn gen_scene(seed: u64, kind: SceneKind, size: usize, channels: usize) -> ImageTensor {
    let grey = render(seed, kind, size);
    let mut tint = Stream::new(seed ^ 0x7469_6e74);
    let shifts: Vec<(f64, f64)> = (0..channels)
        .map(|c| if c == 0 && channels == 1 { (1.0, 0.0) } else { (tint.uniform(0.8, 1.0), tint.uniform(-0.1, 0.1)) })
        .collect();
    ImageTensor::from_fn(channels, size, size, |c, y, x| {
        let (g, b) = shifts[c];
        (g * grey[y * size + x] + b).clamp(-1.0, 1.0) as f32
    })
}
