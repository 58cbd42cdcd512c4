//! Synthetic depth scenes and on-disk datasets.
//!
//! A pinhole camera at the origin looks down `+z` with image rows growing
//! along `+y`. Every scene has a tilted ground plane and a back wall at
//! `D_MAX`, so each ray hits something. Depth is the z-buffer value (the
//! hit point's `z`), and the image is a Lambertian shading of the same hits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bnkt;
use crate::error::{config_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const D_MAX: f64 = 10.0;
pub const MIN_SIZE: usize = 32;

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalize(a: V3) -> V3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { center: V3, radius: f64, albedo: V3 },
    /// Axis-aligned box.
    Cuboid { min: V3, max: V3, albedo: V3 },
    /// Rectangle in the plane `z = const`, facing the camera.
    Panel { z: f64, x: (f64, f64), y: (f64, f64), albedo: V3 },
}

/// Ground plane `{p : normal . p = offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ground {
    pub normal: V3,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn for_size(h: usize, w: usize) -> Self {
        Self {
            focal: 0.9 * w as f64,
            cx: 0.5 * w as f64,
            cy: 0.5 * h as f64,
        }
    }

    /// Ray through the centre of pixel `(y, x)`, with unit `z` component.
    pub fn ray(&self, y: usize, x: usize) -> V3 {
        [
            (x as f64 + 0.5 - self.cx) / self.focal,
            (y as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub camera: Camera,
    pub ground: Ground,
    pub primitives: Vec<Primitive>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, 1, h, w)` in `(0, D_MAX]`.
    pub depth: Tensor<f32>,
    pub layout: SceneLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SceneOptions {
    /// Overrides the random primitive count (normally 3 to 8).
    pub primitives: Option<usize>,
}

struct Hit {
    t: f64,
    normal: V3,
    albedo: V3,
}

/// Distance along `d` (unit z) to the ground plane, if it is in front.
pub fn ground_depth(g: &Ground, d: V3) -> Option<f64> {
    let denom = dot(g.normal, d);
    (denom > 1e-12).then(|| g.offset / denom).filter(|&t| t > 0.0)
}

fn intersect(p: &Primitive, d: V3) -> Option<Hit> {
    match *p {
        Primitive::Sphere { center, radius, albedo } => {
            let a = dot(d, d);
            let b = dot(d, center);
            let c = dot(center, center) - radius * radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let t = (b - disc.sqrt()) / a;
            (t > 0.0).then(|| Hit {
                t,
                normal: normalize(sub(scale(d, t), center)),
                albedo,
            })
        }
        Primitive::Cuboid { min, max, albedo } => {
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            let mut axis = 0;
            for i in 0..3 {
                if d[i].abs() < 1e-12 {
                    if 0.0 < min[i] || 0.0 > max[i] {
                        return None;
                    }
                    continue;
                }
                let (mut a, mut b) = (min[i] / d[i], max[i] / d[i]);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                if a > t0 {
                    t0 = a;
                    axis = i;
                }
                t1 = t1.min(b);
            }
            if t0 > t1 || t0 <= 0.0 {
                return None;
            }
            let mut normal = [0.0; 3];
            normal[axis] = -d[axis].signum();
            Some(Hit { t: t0, normal, albedo })
        }
        Primitive::Panel { z, x, y, albedo } => {
            let t = z;
            let (px, py) = (d[0] * t, d[1] * t);
            (px >= x.0 && px <= x.1 && py >= y.0 && py <= y.1).then_some(Hit {
                t,
                normal: [0.0, 0.0, -1.0],
                albedo,
            })
        }
    }
}

fn random_albedo(rng: &mut ChaCha8Rng) -> V3 {
    [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)]
}

/// Seeded layout: camera height, ground tilt and primitives standing on or
/// above the ground.
pub fn layout(seed: u64, h: usize, w: usize, opts: SceneOptions) -> SceneLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera::for_size(h, w);
    let height = rng.gen_range(1.0..1.8);
    let pitch: f64 = rng.gen_range(0.05..0.3);
    let roll: f64 = rng.gen_range(-0.1..0.1);
    let normal = normalize([roll.sin(), pitch.cos(), pitch.sin()]);
    let ground = Ground { normal, offset: height };

    let count = opts.primitives.unwrap_or_else(|| rng.gen_range(3..=8));
    let half_fov = 0.5 * w as f64 / camera.focal;
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let z = rng.gen_range(2.5..8.5);
        let x = rng.gen_range(-0.8..0.8) * half_fov * z;
        // Height of the ground below (x, z): n . (x, y, z) = offset.
        let floor_y = (height - normal[0] * x - normal[2] * z) / normal[1];
        let albedo = random_albedo(&mut rng);
        let p = match rng.gen_range(0..3) {
            0 => {
                let radius = rng.gen_range(0.3..1.0);
                let lift = rng.gen_range(0.0..0.5);
                Primitive::Sphere {
                    center: [x, floor_y - radius - lift, z],
                    radius,
                    albedo,
                }
            }
            1 => {
                let (sx, sy, sz) = (rng.gen_range(0.3..1.2), rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.2));
                Primitive::Cuboid {
                    min: [x - sx / 2.0, floor_y - sy, z - sz / 2.0],
                    max: [x + sx / 2.0, floor_y, z + sz / 2.0],
                    albedo,
                }
            }
            _ => {
                let (sx, sy) = (rng.gen_range(0.4..1.5), rng.gen_range(0.4..2.0));
                Primitive::Panel {
                    z,
                    x: (x - sx / 2.0, x + sx / 2.0),
                    y: (floor_y - sy, floor_y),
                    albedo,
                }
            }
        };
        primitives.push(p);
    }
    SceneLayout {
        camera,
        ground,
        primitives,
    }
}

const LIGHT: V3 = [0.8, -1.5, 0.0];

fn shade(hit: &Hit, d: V3) -> V3 {
    let p = scale(d, hit.t);
    let to_light = sub(LIGHT, p);
    let dist2 = dot(to_light, to_light);
    let lambert = dot(hit.normal, normalize(to_light)).max(0.0);
    let falloff = 20.0 / (20.0 + dist2);
    let k = 0.15 + 0.85 * lambert * falloff;
    hit.albedo.map(|a| (a * k).clamp(0.0, 1.0))
}

fn checker(p: V3) -> V3 {
    let cell = ((p[0] / 0.6).floor() + (p[2] / 0.6).floor()) as i64;
    if cell.rem_euclid(2) == 0 {
        [0.75, 0.7, 0.6]
    } else {
        [0.35, 0.35, 0.4]
    }
}

/// Render a layout: nearest hit among ground, back wall and primitives.
pub fn render(l: &SceneLayout, h: usize, w: usize) -> (Tensor<f32>, Tensor<f32>) {
    let mut image = vec![0f32; 3 * h * w];
    let mut depth = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = l.camera.ray(y, x);
            let mut best = Hit {
                t: D_MAX,
                normal: [0.0, 0.0, -1.0],
                albedo: [0.55, 0.6, 0.7],
            };
            if let Some(t) = ground_depth(&l.ground, d).filter(|&t| t < best.t) {
                best = Hit {
                    t,
                    normal: scale(l.ground.normal, -1.0),
                    albedo: checker(scale(d, t)),
                };
            }
            for p in &l.primitives {
                if let Some(hit) = intersect(p, d).filter(|hit| hit.t < best.t) {
                    best = hit;
                }
            }
            let rgb = shade(&best, d);
            for (c, v) in rgb.iter().enumerate() {
                image[(c * h + y) * w + x] = *v as f32;
            }
            depth[y * w + x] = best.t as f32;
        }
    }
    (
        Tensor::from_vec(Shape { n: 1, c: 3, h, w }, image).expect("sized"),
        Tensor::from_vec(Shape { n: 1, c: 1, h, w }, depth).expect("sized"),
    )
}

pub fn gen_scene_with(seed: u64, h: usize, w: usize, opts: SceneOptions) -> Result<SyntheticScene> {
    if h < MIN_SIZE || w < MIN_SIZE {
        return Err(config_err!("scenes must be at least {MIN_SIZE}x{MIN_SIZE}, got {h}x{w}"));
    }
    let layout = layout(seed, h, w, opts);
    let (image, depth) = render(&layout, h, w);
    Ok(SyntheticScene {
        seed,
        image,
        depth,
        layout,
    })
}

pub fn gen_scene(seed: u64, h: usize, w: usize) -> Result<SyntheticScene> {
    gen_scene_with(seed, h, w, SceneOptions::default())
}

/// Image/depth pairs held in memory, each `(1, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub depths: Vec<Tensor<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn generate(seeds: std::ops::Range<u64>, h: usize, w: usize) -> Result<Self> {
        let mut images = Vec::new();
        let mut depths = Vec::new();
        for s in seeds {
            let scene = gen_scene(s, h, w)?;
            images.push(scene.image.cast());
            depths.push(scene.depth.cast());
        }
        Ok(Self { images, depths })
    }

    /// Stacks the items at `idx` into one batch.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let imgs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.images[i]).collect();
        let deps: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.depths[i]).collect();
        Ok((Tensor::stack(&imgs)?, Tensor::stack(&deps)?))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.iter().map(Tensor::cast).collect(),
            depths: self.depths.iter().map(Tensor::cast).collect(),
        }
    }
}

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: String,
    pub seeds: std::ops::Range<u64>,
    pub size: (usize, usize),
    /// `(image, depth)` file names relative to the manifest directory.
    pub entries: Vec<(String, String)>,
}

impl DatasetManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "split={}", self.split).unwrap();
        writeln!(s, "seeds={}..{}", self.seeds.start, self.seeds.end).unwrap();
        writeln!(s, "size={}x{}", self.size.0, self.size.1).unwrap();
        for (i, d) in &self.entries {
            writeln!(s, "image={i} depth={d}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Parse {
            offset: 0,
            message: format!("bad manifest line {line:?}"),
        };
        let mut split = None;
        let mut seeds = None;
        let mut size = None;
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(v) = line.strip_prefix("split=") {
                split = Some(v.to_string());
            } else if let Some(v) = line.strip_prefix("seeds=") {
                let (a, b) = v.split_once("..").ok_or_else(|| bad(line))?;
                seeds = Some(a.parse().map_err(|_| bad(line))?..b.parse().map_err(|_| bad(line))?);
            } else if let Some(v) = line.strip_prefix("size=") {
                let (a, b) = v.split_once('x').ok_or_else(|| bad(line))?;
                size = Some((a.parse().map_err(|_| bad(line))?, b.parse().map_err(|_| bad(line))?));
            } else if let Some(v) = line.strip_prefix("image=") {
                let (img, dep) = v.split_once(" depth=").ok_or_else(|| bad(line))?;
                entries.push((img.to_string(), dep.to_string()));
            } else {
                return Err(bad(line));
            }
        }
        Ok(Self {
            split: split.ok_or_else(|| bad("split"))?,
            seeds: seeds.ok_or_else(|| bad("seeds"))?,
            size: size.ok_or_else(|| bad("size"))?,
            entries,
        })
    }
}

pub fn scene_file_names(seed: u64) -> (String, String) {
    (format!("scene_{seed}_image.bnkt"), format!("scene_{seed}_depth.bnkt"))
}

/// Writes one scene pair per seed plus the manifest into `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    split: &str,
    seeds: std::ops::Range<u64>,
    h: usize,
    w: usize,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for seed in seeds.clone() {
        let scene = gen_scene(seed, h, w)?;
        let (img, dep) = scene_file_names(seed);
        bnkt::write_tensor(dir.join(&img), &scene.image)?;
        bnkt::write_tensor(dir.join(&dep), &scene.depth)?;
        entries.push((img, dep));
    }
    let manifest = DatasetManifest {
        split: split.to_string(),
        seeds,
        size: (h, w),
        entries,
    };
    fs::write(dir.join(MANIFEST), manifest.render())?;
    Ok(manifest)
}

pub fn read_dataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Dataset<T>)> {
    let dir: PathBuf = dir.as_ref().into();
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| config_err!("cannot read {}: {e}", dir.join(MANIFEST).display()))?;
    let manifest = DatasetManifest::parse(&text)?;
    if manifest.entries.is_empty() {
        return Err(config_err!("dataset {} is empty", dir.display()));
    }
    let mut images = Vec::new();
    let mut depths = Vec::new();
    for (img, dep) in &manifest.entries {
        let image: Tensor<T> = bnkt::read_tensor(dir.join(img))?;
        let depth: Tensor<T> = bnkt::read_tensor(dir.join(dep))?;
        let (si, sd) = (image.shape(), depth.shape());
        if si.n != 1 || si.c != 3 || sd.n != 1 || sd.c != 1 || si.spatial() != sd.spatial() {
            return Err(config_err!("{img}/{dep}: unexpected shapes {si:?} and {sd:?}"));
        }
        images.push(image);
        depths.push(depth);
    }
    Ok((manifest, Dataset { images, depths }))
}
