//! Deterministic synthetic scenes: wavy bands of textured stuff behind
//! limbed blobs of things, with label and instance maps.

use std::f64::consts::TAU;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::index::{ExemplarLibrary, ExemplarRecord};
use crate::io::{write_instances, write_labels};
use crate::raster::{InstanceMap, LabelMap};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySpec {
    pub scenes: u32,
    pub categories: u16,
    /// Square side in pixels.
    pub size: u32,
    pub seed: u64,
    /// Number of disjoint category groups; scene `i` draws only from
    /// group `i % cliques`.
    pub cliques: Option<u16>,
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 || self.categories == 0 || self.size < 8 {
            return invalid("toy datasets need >= 1 scene, >= 1 category and size >= 8");
        }
        if self.categories >= crate::raster::MAX_CATEGORIES {
            return invalid("too many categories");
        }
        if let Some(q) = self.cliques {
            if q == 0 || q > self.categories {
                return invalid(format!("{q} cliques cannot partition {} categories", self.categories));
            }
        }
        Ok(())
    }

    /// (stuff, things) category ids available to scene `index`.
    fn palette(&self, index: u32) -> (Vec<u16>, Vec<u16>) {
        match self.cliques {
            Some(q) => {
                let group: Vec<u16> = (0..self.categories).filter(|c| c % q == (index % q as u32) as u16).collect();
                (group[..1].to_vec(), group[1..].to_vec())
            }
            None => {
                let n_stuff = (self.categories / 3).max(1);
                ((0..n_stuff).collect(), (n_stuff..self.categories).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub labels: LabelMap,
    pub instances: InstanceMap,
    pub image: RgbImage,
}

pub fn category_names(categories: u16) -> Vec<String> {
    (0..categories).map(|c| format!("category_{c:03}")).collect()
}

fn base_color(category: u16) -> [f64; 3] {
    let h = (category as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let ch = |shift: u32| 40.0 + ((h >> shift) % 176) as f64;
    [ch(8), ch(24), ch(40)]
}

struct Blob {
    category: u16,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
    /// (end x, end y, half thickness)
    limbs: Vec<(f64, f64, f64)>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, category: u16, s: f64) -> Self {
        let (cx, cy) = (rng.gen_range(0.15..0.85) * s, rng.gen_range(0.2..0.85) * s);
        let (rx, ry) = (rng.gen_range(s / 16.0..s / 6.0), rng.gen_range(s / 16.0..s / 6.0));
        let theta: f64 = rng.gen_range(0.0..TAU);
        let reach = rx.max(ry);
        let limbs = (0..rng.gen_range(0..=3))
            .map(|_| {
                let phi: f64 = rng.gen_range(0.0..TAU);
                let len = rng.gen_range(1.1..2.0) * reach;
                let half = rng.gen_range(s / 96.0..s / 40.0).max(1.0);
                (cx + len * phi.cos(), cy + len * phi.sin(), half)
            })
            .collect();
        Self { category, cx, cy, rx, ry, cos: theta.cos(), sin: theta.sin(), limbs }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let (u, v) = (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos);
        if (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0 {
            return true;
        }
        self.limbs.iter().any(|&(ex, ey, half)| {
            let (sx, sy) = (ex - self.cx, ey - self.cy);
            let t = ((dx * sx + dy * sy) / (sx * sx + sy * sy)).clamp(0.0, 1.0);
            let (qx, qy) = (dx - t * sx, dy - t * sy);
            qx * qx + qy * qy <= half * half
        })
    }
}

/// Scene `index` of `spec`; independent of every other scene.
pub fn generate_scene(spec: &ToySpec, index: u32) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let size = spec.size;
    let s = size as f64;
    let (mut stuff, things) = spec.palette(index);

    stuff.shuffle(&mut rng);
    let bands = rng.gen_range(1..=stuff.len().min(3));
    stuff.truncate(bands);
    // boundary k separates band k from band k + 1
    let waves: Vec<[f64; 5]> = (1..bands)
        .map(|k| {
            [
                s * k as f64 / bands as f64 + rng.gen_range(-s / 12.0..s / 12.0),
                rng.gen_range(s / 40.0..s / 12.0),
                TAU / rng.gen_range(s / 4.0..s),
                rng.gen_range(0.0..TAU),
                rng.gen_range(s / 80.0..s / 30.0),
            ]
        })
        .collect();

    let blobs: Vec<Blob> = if things.is_empty() {
        Vec::new()
    } else {
        (0..rng.gen_range(1..=4))
            .map(|_| {
                let category = *things.choose(&mut rng).unwrap();
                Blob::random(&mut rng, category, s)
            })
            .collect()
    };

    let mut labels = vec![0u16; (size * size) as usize];
    let mut instances = vec![0u16; (size * size) as usize];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let band = waves
                .iter()
                .filter(|w| py > w[0] + w[1] * (w[2] * px + w[3]).sin() + w[4] * (3.1 * w[2] * px).cos())
                .count();
            let i = (y * size + x) as usize;
            labels[i] = stuff[band];
            for (b, blob) in blobs.iter().enumerate().rev() {
                if blob.contains(px, py) {
                    labels[i] = blob.category;
                    instances[i] = b as u16 + 1;
                    break;
                }
            }
        }
    }

    // per-scene tint and stripe direction per category, then pixel noise
    let n_c = spec.categories as usize;
    let looks: Vec<([f64; 3], f64, f64, f64)> = (0..n_c)
        .map(|c| {
            let base = base_color(c as u16);
            let tint = [0, 1, 2].map(|k| base[k] + rng.gen_range(-20.0..20.0));
            let angle: f64 = rng.gen_range(0.0..TAU);
            (tint, angle.cos(), angle.sin(), TAU / (5.0 + (c % 7) as f64 * 2.5))
        })
        .collect();
    let mut image = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let i = (y * size + x) as usize;
            let (tint, ca, sa, freq) = looks[labels[i] as usize];
            let stripe = 18.0 * ((x as f64 * ca + y as f64 * sa) * freq).sin();
            let px = [0, 1, 2].map(|k| (tint[k] + stripe + rng.gen_range(-10.0..10.0)).clamp(0.0, 255.0) as u8);
            image.put_pixel(x, y, Rgb(px));
        }
    }

    Ok(Scene {
        labels: LabelMap::new(size, size, spec.categories, labels)?,
        instances: InstanceMap::new(size, size, instances)?,
        image,
    })
}

pub fn generate_scenes(spec: &ToySpec) -> Result<Vec<Scene>> {
    (0..spec.scenes).map(|i| generate_scene(spec, i)).collect()
}

/// Writes the dataset layout read by [`crate::index::ingest`].
pub fn write_dataset(spec: &ToySpec, root: &Path) -> Result<()> {
    spec.validate()?;
    for sub in ["images", "labels", "instances"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    std::fs::write(root.join("categories.txt"), category_names(spec.categories).join("\n") + "\n")?;
    for i in 0..spec.scenes {
        let scene = generate_scene(spec, i)?;
        let file = format!("scene_{i:05}.png");
        scene.image.save(root.join("images").join(&file))?;
        write_labels(&root.join("labels").join(&file), &scene.labels)?;
        write_instances(&root.join("instances").join(&file), &scene.instances)?;
    }
    Ok(())
}

/// In-memory library with preloaded images; image refs are `toy:<i>`.
/// `names` may list more categories than the scenes use.
pub fn library_from_scenes(scenes: &[Scene], names: Vec<String>) -> Result<ExemplarLibrary> {
    let n_c = u16::try_from(names.len()).map_err(|_| crate::Error::InvalidInput("too many categories".into()))?;
    let records = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let labels = LabelMap::new(s.labels.width(), s.labels.height(), n_c, s.labels.data().to_vec())?;
            ExemplarRecord::build(i as u32, format!("toy:{i}"), labels, &s.instances)?.with_image(s.image.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    ExemplarLibrary::new(names, records)
}
