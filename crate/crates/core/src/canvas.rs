//! The output canvas: RGB pixels plus per-pixel fill state and provenance.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Shape,
    Part,
    Pixel,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Shape, Stage::Part, Stage::Pixel];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Shape => "shape",
            Stage::Part => "part",
            Stage::Pixel => "pixel",
        }
    }
}

/// Which exemplar (and which of its pixels) supplied an output pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    pub exemplar_id: u32,
    pub donor_x: u32,
    pub donor_y: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    image: RgbImage,
    provenance: Vec<Option<Provenance>>,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            image: RgbImage::new(width, height),
            provenance: vec![None; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.image.width() as usize + x as usize
    }

    #[inline]
    pub fn is_filled(&self, x: u32, y: u32) -> bool {
        self.provenance[self.idx(x, y)].is_some()
    }

    pub fn provenance(&self, x: u32, y: u32) -> Option<Provenance> {
        self.provenance[self.idx(x, y)]
    }

    pub fn provenance_map(&self) -> &[Option<Provenance>] {
        &self.provenance
    }

    /// Writes a pixel unless it is already filled; returns whether it wrote.
    #[inline]
    pub fn fill(&mut self, x: u32, y: u32, rgb: [u8; 3], prov: Provenance) -> bool {
        let i = self.idx(x, y);
        if self.provenance[i].is_some() {
            return false;
        }
        self.provenance[i] = Some(prov);
        self.image.put_pixel(x, y, Rgb(rgb));
        true
    }

    /// Marks a pixel as a hole again (black, no provenance).
    pub fn clear(&mut self, x: u32, y: u32) {
        let i = self.idx(x, y);
        self.provenance[i] = None;
        self.image.put_pixel(x, y, Rgb([0, 0, 0]));
    }

    pub fn filled_count(&self) -> usize {
        self.provenance.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.provenance.iter().all(Option::is_some)
    }
}

/// Pixels written by one stage call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillReport {
    pub written: usize,
}

impl std::ops::AddAssign for FillReport {
    fn add_assign(&mut self, rhs: Self) {
        self.written += rhs.written;
    }
}
