//! 8-connected component labelling of binary masks and small-blob removal.

use std::collections::VecDeque;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::Mask;

/// Component labels for a mask. Label 0 is background; components are
/// numbered `1..=K` in row-major order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobLabeling {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the pixel count of component `k`.
    pub sizes: Vec<usize>,
}

impl BlobLabeling {
    pub fn num_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn size_of(&self, id: u32) -> Option<usize> {
        (id as usize).checked_sub(1).and_then(|i| self.sizes.get(i).copied())
    }
}

pub fn label_components(mask: &Mask) -> Result<BlobLabeling> {
    let (w, h) = (mask.width, mask.height);
    if w == 0 || h == 0 {
        return Err(Error::Empty("mask has zero width or height"));
    }
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask.bits[n] && labels[n] == 0 {
                        labels[n] = id;
                        queue.push_back(n);
                    }
                }
            }
        }
        sizes.push(size);
    }
    Ok(BlobLabeling {
        width: w,
        height: h,
        labels,
        sizes,
    })
}

/// Keeps exactly the pixels of components with at least `min_area` pixels.
pub fn filter_small(labeling: &BlobLabeling, min_area: usize) -> Mask {
    let bits = labeling
        .labels
        .iter()
        .map(|&id| id != 0 && labeling.sizes[id as usize - 1] >= min_area)
        .collect();
    Mask {
        width: labeling.width,
        height: labeling.height,
        bits,
    }
}

/// `max(1, ⌊0.001 · pixels⌋)`
pub fn default_min_area(pixels: usize) -> usize {
    (pixels / 1000).max(1)
}

/// Minimum blob area, either explicit or derived from the image size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinArea {
    Auto,
    Pixels(usize),
}

impl MinArea {
    pub fn resolve(self, pixels: usize) -> usize {
        match self {
            MinArea::Auto => default_min_area(pixels),
            MinArea::Pixels(n) => n,
        }
    }
}

impl FromStr for MinArea {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(MinArea::Auto);
        }
        s.parse()
            .map(MinArea::Pixels)
            .map_err(|_| Error::InvalidArgument(format!("min-area must be `auto` or a pixel count, got `{s}`")))
    }
}

/// Labels `mask` and drops components smaller than `min_area`.
pub fn remove_small_blobs(mask: &Mask, min_area: MinArea) -> Result<Mask> {
    let labeling = label_components(mask)?;
    Ok(filter_small(&labeling, min_area.resolve(mask.width * mask.height)))
}
