//! Superpixels: a regular seed grid, optionally grown into colour-coherent
//! regions by a priority flood.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::ImageTensor;

/// Weight of the spatial term relative to colour distance (in squared
/// value-range units) when growing regions.
const COMPACTNESS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentMap {
    labels: Vec<u32>,
    height: usize,
    width: usize,
    k: usize,
}

impl SegmentMap {
    /// Validates that ids are dense in `[0, k)` and every id occurs.
    pub fn new(labels: Vec<u32>, height: usize, width: usize) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} image",
                labels.len()
            )));
        }
        let k = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!("segment id {missing} is unused")));
        }
        Ok(Self { labels, height, width, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    /// Renames segment `i` to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::Input(format!("permutation of length {} for {} segments", perm.len(), self.k)));
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize] as u32).collect();
        Self::new(labels, self.height, self.width)
    }

    /// Whether pixel (y, x) touches a pixel of another segment.
    pub fn is_boundary(&self, y: usize, x: usize) -> bool {
        let l = self.label(y, x);
        (y > 0 && self.label(y - 1, x) != l)
            || (y + 1 < self.height && self.label(y + 1, x) != l)
            || (x > 0 && self.label(y, x - 1) != l)
            || (x + 1 < self.width && self.label(y, x + 1) != l)
    }
}

/// Rows × columns of the seed grid: the cell count closest to `target`,
/// then the cells closest to square.
pub fn grid_dims(height: usize, width: usize, target: usize) -> (usize, usize) {
    let mut best = (1, 1);
    let mut best_key = (usize::MAX, f64::INFINITY);
    for rows in 1..=target.min(height) {
        let cols = ((target as f64 / rows as f64).round() as usize).clamp(1, width);
        let miss = (rows * cols).abs_diff(target);
        let aspect = ((height as f64 / rows as f64) / (width as f64 / cols as f64)).ln().abs();
        if miss < best_key.0 || (miss == best_key.0 && aspect < best_key.1 - 1e-12) {
            best = (rows, cols);
            best_key = (miss, aspect);
        }
    }
    best
}

/// Regular rectangular grid of about `target` cells.
pub fn grid_segments(height: usize, width: usize, target: usize) -> Result<SegmentMap> {
    check_target(height, width, target)?;
    let (rows, cols) = grid_dims(height, width, target);
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        let r = y * rows / height;
        labels.extend((0..width).map(|x| (r * cols + x * cols / width) as u32));
    }
    SegmentMap::new(labels, height, width)
}

fn check_target(height: usize, width: usize, target: usize) -> Result<()> {
    if target == 0 || target > height * width {
        return Err(Error::Input(format!(
            "cannot make {target} segments from a {height}x{width} image"
        )));
    }
    Ok(())
}

/// Grid-seeded region growing. Seeds sit at grid-cell centres; pixels are
/// claimed in order of colour distance to the seed colour plus a small
/// spatial penalty, always expanding from an already-claimed neighbour so
/// every region stays 4-connected. Constant images yield the plain grid.
pub fn segment_superpixels(image: &ImageTensor, target: usize) -> Result<SegmentMap> {
    let (h, w) = (image.height(), image.width());
    check_target(h, w, target)?;
    let data = image.data();
    let first = &data[..3];
    if data.chunks_exact(3).all(|p| p == first) {
        return grid_segments(h, w, target);
    }
    let (rows, cols) = grid_dims(h, w, target);
    let (lo, hi) = image.value_range();
    let span2 = ((hi - lo) * (hi - lo)).max(f64::MIN_POSITIVE);
    let step2 = ((h * w) as f64 / (rows * cols) as f64).max(1.0);

    let mut seeds = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let y = (r * h + h / 2) / rows;
            let x = (c * w + w / 2) / cols;
            seeds.push((y.min(h - 1), x.min(w - 1)));
        }
    }

    let mut labels = vec![u32::MAX; h * w];
    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;
    for (id, &(y, x)) in seeds.iter().enumerate() {
        heap.push(Reverse((0u64, counter, y * w + x, id as u32)));
        counter += 1;
    }
    let cost = |p: usize, id: usize| -> f64 {
        let (sy, sx) = seeds[id];
        let s = &data[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3];
        let q = &data[p * 3..p * 3 + 3];
        let colour: f64 = s.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / span2;
        let (py, px) = ((p / w) as f64, (p % w) as f64);
        let spatial = ((py - sy as f64).powi(2) + (px - sx as f64).powi(2)) / step2;
        colour + COMPACTNESS * spatial
    };
    while let Some(Reverse((_, _, p, id))) = heap.pop() {
        if labels[p] != u32::MAX {
            continue;
        }
        labels[p] = id;
        let (y, x) = (p / w, p % w);
        let mut visit = |q: usize| {
            if labels[q] == u32::MAX {
                // non-negative floats order the same as their bit patterns
                heap.push(Reverse((cost(q, id as usize).to_bits(), counter, q, id)));
                counter += 1;
            }
        };
        if y > 0 {
            visit(p - w);
        }
        if y + 1 < h {
            visit(p + w);
        }
        if x > 0 {
            visit(p - 1);
        }
        if x + 1 < w {
            visit(p + 1);
        }
    }
    SegmentMap::new(labels, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tone(h: usize, w: usize) -> ImageTensor {
        let mut d = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = if (x as f64) < w as f64 * 0.37 + (y as f64) * 0.2 { -0.8 } else { 0.7 };
                d.extend([v, v, v]);
            }
        }
        ImageTensor::new(d, h, w, (-1.0, 1.0)).unwrap()
    }

    fn is_connected(map: &SegmentMap, id: usize) -> bool {
        let (h, w) = (map.height(), map.width());
        let start = (0..h * w).find(|&p| map.labels()[p] as usize == id).unwrap();
        let mut seen = vec![false; h * w];
        let mut stack = vec![start];
        seen[start] = true;
        let mut n = 0;
        while let Some(p) = stack.pop() {
            n += 1;
            let (y, x) = (p / w, p % w);
            let mut nb = Vec::new();
            if y > 0 { nb.push(p - w) }
            if y + 1 < h { nb.push(p + w) }
            if x > 0 { nb.push(p - 1) }
            if x + 1 < w { nb.push(p + 1) }
            for q in nb {
                if !seen[q] && map.labels()[q] as usize == id {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        n == map.sizes()[id]
    }

    #[test]
    fn grid_of_sixteen() {
        let m = grid_segments(256, 256, 16).unwrap();
        assert_eq!(grid_dims(256, 256, 16), (4, 4));
        assert_eq!(m.k(), 16);
        assert!(m.sizes().iter().all(|&s| s == 64 * 64));
        assert_eq!(m.label(63, 63), 0);
        assert_eq!(m.label(64, 0), 4);
        assert_eq!(m.label(255, 255), 15);
    }

    #[test]
    fn constant_image_falls_back_to_grid() {
        let img = ImageTensor::filled(64, 48, 0.25, (-1.0, 1.0)).unwrap();
        assert_eq!(segment_superpixels(&img, 12).unwrap(), grid_segments(64, 48, 12).unwrap());
    }

    #[test]
    fn region_growing_properties() {
        let img = two_tone(96, 80);
        for target in [2, 3, 4, 7, 16, 40] {
            let m = segment_superpixels(&img, target).unwrap();
            let k = m.k() as f64;
            assert!((k - target as f64).abs() <= 0.3 * target as f64, "{target} -> {k}");
            // every pixel assigned, ids dense
            assert!(m.labels().iter().all(|&l| (l as usize) < m.k()));
            assert!(m.sizes().iter().all(|&s| s > 0));
            for id in 0..m.k() {
                assert!(is_connected(&m, id), "segment {id} not contiguous");
            }
            assert_eq!(m, segment_superpixels(&img, target).unwrap());
        }
    }

    #[test]
    fn bad_targets() {
        let img = ImageTensor::filled(4, 4, 0.0, (-1.0, 1.0)).unwrap();
        assert!(segment_superpixels(&img, 17).is_err());
        assert!(segment_superpixels(&img, 0).is_err());
    }

    #[test]
    fn relabel_permutes() {
        let m = grid_segments(8, 8, 4).unwrap();
        let p = m.relabel(&[3, 2, 1, 0]).unwrap();
        assert_eq!(p.label(0, 0), 3);
        assert_eq!(p.sizes(), vec![16; 4]);
    }
}
