//! Sparse metric prompts: uniform sampling from depth grids and the
//! three-channel preparation (pixel-wise aligned prior, globally corrected
//! prior, prompt mask).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{lsq_scale_shift, pixelwise_scale_field, AffineFit, DEFAULT_NEIGHBORS};
use crate::error::{Error, Result};
use crate::grid::DepthGrid;

/// Inclusive range of prompt sizes drawn per image by default.
pub const PROMPT_COUNT_BAND: (usize, usize) = (2_000, 40_000);

/// Lower bound applied to globally corrected depths, meters.
pub const GMDR_DEPTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: usize,
    pub y: usize,
    pub d: f64,
}

/// Metric depth samples at distinct in-bounds pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsePrompt {
    width: usize,
    height: usize,
    entries: Vec<PromptPoint>,
}

impl SparsePrompt {
    pub fn new(width: usize, height: usize, entries: Vec<PromptPoint>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for p in &entries {
            if p.x >= width || p.y >= height {
                return Err(Error::InvalidPrompt(format!(
                    "({}, {}) outside {width}x{height}",
                    p.x, p.y
                )));
            }
            if !(p.d.is_finite() && p.d > 0.0) {
                return Err(Error::InvalidPrompt(format!(
                    "depth {} at ({}, {}) must be finite and positive",
                    p.d, p.x, p.y
                )));
            }
            if !seen.insert((p.x, p.y)) {
                return Err(Error::InvalidPrompt(format!("duplicate pixel ({}, {})", p.x, p.y)));
            }
        }
        Ok(Self { width, height, entries })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn entries(&self) -> &[PromptPoint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Binary prompt-location mask, row-major.
    pub fn mask(&self) -> Vec<u8> {
        let mut m = vec![0u8; self.width * self.height];
        for p in &self.entries {
            m[p.y * self.width + p.x] = 1;
        }
        m
    }
}

/// Samples prompts from one grid; the valid-pixel list is built once so
/// repeated draws with different seeds stay cheap.
pub struct PromptSampler<'a> {
    grid: &'a DepthGrid,
    valid: Vec<usize>,
}

impl<'a> PromptSampler<'a> {
    pub fn new(grid: &'a DepthGrid) -> Result<Self> {
        let valid: Vec<usize> = grid
            .mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        if valid.is_empty() {
            return Err(Error::NoValidPixels);
        }
        Ok(Self { grid, valid })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.len()
    }

    /// Uniform sample of `n` distinct valid pixels (all of them when `n`
    /// exceeds the valid count), returned in row-major order.
    pub fn sample(&self, n: usize, seed: u64) -> SparsePrompt {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    /// Draws the prompt size uniformly from `band` (inclusive), then samples.
    pub fn sample_in_band(&self, band: (usize, usize), seed: u64) -> SparsePrompt {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(band.0..=band.1.max(band.0));
        self.sample_with(n, &mut rng)
    }

    fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> SparsePrompt {
        let mut picked: Vec<usize> = if n >= self.valid.len() {
            self.valid.clone()
        } else {
            rand::seq::index::sample(rng, self.valid.len(), n)
                .into_iter()
                .map(|k| self.valid[k])
                .collect()
        };
        picked.sort_unstable();
        let w = self.grid.width();
        let entries = picked
            .into_iter()
            .map(|i| PromptPoint {
                x: i % w,
                y: i / w,
                d: self.grid.depth()[i],
            })
            .collect();
        SparsePrompt {
            width: w,
            height: self.grid.height(),
            entries,
        }
    }
}

pub fn sample_prompt(grid: &DepthGrid, n: usize, seed: u64) -> Result<SparsePrompt> {
    if n == 0 {
        return Err(Error::InvalidPrompt("requested prompt size must be at least 1".into()));
    }
    Ok(PromptSampler::new(grid)?.sample(n, seed))
}

/// Prior rescaled pixel-wise toward the prompt depths. Exact at prompt
/// pixels that fall on valid prior pixels.
pub fn pdsa_refine(prompt: &SparsePrompt, prior: &DepthGrid) -> Result<DepthGrid> {
    pdsa_refine_with(prompt, prior, DEFAULT_NEIGHBORS)
}

pub fn pdsa_refine_with(prompt: &SparsePrompt, prior: &DepthGrid, neighbors: usize) -> Result<DepthGrid> {
    let field = pixelwise_scale_field(prior, prompt, neighbors)?;
    let mut out: Vec<f64> = prior
        .depth()
        .iter()
        .zip(field.scale())
        .zip(prior.mask())
        .map(|((&d, &s), &m)| if m { d * s } else { 0.0 })
        .collect();
    for p in prompt.entries() {
        let i = prior.index(p.x, p.y);
        if prior.mask()[i] {
            out[i] = p.d;
        }
    }
    DepthGrid::new(prior.width(), prior.height(), out, prior.mask().to_vec())
}

/// Prior under the global least-squares scale and shift, floored at
/// [`GMDR_DEPTH_FLOOR`].
pub fn gmdr_correct(prompt: &SparsePrompt, prior: &DepthGrid) -> Result<DepthGrid> {
    gmdr_correct_with_fit(prompt, prior).map(|(g, _)| g)
}

pub fn gmdr_correct_with_fit(prompt: &SparsePrompt, prior: &DepthGrid) -> Result<(DepthGrid, AffineFit)> {
    let fit = lsq_scale_shift(prior, prompt)?;
    let out = prior
        .depth()
        .iter()
        .zip(prior.mask())
        .map(|(&d, &m)| if m { fit.apply(d).max(GMDR_DEPTH_FLOOR) } else { 0.0 })
        .collect();
    let grid = DepthGrid::new(prior.width(), prior.height(), out, prior.mask().to_vec())?;
    Ok((grid, fit))
}

/// Three-channel network input assembled from a prompt and a prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPrompt {
    pub pdsa: DepthGrid,
    pub gmdr: DepthGrid,
    pub mask: Vec<u8>,
    pub fit: AffineFit,
}

impl PreparedPrompt {
    pub fn width(&self) -> usize {
        self.pdsa.width()
    }

    pub fn height(&self) -> usize {
        self.pdsa.height()
    }

    /// Interleaved `H × W × 3` stack (pdsa, gmdr, mask); invalid prior
    /// pixels read as 0 in the depth channels.
    pub fn interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mask.len() * 3);
        for i in 0..self.mask.len() {
            out.push(self.pdsa.depth()[i]);
            out.push(self.gmdr.depth()[i]);
            out.push(f64::from(self.mask[i]));
        }
        out
    }
}

pub fn prepare_prompt(prompt: &SparsePrompt, prior: &DepthGrid) -> Result<PreparedPrompt> {
    let pdsa = pdsa_refine(prompt, prior)?;
    let (gmdr, fit) = gmdr_correct_with_fit(prompt, prior)?;
    Ok(PreparedPrompt {
        pdsa,
        gmdr,
        mask: prompt.mask(),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> DepthGrid {
        let d = (0..w * h)
            .map(|i| 1.0 + (i % w) as f64 * 0.5 + (i / w) as f64 * 0.25)
            .collect();
        DepthGrid::from_depths(w, h, d).unwrap()
    }

    #[test]
    fn prompt_validation() {
        let p = |x, y, d| PromptPoint { x, y, d };
        assert!(SparsePrompt::new(4, 4, vec![p(4, 0, 1.0)]).is_err());
        assert!(SparsePrompt::new(4, 4, vec![p(0, 0, 0.0)]).is_err());
        assert!(SparsePrompt::new(4, 4, vec![p(0, 0, f64::NAN)]).is_err());
        assert!(SparsePrompt::new(4, 4, vec![p(1, 1, 1.0), p(1, 1, 2.0)]).is_err());
        assert!(SparsePrompt::new(4, 4, vec![p(1, 1, 1.0), p(2, 1, 2.0)]).is_ok());
    }

    #[test]
    fn sample_clamps_to_valid_count() {
        let mut d = vec![0.0; 25];
        d[3] = 1.0;
        d[7] = 2.0;
        d[24] = 3.0;
        let g = DepthGrid::from_depths(5, 5, d).unwrap();
        let p = sample_prompt(&g, 10, 1).unwrap();
        let got: Vec<_> = p.entries().iter().map(|e| (e.x, e.y, e.d)).collect();
        assert_eq!(got, vec![(3, 0, 1.0), (2, 1, 2.0), (4, 4, 3.0)]);
    }

    #[test]
    fn sample_is_deterministic() {
        let g = ramp(30, 20);
        assert_eq!(sample_prompt(&g, 50, 7).unwrap(), sample_prompt(&g, 50, 7).unwrap());
        assert_ne!(sample_prompt(&g, 50, 7).unwrap(), sample_prompt(&g, 50, 8).unwrap());
    }

    #[test]
    fn sample_errors() {
        assert_eq!(
            sample_prompt(&DepthGrid::invalid(3, 3), 1, 0),
            Err(Error::NoValidPixels)
        );
        assert!(sample_prompt(&ramp(3, 3), 0, 0).is_err());
    }

    #[test]
    fn band_sample_size_is_in_band() {
        let g = ramp(100, 100);
        let s = PromptSampler::new(&g).unwrap();
        for seed in 0..20 {
            let n = s.sample_in_band((200, 400), seed).len();
            assert!((200..=400).contains(&n));
        }
    }

    #[test]
    fn self_sampled_prompt_reproduces_prior() {
        let prior = ramp(16, 12);
        let p = sample_prompt(&prior, 20, 3).unwrap();
        let prep = prepare_prompt(&p, &prior).unwrap();
        assert_eq!(prep.pdsa, prior);
        assert_eq!(prep.gmdr, prior);
        assert_eq!(prep.mask.iter().map(|&m| m as usize).sum::<usize>(), 20);
    }

    #[test]
    fn single_point_prompt_mask() {
        let prior = ramp(8, 8);
        let p = SparsePrompt::new(8, 8, vec![PromptPoint { x: 2, y: 5, d: 3.0 }]).unwrap();
        let m = p.mask();
        assert_eq!(m.iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(m[5 * 8 + 2], 1);
        // a single point cannot pin a global affine fit
        assert!(matches!(prepare_prompt(&p, &prior), Err(Error::DegenerateFit(_))));
        assert_eq!(pdsa_refine(&p, &prior).unwrap().get(2, 5), Some(3.0));
    }

    #[test]
    fn gmdr_clamps_negative_output() {
        // prompts force scale -1 with shift 2: depth 3 maps to -1 -> floor
        let prior = DepthGrid::from_depths(3, 1, vec![0.5, 1.0, 3.0]).unwrap();
        let p = SparsePrompt::new(
            3,
            1,
            vec![PromptPoint { x: 0, y: 0, d: 1.5 }, PromptPoint { x: 1, y: 0, d: 1.0 }],
        )
        .unwrap();
        let (g, fit) = gmdr_correct_with_fit(&p, &prior).unwrap();
        assert!((fit.scale + 1.0).abs() < 1e-12 && (fit.shift - 2.0).abs() < 1e-12);
        assert_eq!(g.get(2, 0), Some(GMDR_DEPTH_FLOOR));
        assert_eq!(g.mask(), prior.mask());
    }

    #[test]
    fn pdsa_fails_when_all_prompts_miss_prior() {
        let prior = DepthGrid::new(2, 1, vec![1.0, 0.0], vec![true, false]).unwrap();
        let p = SparsePrompt::new(2, 1, vec![PromptPoint { x: 1, y: 0, d: 2.0 }]).unwrap();
        assert_eq!(pdsa_refine(&p, &prior), Err(Error::NoUsablePrompts));
    }
}
