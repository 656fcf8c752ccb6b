//! Synthetic single-video benchmarks with planted action structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data_io::{FeatureMatrix, LabelSequence};
use crate::error::{Result, TsaError};

pub const BACKGROUND_NAME: &str = "background";
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_segments: usize,
    /// Inclusive range of segment lengths.
    pub frames_per_segment: (usize, usize),
    pub dims: usize,
    pub n_action_classes: usize,
    pub noise_sigma: f64,
    pub center_separation: f64,
    pub seed: u64,
    /// Insert a background segment before every action segment and at the end.
    pub background: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_segments: 6,
            frames_per_segment: (36, 44),
            dims: 16,
            n_action_classes: 4,
            noise_sigma: 0.15,
            center_separation: 1.0,
            seed: 0,
            background: false,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TsaError::InvalidArgument(m));
        if self.n_action_classes == 0 || self.n_action_classes > self.n_segments {
            return bad(format!(
                "need 1 <= n_action_classes ({}) <= n_segments ({})",
                self.n_action_classes, self.n_segments
            ));
        }
        if self.n_action_classes == 1 && self.n_segments > 1 && !self.background {
            return bad("a single class cannot fill several distinct segments".into());
        }
        let (lo, hi) = self.frames_per_segment;
        if lo == 0 || lo > hi {
            return bad(format!("bad segment length range {lo}..={hi}"));
        }
        if self.dims == 0 || !(self.noise_sigma >= 0.0) || !(self.center_separation >= 0.0) {
            return bad("dims must be positive, sigma and separation non-negative".into());
        }
        Ok(())
    }
}

fn random_unit<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn place_centers<R: Rng + ?Sized>(
    count: usize,
    dims: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let c = random_unit(dims, rng);
            let far = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            far.then_some(c)
        });
        centers.push(placed.ok_or(TsaError::CenterPlacement {
            wanted: count,
            separation,
            dims,
        })?);
    }
    Ok(centers)
}

/// Class of every segment: each class once in random order, then random
/// classes, never repeating the previous segment's class.
fn segment_classes<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let k = spec.n_action_classes;
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut classes = order;
    while classes.len() < spec.n_segments {
        let prev = *classes.last().unwrap();
        let c = if k == 1 {
            0
        } else {
            let c = rng.random_range(0..k - 1);
            if c >= prev { c + 1 } else { c }
        };
        classes.push(c);
    }
    classes
}

pub fn generate(spec: &SynthSpec) -> Result<(FeatureMatrix, LabelSequence)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_centers = spec.n_action_classes + usize::from(spec.background);
    let centers = place_centers(n_centers, spec.dims, spec.center_separation, &mut rng)?;
    let classes = segment_classes(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| TsaError::InvalidArgument(e.to_string()))?;

    let (lo, hi) = spec.frames_per_segment;
    let mut data = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut emit = |class: Option<usize>, rng: &mut ChaCha8Rng| {
        let len = rng.random_range(lo..=hi);
        let (center, name) = match class {
            Some(c) => (&centers[c], format!("a{c}")),
            None => (&centers[spec.n_action_classes], BACKGROUND_NAME.to_string()),
        };
        for _ in 0..len {
            data.extend(center.iter().map(|v| v + noise.sample(rng)));
            tokens.push(name.clone());
        }
    };
    for &c in &classes {
        if spec.background {
            emit(None, &mut rng);
        }
        emit(Some(c), &mut rng);
    }
    if spec.background {
        emit(None, &mut rng);
    }
    let frames = tokens.len();
    let features = FeatureMatrix::new(frames, spec.dims, data)?;
    let background = spec.background.then_some(BACKGROUND_NAME);
    let labels = LabelSequence::from_tokens(&tokens, background)?;
    Ok((features, labels))
}
