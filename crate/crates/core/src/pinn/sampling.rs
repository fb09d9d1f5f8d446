use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::SampleSet;
use super::problem::{DataPoint, DataSource, Point, ProblemSpec};

const RESIDUAL_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

/// Independent generator per `(seed, stream, epoch)`.
fn stream_rng(seed: u64, stream: u64, epoch: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&epoch.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn uniform_point(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Point {
    let mut p = [0.0; 2];
    for (d, &(lo, hi)) in spec.domain.iter().enumerate() {
        p[d] = rng.gen_range(lo..hi);
    }
    p
}

/// `N_f` collocation points drawn uniformly over the domain. Without the
/// resample flag every epoch gets the epoch-0 draw.
pub fn sample_residual_points(spec: &ProblemSpec, seed: u64, epoch: u64) -> Vec<Point> {
    let epoch = if spec.resample { epoch } else { 0 };
    let mut rng = stream_rng(seed, RESIDUAL_STREAM, epoch);
    (0..spec.n_f).map(|_| uniform_point(spec, &mut rng)).collect()
}

/// Data-loss points and targets. Drawn once per seed.
pub fn sample_data(spec: &ProblemSpec, seed: u64) -> Vec<DataPoint> {
    let mut rng = stream_rng(seed, DATA_STREAM, 0);
    match &spec.data {
        DataSource::Fixed(points) => points.clone(),
        DataSource::Uniform { count } => (0..*count)
            .map(|_| {
                let point = uniform_point(spec, &mut rng);
                DataPoint { point, target: spec.reference(&point) }
            })
            .collect(),
        DataSource::Boundary { count } => {
            let (x_lo, x_hi) = spec.domain[0];
            let (t_lo, t_hi) = spec.domain[1];
            let (width, span) = (x_hi - x_lo, t_hi - t_lo);
            // x = x_lo, x = x_hi and t = t_lo laid end to end
            let along = Uniform::new(0.0, 2.0 * span + width);
            (0..*count)
                .map(|_| {
                    let s = along.sample(&mut rng);
                    let point = if s < span {
                        [x_lo, t_lo + s]
                    } else if s < 2.0 * span {
                        [x_hi, t_lo + (s - span)]
                    } else {
                        [x_lo + (s - 2.0 * span), t_lo]
                    };
                    DataPoint { point, target: spec.reference(&point) }
                })
                .collect()
        }
    }
}

/// Everything the loss needs for one epoch.
pub fn sample_set(spec: &ProblemSpec, seed: u64, epoch: u64) -> SampleSet {
    SampleSet {
        residual: if spec.residual.is_some() { sample_residual_points(spec, seed, epoch) } else { Vec::new() },
        data: sample_data(spec, seed),
        derivative: spec.derivative_terms.clone(),
    }
}
