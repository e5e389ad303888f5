use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step, in (0, 1e-2].
    pub epsilon: f64,
    /// Maximum accepted error.
    pub tolerance: f64,
    /// Denominator floor: errors on gradients smaller than this are measured
    /// as `|analytic - numeric| / floor`.
    pub floor: f64,
    /// Coordinates checked (all of them when fewer exist).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
            floor: 1e-2,
            samples: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares tape gradients against central finite differences on a random
/// subsample of parameter coordinates.
///
/// `f` must rebuild the loss from scratch on the tape it is handed; it is
/// called once for the analytic pass and twice per checked coordinate.
pub fn grad_check<F>(store: &ParamStore, f: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(config.epsilon > 0.0 && config.epsilon <= 1e-2) {
        return Err(Error::Contract(format!("epsilon must be in (0, 1e-2], got {}", config.epsilon)));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let analytic = tape.backward(loss)?.params(&tape, store);

    let coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picked: Vec<usize> = if coords.len() <= config.samples {
        (0..coords.len()).collect()
    } else {
        let mut v = sample(&mut rng, coords.len(), config.samples).into_vec();
        v.sort_unstable();
        v
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.scalar_value(l))
    };
    let mut probe = store.clone();
    let mut max_err: f64 = 0.0;
    for &ci in &picked {
        let (id, k) = coords[ci];
        let orig = probe.get(id).data()[k];
        probe.get_mut(id).data_mut()[k] = orig + config.epsilon;
        let up = eval(&probe)?;
        probe.get_mut(id).data_mut()[k] = orig - config.epsilon;
        let down = eval(&probe)?;
        probe.get_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * config.epsilon);
        let a = analytic.get(id).data()[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
        max_err = max_err.max(err);
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        checked: picked.len(),
        passed: max_err < config.tolerance,
    })
}
