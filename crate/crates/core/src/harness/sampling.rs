use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::FeatureStore;
use crate::error::{Error, Result};
use crate::odc::{Episode, Sample};

/// Record indices drawn for one episode: `(class, record)` pairs per role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeDraw {
    pub classes: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

/// Draws `ways` classes and, per class, `shots` support and `queries` query
/// records, all without replacement.
///
/// Stores flagged as split halves take support from the first half of each
/// class and queries from the second half.
pub fn draw_episode(store: &FeatureStore, ways: usize, shots: usize, queries: usize, seed: u64) -> Result<EpisodeDraw> {
    if ways == 0 || shots == 0 {
        return Err(Error::InvalidConfig("ways and shots must be at least 1".into()));
    }
    let classes = store.classes();
    if classes.len() < ways {
        return Err(Error::InsufficientData(format!(
            "{ways}-way episodes need {ways} classes, store has {}",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, classes.len(), ways).into_vec();
    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::with_capacity(ways * queries);
    for &c in &chosen {
        let count = classes[c].records.len();
        if store.split_halves() {
            let half = count / 2;
            if half < shots || count - half < queries {
                return Err(Error::InsufficientData(format!(
                    "class {:?} has {half} support and {} query records, episode needs {shots} and {queries}",
                    classes[c].name,
                    count - half
                )));
            }
            support.extend(sample(&mut rng, half, shots).into_iter().map(|r| (c, r)));
            query.extend(sample(&mut rng, count - half, queries).into_iter().map(|r| (c, half + r)));
        } else {
            if count < shots + queries {
                return Err(Error::InsufficientData(format!(
                    "class {:?} has {count} records, episode needs {}",
                    classes[c].name,
                    shots + queries
                )));
            }
            let picked = sample(&mut rng, count, shots + queries).into_vec();
            support.extend(picked[..shots].iter().map(|&r| (c, r)));
            query.extend(picked[shots..].iter().map(|&r| (c, r)));
        }
    }
    Ok(EpisodeDraw {
        classes: chosen,
        support,
        query,
    })
}

/// Samples an episode and builds region matrices with pyramid depth `p`.
/// Episode labels are positions in the drawn class list.
pub fn sample_episode(
    store: &FeatureStore,
    ways: usize,
    shots: usize,
    queries: usize,
    p: usize,
    seed: u64,
) -> Result<Episode> {
    let draw = draw_episode(store, ways, shots, queries, seed)?;
    let build = |picks: &[(usize, usize)]| {
        picks
            .iter()
            .map(|&(c, r)| {
                let label = draw.classes.iter().position(|&x| x == c).expect("drawn class");
                Ok(Sample::new(store.region_matrix(c, r, p)?, label))
            })
            .collect::<Result<Vec<_>>>()
    };
    Episode::new(ways, build(&draw.support)?, build(&draw.query)?)
}
