use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHead;
use crate::error::{Error, Result};
use crate::harness::world::World;
use crate::memory_bank::Partition;
use crate::rng::{self, SeedStreams};

/// Top-1 accuracy split by partition, with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub base: f64,
    pub novel: f64,
    pub overall: f64,
    pub base_correct: usize,
    pub base_total: usize,
    pub novel_correct: usize,
    pub novel_total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Draws `n_test` samples per class from the `eval` stream of `seed` and
/// scores `head` on them. The draws do not depend on the head.
pub fn evaluate(head: &ClassifierHead, world: &World, n_test: usize, seed: u64) -> Result<Accuracy> {
    if n_test == 0 {
        return Err(Error::InvalidConfig("n_test must be at least 1".into()));
    }
    let mut rng = SeedStreams::new(seed).stream(rng::EVAL);
    let (mut bc, mut bt, mut nc, mut nt) = (0, 0, 0, 0);
    for c in world.base_classes().into_iter().chain(world.novel_classes()) {
        for _ in 0..n_test {
            let x = world.sample_test(c, &mut rng);
            let hit = head.predict(&x)? == c.index();
            match world.partition(c) {
                Partition::Base => {
                    bt += 1;
                    bc += hit as usize;
                }
                Partition::Novel => {
                    nt += 1;
                    nc += hit as usize;
                }
            }
        }
    }
    Ok(Accuracy {
        base: ratio(bc, bt),
        novel: ratio(nc, nt),
        overall: ratio(bc + nc, bt + nt),
        base_correct: bc,
        base_total: bt,
        novel_correct: nc,
        novel_total: nt,
    })
}
