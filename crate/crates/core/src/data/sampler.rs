use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    /// Uniform shuffle over all samples, ignoring domains.
    Random,
    /// Balanced over the generator's domain tags.
    Oracle,
    /// Balanced over k-means clusters of style embeddings.
    Clustering,
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "oracle" => Ok(Self::Oracle),
            "clustering" => Ok(Self::Clustering),
            _ => Err(config_err!(
                "unknown sampler mode {:?} (random|oracle|clustering)",
                s
            )),
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Oracle => "oracle",
            Self::Clustering => "clustering",
        })
    }
}

/// Epoch-cyclic shuffled order over a fixed index set.
#[derive(Clone, Debug)]
struct Cycle {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(items: Vec<usize>) -> Self {
        Self {
            items,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            self.order = self.items.clone();
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Stream of batches over `0..n`. Balanced samplers put at least one sample
/// of every group in each batch and fill the rest from a global cycle.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    batch: usize,
    all: Cycle,
    groups: Vec<Cycle>,
    rng: Rng,
}

impl BatchSampler {
    pub fn random(n: usize, batch: usize, rng: Rng) -> Result<Self> {
        if n == 0 || batch == 0 {
            return Err(config_err!("sampler needs samples and batch >= 1"));
        }
        Ok(Self {
            batch,
            all: Cycle::new((0..n).collect()),
            groups: Vec::new(),
            rng,
        })
    }

    /// `group_of[i]` is the domain id of sample `i`.
    pub fn balanced(group_of: &[usize], batch: usize, rng: Rng) -> Result<Self> {
        let mut sampler = Self::random(group_of.len(), batch, rng)?;
        let k = group_of.iter().max().map_or(0, |m| m + 1);
        if batch < k {
            return Err(config_err!(
                "batch size {} is smaller than the {} domains",
                batch,
                k
            ));
        }
        sampler.groups = (0..k)
            .map(|g| Cycle::new((0..group_of.len()).filter(|&i| group_of[i] == g).collect()))
            .filter(|c| !c.items.is_empty())
            .collect();
        Ok(sampler)
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        for g in &mut self.groups {
            out.push(g.next(&mut self.rng));
        }
        while out.len() < self.batch {
            out.push(self.all.next(&mut self.rng));
        }
        out
    }
}
