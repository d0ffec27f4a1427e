//! Derivative-order pairing schedules.
//!
//! Each batch feeds the two encoder streams clips differentiated `order_a`
//! and `order_b` times. The full schedule cycles a deterministic pair by
//! epoch (`(1,1) -> (1,0) -> (0,1) -> (0,0)`) and then, with probability one
//! half per batch, differentiates both views once more. The other policies
//! are the ablation variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Derivative orders of the two views. Orders lie in `{0,1,2}` and differ by
/// at most one, which leaves exactly seven legal pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewPairSpec {
    order_a: u8,
    order_b: u8,
}

impl ViewPairSpec {
    pub const ALL: [ViewPairSpec; 7] = [
        ViewPairSpec { order_a: 0, order_b: 0 },
        ViewPairSpec { order_a: 0, order_b: 1 },
        ViewPairSpec { order_a: 1, order_b: 0 },
        ViewPairSpec { order_a: 1, order_b: 1 },
        ViewPairSpec { order_a: 1, order_b: 2 },
        ViewPairSpec { order_a: 2, order_b: 1 },
        ViewPairSpec { order_a: 2, order_b: 2 },
    ];

    pub fn new(order_a: u8, order_b: u8) -> Result<Self> {
        if order_a > 2 || order_b > 2 || order_a.abs_diff(order_b) > 1 {
            return Err(Error::Invalid(format!("illegal view pair ({order_a},{order_b})")));
        }
        Ok(Self { order_a, order_b })
    }

    pub fn order_a(self) -> u8 {
        self.order_a
    }

    pub fn order_b(self) -> u8 {
        self.order_b
    }

    pub fn is_legal(self) -> bool {
        Self::ALL.contains(&self)
    }

    fn raised(self) -> Self {
        Self { order_a: self.order_a + 1, order_b: self.order_b + 1 }
    }
}

impl fmt::Display for ViewPairSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.order_a, self.order_b)
    }
}

const fn pair(a: u8, b: u8) -> ViewPairSpec {
    ViewPairSpec { order_a: a, order_b: b }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePolicy {
    /// Plain two-view training on raw frames.
    Base,
    #[serde(rename = "random-1")]
    Random1,
    #[serde(rename = "random-12")]
    Random12,
    Reverse,
    #[serde(rename = "sched-1")]
    Sched1,
    #[serde(rename = "sched-1-mix")]
    Sched1Mix,
    #[serde(rename = "sched-12")]
    Sched12,
    #[serde(rename = "sched-12-mix")]
    Sched12Mix,
    Vididi,
}

impl SchedulePolicy {
    pub const ALL: [SchedulePolicy; 9] = [
        SchedulePolicy::Base,
        SchedulePolicy::Random1,
        SchedulePolicy::Random12,
        SchedulePolicy::Reverse,
        SchedulePolicy::Sched1,
        SchedulePolicy::Sched1Mix,
        SchedulePolicy::Sched12,
        SchedulePolicy::Sched12Mix,
        SchedulePolicy::Vididi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulePolicy::Base => "base",
            SchedulePolicy::Random1 => "random-1",
            SchedulePolicy::Random12 => "random-12",
            SchedulePolicy::Reverse => "reverse",
            SchedulePolicy::Sched1 => "sched-1",
            SchedulePolicy::Sched1Mix => "sched-1-mix",
            SchedulePolicy::Sched12 => "sched-12",
            SchedulePolicy::Sched12Mix => "sched-12-mix",
            SchedulePolicy::Vididi => "vididi",
        }
    }

    /// Epoch cycle of the deterministic step, or `None` for the
    /// random-only policies.
    pub fn cycle(self) -> Option<&'static [ViewPairSpec]> {
        const FULL: [ViewPairSpec; 4] = [pair(1, 1), pair(1, 0), pair(0, 1), pair(0, 0)];
        const REVERSED: [ViewPairSpec; 4] = [pair(0, 0), pair(0, 1), pair(1, 0), pair(1, 1)];
        const FIRST: [ViewPairSpec; 2] = [pair(1, 1), pair(0, 0)];
        const FIRST_MIX: [ViewPairSpec; 3] = [pair(1, 1), pair(1, 0), pair(0, 0)];
        const RAW: [ViewPairSpec; 1] = [pair(0, 0)];
        match self {
            SchedulePolicy::Base => Some(&RAW),
            SchedulePolicy::Random1 | SchedulePolicy::Random12 => None,
            SchedulePolicy::Reverse => Some(&REVERSED),
            SchedulePolicy::Sched1 | SchedulePolicy::Sched12 => Some(&FIRST),
            SchedulePolicy::Sched1Mix | SchedulePolicy::Sched12Mix => Some(&FIRST_MIX),
            SchedulePolicy::Vididi => Some(&FULL),
        }
    }

    /// Whether the per-batch coin may differentiate both views once more.
    pub fn has_random_step(self) -> bool {
        matches!(
            self,
            SchedulePolicy::Reverse | SchedulePolicy::Sched12 | SchedulePolicy::Sched12Mix | SchedulePolicy::Vididi
        )
    }
}

impl fmt::Display for SchedulePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulePolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown schedule policy `{s}`")))
    }
}

/// Source of the per-batch uniform draw.
pub enum Coin<'a, R: Rng + ?Sized> {
    Random(&'a mut R),
    /// Every draw returns this value; `Fixed(1.0)` disables the random
    /// differentiation step, `Fixed(0.0)` always takes it.
    Fixed(f64),
}

impl<R: Rng + ?Sized> Coin<'_, R> {
    fn draw(&mut self) -> f64 {
        match self {
            Coin::Random(rng) => rng.gen::<f64>(),
            Coin::Fixed(v) => *v,
        }
    }
}

/// Picks the view pair for one batch.
pub fn select_pair<R: Rng + ?Sized>(policy: SchedulePolicy, epoch: usize, coin: &mut Coin<'_, R>) -> ViewPairSpec {
    let base = match policy.cycle() {
        Some(cycle) => cycle[epoch % cycle.len()],
        None => {
            let levels = if policy == SchedulePolicy::Random1 { 2 } else { 3 };
            let u = coin.draw();
            let k = ((u * levels as f64) as u8).min(levels - 1);
            pair(k, k)
        }
    };
    if policy.has_random_step() && coin.draw() < 0.5 {
        base.raised()
    } else {
        base
    }
}

/// Simulates a run and counts the pairs emitted.
pub fn pair_frequencies(
    policy: SchedulePolicy,
    epochs: usize,
    batches_per_epoch: usize,
    seed: u64,
) -> BTreeMap<ViewPairSpec, usize> {
    let mut counts = BTreeMap::new();
    for epoch in 0..epochs {
        for batch in 0..batches_per_epoch {
            let pair = batch_pair(policy, epoch, batch, seed, false);
            *counts.entry(pair).or_insert(0) += 1;
        }
    }
    counts
}

/// The pair used by training for `(epoch, batch)`; `freeze_random` forces
/// every draw high so only the deterministic step acts.
pub fn batch_pair(policy: SchedulePolicy, epoch: usize, batch: usize, seed: u64, freeze_random: bool) -> ViewPairSpec {
    if freeze_random {
        return select_pair::<rand_chacha::ChaCha8Rng>(policy, epoch, &mut Coin::Fixed(1.0));
    }
    let mut rng = stream(seed, Domain::Schedule, &[epoch as u64, batch as u64]);
    select_pair(policy, epoch, &mut Coin::Random(&mut rng))
}
