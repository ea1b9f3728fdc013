//! Overlapping label decomposition across players.
//!
//! Labels are dealt round-robin in ascending frequency order, so every
//! player receives a near-equal share of rare and frequent labels. Tail
//! labels, rarest first, are then handed to one additional player each (the
//! least loaded non-owner, ties broken by a seeded draw) until the total
//! number of (player, label) slots reaches `round((1 + rho) L)`. Head labels
//! are never duplicated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_head_tail, LabelStats, TailMode, TailSet};
use crate::error::{Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    subsets: Vec<Vec<usize>>,
    num_labels: usize,
    overlap_rho: f64,
    active: Vec<Vec<usize>>,
    local: Vec<Vec<Option<usize>>>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    num_labels: usize,
    overlap_rho: f64,
    subsets: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::from_subsets(r.subsets, r.num_labels, r.overlap_rho)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr { num_labels: p.num_labels, overlap_rho: p.overlap_rho, subsets: p.subsets }
    }
}

impl Partition {
    /// Validates coverage and builds the per-label lookup tables. Subsets
    /// are stored in ascending label order.
    pub fn from_subsets(mut subsets: Vec<Vec<usize>>, num_labels: usize, overlap_rho: f64) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::Partition("no players".into()));
        }
        let n = subsets.len();
        let mut local = vec![vec![None; num_labels]; n];
        let mut active = vec![Vec::new(); num_labels];
        for (i, s) in subsets.iter_mut().enumerate() {
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Partition(format!("player {i} lists a label twice")));
            }
            for (k, &l) in s.iter().enumerate() {
                if l >= num_labels {
                    return Err(Error::Partition(format!("label {l} out of range for player {i}")));
                }
                local[i][l] = Some(k);
                active[l].push(i);
            }
        }
        if let Some(l) = active.iter().position(Vec::is_empty) {
            return Err(Error::Partition(format!("label {l} has no active player")));
        }
        Ok(Partition { subsets, num_labels, overlap_rho, active, local })
    }

    pub fn num_players(&self) -> usize {
        self.subsets.len()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn overlap_rho(&self) -> f64 {
        self.overlap_rho
    }

    pub fn subset(&self, player: usize) -> &[usize] {
        &self.subsets[player]
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// Players owning `label`, ascending.
    pub fn active_players(&self, label: usize) -> &[usize] {
        &self.active[label]
    }

    /// Position of `label` inside `player`'s subset.
    pub fn local_index(&self, player: usize, label: usize) -> Option<usize> {
        self.local[player][label]
    }

    pub fn total_slots(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }

    pub fn coverage_factor(&self) -> f64 {
        self.total_slots() as f64 / self.num_labels as f64
    }

    /// Labels of `player` that at least one other player also owns.
    pub fn overlap_set(&self, player: usize) -> Result<Vec<usize>> {
        if player >= self.num_players() {
            return Err(Error::config(format!("player {player} out of range (N = {})", self.num_players())));
        }
        Ok(self.subsets[player].iter().copied().filter(|&l| self.active[l].len() > 1).collect())
    }

    /// One line per player: `player: id id id`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# labels={} rho={}\n", self.num_labels, self.overlap_rho);
        for (i, sub) in self.subsets.iter().enumerate() {
            let ids: Vec<String> = sub.iter().map(usize::to_string).collect();
            s.push_str(&format!("{i}: {}\n", ids.join(" ")));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut num_labels = None;
        let mut rho = 0.0;
        let mut subsets = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("labels", v)) => num_labels = v.parse().ok(),
                        Some(("rho", v)) => rho = v.parse().unwrap_or(0.0),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: k + 1, msg: "expected `player: labels`".into() })?;
            let player: usize =
                head.trim().parse().map_err(|_| Error::Parse { line: k + 1, msg: "bad player id".into() })?;
            if player != subsets.len() {
                return Err(Error::Parse { line: k + 1, msg: "players must be listed in order".into() });
            }
            let ids = rest
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Parse { line: k + 1, msg: format!("bad label {t:?}") }))
                .collect::<Result<Vec<_>>>()?;
            subsets.push(ids);
        }
        let l = num_labels
            .unwrap_or_else(|| subsets.iter().flatten().copied().max().map_or(0, |m| m + 1));
        Partition::from_subsets(subsets, l, rho)
    }
}

/// Tail fraction used by [`build_partition`].
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;

/// [`build_partition_with_tail`] with the bottom-20% tail. Label sets too
/// small to have a tail get none.
pub fn build_partition(stats: &LabelStats, num_players: usize, rho: f64, seed: u64) -> Result<Partition> {
    let tail = split_head_tail(stats, DEFAULT_TAIL_FRACTION, TailMode::BottomFraction).unwrap_or_else(|_| TailSet {
        tail_labels: Vec::new(),
        head_labels: (0..stats.num_labels()).collect(),
        tail_fraction: DEFAULT_TAIL_FRACTION,
        mode: TailMode::BottomFraction,
    });
    build_partition_with_tail(stats, num_players, rho, &tail, seed)
}

pub fn build_partition_with_tail(
    stats: &LabelStats,
    num_players: usize,
    rho: f64,
    tail: &TailSet,
    seed: u64,
) -> Result<Partition> {
    let l = stats.num_labels();
    if num_players == 0 || num_players > l {
        return Err(Error::config(format!("need 1 <= players <= labels, got {num_players} players for {l} labels")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::config(format!("overlap ratio must lie in [0, 1), got {rho}")));
    }
    let order = &stats.ascending_order;
    let mut subsets = vec![Vec::new(); num_players];
    for (k, &lab) in order.iter().enumerate() {
        subsets[k % num_players].push(lab);
    }

    if num_players > 1 {
        let target = ((1.0 + rho) * l as f64).round() as usize;
        let extra = target.saturating_sub(l);
        let dupable: Vec<usize> = order.iter().copied().filter(|&lab| tail.contains(lab)).collect();
        if extra > dupable.len() + 1 {
            let reach = l + dupable.len();
            return Err(Error::config(format!(
                "overlap ratio {rho} needs {target} label slots but duplicating the {} tail labels reaches {reach}; \
                 largest usable ratio is about {:.4}",
                dupable.len(),
                (reach as f64 + 1.0) / l as f64 - 1.0
            )));
        }
        let mut rng = seeded_rng(seed, 30);
        for &lab in dupable.iter().take(extra) {
            let owners: Vec<usize> = (0..num_players).filter(|&i| subsets[i].contains(&lab)).collect();
            let min_load = (0..num_players)
                .filter(|i| !owners.contains(i))
                .map(|i| subsets[i].len())
                .min()
                .expect("at least one non-owner when N >= 2");
            let tied: Vec<usize> =
                (0..num_players).filter(|i| !owners.contains(i) && subsets[*i].len() == min_load).collect();
            let pick = tied[rng.random_range(0..tied.len())];
            subsets[pick].push(lab);
        }
    }
    Partition::from_subsets(subsets, l, rho)
}
