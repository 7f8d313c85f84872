//! Scene-similarity graph, connected components and component-preserving
//! train/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Condition, Difficulty, PairSet, SampleMeta};

/// Undirected weighted graph over scenes.
///
/// Edges are stored in both orientations with identical weights; pairs with
/// zero similarity are absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    pub nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), f64>,
}

impl SceneGraph {
    pub fn with_nodes<I, S>(nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges: BTreeMap::new(),
        }
    }

    /// Adds or replaces the undirected edge `a`–`b`. Self-edges and
    /// non-positive weights are ignored.
    pub fn set_edge(&mut self, a: &str, b: &str, weight: f64) {
        if a == b || !(weight > 0.0) {
            return;
        }
        self.nodes.insert(a.to_string());
        self.nodes.insert(b.to_string());
        self.edges.insert((a.to_string(), b.to_string()), weight);
        self.edges.insert((b.to_string(), a.to_string()), weight);
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        self.edges.get(&(a.to_string(), b.to_string())).copied()
    }

    /// Each undirected edge once, as `(a, b, w)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.edges
            .iter()
            .filter(|((a, b), _)| a < b)
            .map(|((a, b), &w)| (a.as_str(), b.as_str(), w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len() / 2
    }

    pub fn degree(&self, node: &str) -> usize {
        self.edges
            .range((node.to_string(), String::new())..)
            .take_while(|((a, _), _)| a == node)
            .count()
    }
}

/// Fraction of queries in `scene_a` with at least one positive among
/// `scene_b_ids`.
pub fn scene_similarity(scene_a: &[PairSet], scene_b_ids: &HashSet<String>) -> Result<f64> {
    if scene_a.is_empty() {
        return Err(invalid("scene similarity needs at least one query"));
    }
    let hits = scene_a
        .iter()
        .filter(|p| p.positives.iter().any(|id| scene_b_ids.contains(id)))
        .count();
    Ok(hits as f64 / scene_a.len() as f64)
}

/// Builds the scene graph. Edge weight is the larger of the two directional
/// similarities.
pub fn build_graph<T>(pairsets: &[PairSet], meta: &[SampleMeta<T>]) -> Result<SceneGraph> {
    let scene_of: HashMap<&str, &str> = meta
        .iter()
        .map(|m| (m.sample_id.as_str(), m.scene_id.as_str()))
        .collect();
    let resolve = |id: &str| -> Result<&str> {
        scene_of
            .get(id)
            .copied()
            .ok_or_else(|| invalid(format!("sample `{id}` is not in the pose metadata")))
    };

    let mut queries_per_scene: HashMap<&str, usize> = HashMap::new();
    // (scene_a, scene_b) -> number of queries in a with a positive in b
    let mut hits: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for p in pairsets {
        let sa = resolve(&p.query_id)?;
        *queries_per_scene.entry(sa).or_default() += 1;
        let mut touched = BTreeSet::new();
        for id in &p.positives {
            let sb = resolve(id)?;
            if sb != sa {
                touched.insert(sb);
            }
        }
        for sb in touched {
            *hits.entry((sa, sb)).or_default() += 1;
        }
    }

    let mut graph = SceneGraph::with_nodes(meta.iter().map(|m| m.scene_id.clone()));
    let directional = |a: &str, b: &str| -> f64 {
        match (hits.get(&(a, b)), queries_per_scene.get(a)) {
            (Some(&h), Some(&n)) => h as f64 / n as f64,
            _ => 0.0,
        }
    };
    for &(a, b) in hits.keys() {
        let w = directional(a, b).max(directional(b, a));
        graph.set_edge(a, b, w);
    }
    Ok(graph)
}

/// Connected components of a scene graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    /// Components with at least one edge, ordered by their smallest scene id.
    pub components: Vec<BTreeSet<String>>,
    /// Scenes with no incident edges.
    pub isolated: BTreeSet<String>,
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

pub fn connected_components(graph: &SceneGraph) -> Components {
    let nodes: Vec<&String> = graph.nodes.iter().collect();
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut sets = DisjointSets::new(nodes.len());
    let mut has_edge = vec![false; nodes.len()];
    for (a, b, _) in graph.edges() {
        let (ia, ib) = (index[a], index[b]);
        has_edge[ia] = true;
        has_edge[ib] = true;
        sets.union(ia, ib);
    }

    let mut out = Components::default();
    let mut by_root: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if has_edge[i] {
            let r = sets.find(i);
            by_root.entry(r).or_default().insert((*n).clone());
        } else {
            out.isolated.insert((*n).clone());
        }
    }
    out.components = by_root.into_values().collect();
    out.components.sort_by(|a, b| a.first().cmp(&b.first()));
    out
}

/// Sample counts of one split (or one component).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    /// Indexed by `Condition::index`.
    pub by_condition: [usize; 4],
    /// Indexed by `Difficulty::index`; counts queries with at least one positive.
    pub by_difficulty: [usize; 3],
    pub scenes: usize,
    pub samples: usize,
}

impl SplitStats {
    /// Tallies samples belonging to `scenes`.
    pub fn compute<T>(scenes: &BTreeSet<String>, meta: &[SampleMeta<T>], pairsets: &[PairSet]) -> Self {
        let mut stats = SplitStats { scenes: scenes.len(), ..Default::default() };
        let mut in_split = HashSet::new();
        for m in meta.iter().filter(|m| scenes.contains(&m.scene_id)) {
            stats.by_condition[m.condition.index()] += 1;
            stats.samples += 1;
            in_split.insert(m.sample_id.as_str());
        }
        for p in pairsets {
            if let (true, Some(d)) = (in_split.contains(p.query_id.as_str()), p.difficulty) {
                stats.by_difficulty[d.index()] += 1;
            }
        }
        stats
    }

    pub fn condition(&self, c: Condition) -> usize {
        self.by_condition[c.index()]
    }

    pub fn difficulty(&self, d: Difficulty) -> usize {
        self.by_difficulty[d.index()]
    }

    pub fn add(&mut self, other: &SplitStats) {
        for i in 0..4 {
            self.by_condition[i] += other.by_condition[i];
        }
        for i in 0..3 {
            self.by_difficulty[i] += other.by_difficulty[i];
        }
        self.scenes += other.scenes;
        self.samples += other.samples;
    }
}

/// Scene-level split. Every connected component lies wholly in one side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_scenes: BTreeSet<String>,
    pub test_scenes: BTreeSet<String>,
    pub isolated_scenes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub assignment: SplitAssignment,
    pub warnings: Vec<String>,
}

// Quantities the greedy split balances: rare conditions first, then the
// overall sample count.
fn balance_counts(s: &SplitStats) -> [usize; 3] {
    [s.condition(Condition::Night), s.condition(Condition::NightRain), s.samples]
}

/// Moves whole components into the test split until the test side holds at
/// least `test_fraction` of the Night samples, the NightRain samples and the
/// overall samples.
///
/// Each step picks the component whose addition brings the test side
/// closest to the targets (sum of relative deviations), breaking ties by
/// smaller component size and then smallest scene id. The training side is
/// never emptied. `seed` is recorded for interface stability; the tie-break
/// chain is total, so the result does not depend on it.
pub fn balanced_split(
    components: &[BTreeSet<String>],
    stats: &[SplitStats],
    isolated: &BTreeSet<String>,
    test_fraction: f64,
    _seed: u64,
) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    if components.len() != stats.len() {
        return Err(invalid(format!(
            "{} components but {} stats entries",
            components.len(),
            stats.len()
        )));
    }

    let counts: Vec<[usize; 3]> = stats.iter().map(balance_counts).collect();
    let mut totals = [0usize; 3];
    for c in &counts {
        for i in 0..3 {
            totals[i] += c[i];
        }
    }
    let targets: Vec<f64> = totals.iter().map(|&t| test_fraction * t as f64).collect();
    let deviation = |test: &[usize; 3]| -> f64 {
        (0..3)
            .filter(|&i| totals[i] > 0)
            .map(|i| (test[i] as f64 - targets[i]).abs() / totals[i] as f64)
            .sum()
    };
    let met = |test: &[usize; 3]| (0..3).all(|i| test[i] as f64 >= targets[i]);

    let mut in_test = vec![false; components.len()];
    let mut test = [0usize; 3];
    let mut warnings = Vec::new();
    while !met(&test) {
        let remaining_in_train = in_test.iter().filter(|&&t| !t).count();
        if remaining_in_train <= 1 {
            warnings.push(format!(
                "cannot reach test fraction {test_fraction}: too few components to divide \
                 (test holds night {}/{}, night_rain {}/{}, samples {}/{})",
                test[0], totals[0], test[1], totals[1], test[2], totals[2]
            ));
            break;
        }
        let best = (0..components.len())
            .filter(|&i| !in_test[i])
            .min_by(|&a, &b| {
                let next = |i: usize| {
                    let mut t = test;
                    for j in 0..3 {
                        t[j] += counts[i][j];
                    }
                    deviation(&t)
                };
                next(a)
                    .total_cmp(&next(b))
                    .then(components[a].len().cmp(&components[b].len()))
                    .then(components[a].first().cmp(&components[b].first()))
            })
            .expect("at least two components remain");
        in_test[best] = true;
        for j in 0..3 {
            test[j] += counts[best][j];
        }
    }

    let mut assignment = SplitAssignment { isolated_scenes: isolated.clone(), ..Default::default() };
    for (comp, &t) in components.iter().zip(&in_test) {
        let side = if t { &mut assignment.test_scenes } else { &mut assignment.train_scenes };
        side.extend(comp.iter().cloned());
    }
    Ok(SplitOutcome { assignment, warnings })
}

/// Renders train/test statistics in a fixed-width table with one row per
/// split: condition counts, difficulty counts, scene and sample totals.
pub fn stats_table(rows: &[(&str, &SplitStats)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>8} {:>8}",
        "", "D", "N", "D&R", "N&R", "E", "SH", "H", "Scene", "Sample"
    );
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>8} {:>8}",
            name,
            s.by_condition[0],
            s.by_condition[1],
            s.by_condition[2],
            s.by_condition[3],
            s.by_difficulty[0],
            s.by_difficulty[1],
            s.by_difficulty[2],
            s.scenes,
            s.samples
        );
    }
    out
}
