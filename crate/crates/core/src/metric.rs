//! Quadruple-based schema comparison.
//!
//! Both schemas are broken into `relation(event1, event2, importance)`
//! quadruples. A one-to-one event mapping from the learned schema to the
//! gold schema is searched for, and precision/recall count the quadruples
//! that coincide under that mapping.
//!
//! Matching happens in id space: a learned quadruple matches a gold one
//! when its events map onto the gold events, the tags agree, gate tokens
//! are equal and importances agree within `importance_tol`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{EventId, Gate, SchemaLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    Subevent,
    Gate,
    Before,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Subevent => "subevent",
            Relation::Gate => "gate",
            Relation::Before => "before",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quadruple {
    pub relation: Relation,
    pub event1: String,
    /// Event name, or the gate token for [`Relation::Gate`].
    pub event2: String,
    pub importance: f64,
}

impl Quadruple {
    fn key(&self) -> (Relation, &str, &str, u64) {
        (self.relation, &self.event1, &self.event2, self.importance.to_bits())
    }
}

impl PartialEq for Quadruple {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Quadruple {}

impl PartialOrd for Quadruple {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Quadruple {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.relation, &self.event1, &self.event2)
            .cmp(&(other.relation, &other.event1, &other.event2))
            .then(self.importance.total_cmp(&other.importance))
    }
}

impl fmt::Display for Quadruple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}, {}, {})",
            self.relation, self.event1, self.event2, self.importance
        )
    }
}

pub fn decompose(lib: &SchemaLibrary) -> BTreeSet<Quadruple> {
    let name = |id: &EventId| lib.get(id).map(|e| e.normalized_name()).unwrap_or_default();
    let mut out = BTreeSet::new();
    for ev in lib.events.values() {
        let parent = ev.normalized_name();
        for p in &ev.participants {
            out.insert(Quadruple {
                relation: Relation::Subevent,
                event1: parent.clone(),
                event2: name(&p.child_id),
                importance: p.importance,
            });
        }
        if ev.gate != Gate::None {
            out.insert(Quadruple {
                relation: Relation::Gate,
                event1: parent.clone(),
                event2: ev.gate.token().to_string(),
                importance: 1.0,
            });
        }
    }
    for r in &lib.relations {
        out.insert(Quadruple {
            relation: Relation::Before,
            event1: name(&r.subject),
            event2: name(&r.object),
            importance: 1.0,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Exhaustive search is used when both schemas have at most this many events.
    pub exhaustive_limit: usize,
    pub restarts: usize,
    /// Sideways swaps allowed per start once no swap improves the count.
    pub plateau_steps: usize,
    pub seed: u64,
    pub importance_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            exhaustive_limit: 8,
            restarts: 4,
            plateau_steps: 64,
            seed: 0,
            importance_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMapping {
    pub pairs: BTreeMap<EventId, EventId>,
    pub matched_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let fscore = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            fscore,
        }
    }

    fn from_counts(matched: usize, learned: usize, gold: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 1.0 } else { n as f64 / d as f64 };
        Self::new(ratio(matched, learned), ratio(matched, gold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Target {
    Event(usize),
    Gate(Gate),
}

#[derive(Debug, Clone)]
struct IdQuad {
    relation: Relation,
    e1: usize,
    e2: Target,
    importance: f64,
}

/// A library flattened to indexed events and id-space quadruples.
struct Indexed {
    ids: Vec<EventId>,
    names: Vec<String>,
    quads: Vec<IdQuad>,
}

impl Indexed {
    fn new(lib: &SchemaLibrary) -> Self {
        let ids: Vec<EventId> = lib.events.keys().cloned().collect();
        let index: HashMap<&EventId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let names = lib.events.values().map(|e| e.normalized_name()).collect();
        let mut quads = Vec::new();
        let mut seen = BTreeSet::new();
        for ev in lib.events.values() {
            let e1 = index[&ev.id];
            for p in &ev.participants {
                if let Some(&c) = index.get(&p.child_id) {
                    if seen.insert((Relation::Subevent, e1, c)) {
                        quads.push(IdQuad {
                            relation: Relation::Subevent,
                            e1,
                            e2: Target::Event(c),
                            importance: p.importance,
                        });
                    }
                }
            }
            if ev.gate != Gate::None {
                quads.push(IdQuad {
                    relation: Relation::Gate,
                    e1,
                    e2: Target::Gate(ev.gate),
                    importance: 1.0,
                });
            }
        }
        for r in &lib.relations {
            if let (Some(&s), Some(&o)) = (index.get(&r.subject), index.get(&r.object)) {
                if seen.insert((Relation::Before, s, o)) {
                    quads.push(IdQuad {
                        relation: Relation::Before,
                        e1: s,
                        e2: Target::Event(o),
                        importance: 1.0,
                    });
                }
            }
        }
        Self { ids, names, quads }
    }
}

/// Counts learned quadruples that land on a gold quadruple under a mapping.
struct Counter {
    learned: Vec<IdQuad>,
    gold: HashMap<(Relation, usize, Target), f64>,
    tol: f64,
}

impl Counter {
    fn new(sl: &Indexed, sgt: &Indexed, tol: f64) -> Self {
        Self {
            learned: sl.quads.clone(),
            gold: sgt
                .quads
                .iter()
                .map(|q| ((q.relation, q.e1, q.e2), q.importance))
                .collect(),
            tol,
        }
    }

    /// `map[i]` is the gold index paired with learned event `i`.
    fn count(&self, map: &[Option<usize>]) -> usize {
        self.learned
            .iter()
            .filter(|q| {
                let Some(e1) = map[q.e1] else { return false };
                let e2 = match q.e2 {
                    Target::Event(j) => match map[j] {
                        Some(g) => Target::Event(g),
                        None => return false,
                    },
                    t => t,
                };
                self.gold
                    .get(&(q.relation, e1, e2))
                    .is_some_and(|imp| (imp - q.importance).abs() <= self.tol)
            })
            .count()
    }
}

fn to_mapping(sl: &Indexed, sgt: &Indexed, map: &[Option<usize>], matched: usize) -> EventMapping {
    EventMapping {
        pairs: map
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (sl.ids[i].clone(), sgt.ids[g].clone())))
            .collect(),
        matched_count: matched,
    }
}

/// Visits every maximal injective map, in lexicographic order.
fn for_each_injection(n: usize, m: usize, mut visit: impl FnMut(&[Option<usize>])) {
    // assign the smaller side fully; the larger side is chosen from
    let (small, large, flipped) = if n <= m { (n, m, false) } else { (m, n, true) };
    let mut chosen: Vec<usize> = Vec::with_capacity(small);
    let mut used = vec![false; large];
    let mut map = vec![None; n];

    fn rec(
        small: usize,
        large: usize,
        flipped: bool,
        chosen: &mut Vec<usize>,
        used: &mut [bool],
        map: &mut [Option<usize>],
        visit: &mut dyn FnMut(&[Option<usize>]),
    ) {
        if chosen.len() == small {
            map.iter_mut().for_each(|x| *x = None);
            for (s, &l) in chosen.iter().enumerate() {
                if flipped {
                    map[l] = Some(s);
                } else {
                    map[s] = Some(l);
                }
            }
            visit(map);
            return;
        }
        for l in 0..large {
            if !used[l] {
                used[l] = true;
                chosen.push(l);
                rec(small, large, flipped, chosen, used, map, visit);
                chosen.pop();
                used[l] = false;
            }
        }
    }
    rec(small, large, flipped, &mut chosen, &mut used, &mut map, &mut visit);
}

/// Optimal mapping by enumeration. Factorial in the event count.
pub fn exhaustive_mapping(sl: &SchemaLibrary, sgt: &SchemaLibrary, tol: f64) -> EventMapping {
    let (a, b) = (Indexed::new(sl), Indexed::new(sgt));
    let counter = Counter::new(&a, &b, tol);
    let mut best: Option<(usize, Vec<Option<usize>>)> = None;
    for_each_injection(a.ids.len(), b.ids.len(), |map| {
        let c = counter.count(map);
        if best.as_ref().is_none_or(|(bc, _)| c > *bc) {
            best = Some((c, map.to_vec()));
        }
    });
    let (count, map) = best.unwrap_or((0, vec![None; a.ids.len()]));
    to_mapping(&a, &b, &map, count)
}

fn bigrams(s: &str) -> Vec<(char, char)> {
    let chars: Vec<char> = s.chars().filter(|c| c.is_alphanumeric()).collect();
    chars.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Dice coefficient over character bigrams of two normalized names.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (x, y) = (bigrams(a), bigrams(b));
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let mut pool = y.clone();
    let mut shared = 0;
    for g in &x {
        if let Some(pos) = pool.iter().position(|h| h == g) {
            pool.swap_remove(pos);
            shared += 1;
        }
    }
    2.0 * shared as f64 / (x.len() + y.len()) as f64
}

/// Slot permutation: learned slot `i < n` maps to `perm[i]` when `< m`.
fn perm_to_map(perm: &[usize], n: usize, m: usize) -> Vec<Option<usize>> {
    perm[..n].iter().map(|&g| (g < m).then_some(g)).collect()
}

fn name_seed(a: &Indexed, b: &Indexed) -> Vec<usize> {
    let (n, m) = (a.ids.len(), b.ids.len());
    let k = n.max(m);
    let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            cands.push((name_similarity(&a.names[i], &b.names[j]), i, j));
        }
    }
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (s, i, j) in cands {
        if s > 0.0 && perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
        }
    }
    let mut free = (0..k).filter(|j| !used[*j]);
    for slot in perm.iter_mut() {
        if *slot == usize::MAX {
            *slot = free.next().expect("slot count matches");
        }
    }
    perm
}

fn climb(counter: &Counter, perm: &mut Vec<usize>, n: usize, m: usize, plateau: usize, rng: &mut ChaCha8Rng) -> usize {
    let k = perm.len();
    let mut current = counter.count(&perm_to_map(perm, n, m));
    let mut best_seen = (current, perm.clone());
    let mut visited: HashSet<Vec<usize>> = HashSet::from([perm.clone()]);
    let mut sideways = 0;
    loop {
        let mut best = (current, usize::MAX, usize::MAX);
        let mut level = Vec::new();
        for i in 0..k.min(n) {
            for j in i + 1..k {
                if perm[i] >= m && perm[j] >= m {
                    continue;
                }
                perm.swap(i, j);
                let c = counter.count(&perm_to_map(perm, n, m));
                if c == current && !visited.contains(perm.as_slice()) {
                    level.push((i, j));
                }
                perm.swap(i, j);
                if c > best.0 {
                    best = (c, i, j);
                }
            }
        }
        let (i, j) = if best.1 != usize::MAX {
            (best.1, best.2)
        } else if sideways < plateau && !level.is_empty() {
            sideways += 1;
            level[rng.random_range(0..level.len())]
        } else {
            *perm = best_seen.1;
            return best_seen.0;
        };
        perm.swap(i, j);
        current = counter.count(&perm_to_map(perm, n, m));
        visited.insert(perm.clone());
        if current > best_seen.0 {
            best_seen = (current, perm.clone());
        }
    }
}

/// Best-improvement pair-swap search from a name-similarity seed plus
/// `cfg.restarts` random starts, with bounded sideways moves on plateaus.
/// Ties keep the earliest start.
pub fn hill_climb_mapping(sl: &SchemaLibrary, sgt: &SchemaLibrary, cfg: &SearchConfig) -> EventMapping {
    let (a, b) = (Indexed::new(sl), Indexed::new(sgt));
    let (n, m) = (a.ids.len(), b.ids.len());
    let counter = Counter::new(&a, &b, cfg.importance_tol);
    let mut starts = vec![name_seed(&a, &b)];
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
        let mut perm: Vec<usize> = (0..n.max(m)).collect();
        perm.shuffle(&mut rng);
        starts.push(perm);
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut walk = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for mut perm in starts {
        let c = climb(&counter, &mut perm, n, m, cfg.plateau_steps, &mut walk);
        if best.as_ref().is_none_or(|(bc, _)| c > *bc) {
            best = Some((c, perm));
        }
    }
    let (count, perm) = best.expect("at least one start");
    to_mapping(&a, &b, &perm_to_map(&perm, n, m), count)
}

pub fn best_mapping(sl: &SchemaLibrary, sgt: &SchemaLibrary, cfg: &SearchConfig) -> EventMapping {
    if sl.len() <= cfg.exhaustive_limit && sgt.len() <= cfg.exhaustive_limit {
        exhaustive_mapping(sl, sgt, cfg.importance_tol)
    } else {
        hill_climb_mapping(sl, sgt, cfg)
    }
}

/// Maps every learned event onto the gold event with the same id.
pub fn identity_mapping(sl: &SchemaLibrary, sgt: &SchemaLibrary) -> BTreeMap<EventId, EventId> {
    sl.event_ids()
        .filter(|id| sgt.get(id).is_some())
        .map(|id| (id.clone(), id.clone()))
        .collect()
}

/// Matched quadruples under a given (injective) mapping.
pub fn count_matched(
    sl: &SchemaLibrary,
    sgt: &SchemaLibrary,
    pairs: &BTreeMap<EventId, EventId>,
    tol: f64,
) -> usize {
    let (a, b) = (Indexed::new(sl), Indexed::new(sgt));
    let gold_index: HashMap<&EventId, usize> = b.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let map: Vec<Option<usize>> = a
        .ids
        .iter()
        .map(|id| pairs.get(id).and_then(|g| gold_index.get(g).copied()))
        .collect();
    Counter::new(&a, &b, tol).count(&map)
}

/// Id-space quadruple count, the precision/recall denominator.
pub fn quadruple_count(lib: &SchemaLibrary) -> usize {
    Indexed::new(lib).quads.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub matched: usize,
    pub total_learned: usize,
    pub total_gold: usize,
    pub mapping: BTreeMap<EventId, EventId>,
}

impl MetricReport {
    pub fn prf(&self) -> Prf {
        Prf {
            precision: self.precision,
            recall: self.recall,
            fscore: self.fscore,
        }
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "precision: {:.6}", self.precision)?;
        writeln!(f, "recall: {:.6}", self.recall)?;
        writeln!(f, "fscore: {:.6}", self.fscore)?;
        writeln!(f, "matched: {}", self.matched)?;
        writeln!(f, "total_learned: {}", self.total_learned)?;
        writeln!(f, "total_gold: {}", self.total_gold)?;
        writeln!(f, "mapping:")?;
        for (l, g) in &self.mapping {
            writeln!(f, "  {l} -> {g}")?;
        }
        Ok(())
    }
}

pub fn report_with_mapping(
    sl: &SchemaLibrary,
    sgt: &SchemaLibrary,
    mapping: BTreeMap<EventId, EventId>,
    tol: f64,
) -> MetricReport {
    let matched = count_matched(sl, sgt, &mapping, tol);
    let (total_learned, total_gold) = (quadruple_count(sl), quadruple_count(sgt));
    let prf = Prf::from_counts(matched, total_learned, total_gold);
    MetricReport {
        precision: prf.precision,
        recall: prf.recall,
        fscore: prf.fscore,
        matched,
        total_learned,
        total_gold,
        mapping,
    }
}

pub fn report(sl: &SchemaLibrary, sgt: &SchemaLibrary, cfg: &SearchConfig) -> MetricReport {
    let mapping = best_mapping(sl, sgt, cfg);
    report_with_mapping(sl, sgt, mapping.pairs, cfg.importance_tol)
}

pub fn score(sl: &SchemaLibrary, sgt: &SchemaLibrary, cfg: &SearchConfig) -> Prf {
    report(sl, sgt, cfg).prf()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::RECYCLING_TEXT;
    use crate::schema::{parse_hierarchy_text, Participant, SchemaEvent, TemporalRelation};

    fn id(s: &str) -> EventId {
        EventId::parse(s).unwrap()
    }

    fn recycling() -> SchemaLibrary {
        parse_hierarchy_text(RECYCLING_TEXT).unwrap().library
    }

    fn q(rel: Relation, a: &str, b: &str, imp: f64) -> Quadruple {
        Quadruple {
            relation: rel,
            event1: a.into(),
            event2: b.into(),
            importance: imp,
        }
    }

    #[test]
    fn decompose_fixture() {
        let quads = decompose(&recycling());
        assert!(quads.contains(&q(Relation::Subevent, "lithium-ion recycling", "pyrometallurgical", 1.0)));
        assert!(quads.contains(&q(Relation::Gate, "lithium-ion recycling", "or", 1.0)));
        assert!(quads.contains(&q(Relation::Before, "pyrometallurgical", "bioleaching", 1.0)));
        // 8 participants, 2 gates, 6 relations
        assert_eq!(quads.len(), 16);
        assert_eq!(quadruple_count(&recycling()), 16);
    }

    #[test]
    fn decompose_trivial() {
        assert!(decompose(&SchemaLibrary::new()).is_empty());
        let mut lib = SchemaLibrary::new();
        lib.insert(SchemaEvent::new(id("ev1"), "alone"));
        assert!(decompose(&lib).is_empty());
    }

    #[test]
    fn self_score() {
        let lib = recycling();
        let cfg = SearchConfig::default();
        let r = report(&lib, &lib, &cfg);
        assert_eq!((r.precision, r.recall, r.fscore), (1.0, 1.0, 1.0));
        assert_eq!(r.matched, 16);
        assert!(r.mapping.iter().all(|(l, g)| l == g));
        let h = hill_climb_mapping(&lib, &lib, &cfg);
        assert_eq!(h.matched_count, 16);
    }

    #[test]
    fn deleting_one_participant() {
        let gold = recycling();
        let mut learned = gold.clone();
        learned
            .events
            .get_mut(&id("ev1.1"))
            .unwrap()
            .participants
            .retain(|p| p.child_id != id("ev1.1.5"));
        // ev1.1.5 stays as a detached root so its relation survives
        let prf = score(&learned, &gold, &SearchConfig::default());
        assert_eq!(prf.recall, 15.0 / 16.0);
        assert_eq!(prf.precision, 1.0);
    }

    #[test]
    fn empty_learned() {
        let prf = score(&SchemaLibrary::new(), &recycling(), &SearchConfig::default());
        assert_eq!((prf.precision, prf.recall, prf.fscore), (1.0, 0.0, 0.0));
        let both = score(&SchemaLibrary::new(), &SchemaLibrary::new(), &SearchConfig::default());
        assert_eq!(both.fscore, 1.0);
    }

    #[test]
    fn renamed_node_still_paired() {
        let gold = recycling();
        let mut learned = gold.clone();
        learned.events.get_mut(&id("ev1.3")).unwrap().name = "bio-leach".into();
        let m = best_mapping(&learned, &gold, &SearchConfig::default());
        assert_eq!(m.pairs[&id("ev1.3")], id("ev1.3"));
        assert_eq!(m.matched_count, 16);
        assert!(name_similarity("bio-leach", "bioleaching") > 0.5);
    }

    fn chain_and_star() -> (SchemaLibrary, SchemaLibrary) {
        // gold: a > b > c as siblings under r; learned: star x with three children
        let mut gold = SchemaLibrary::new();
        let mut r = SchemaEvent::new(id("ev1"), "r");
        r.gate = Gate::And;
        for (k, n) in ["a", "b", "c"].iter().enumerate() {
            let c = id(&format!("ev1.{}", k + 1));
            r.participants.push(Participant { child_id: c.clone(), importance: 1.0 });
            gold.insert(SchemaEvent::new(c, *n));
        }
        gold.insert(r);
        gold.relations.push(TemporalRelation::new(id("ev1.1"), id("ev1.2")));
        gold.relations.push(TemporalRelation::new(id("ev1.2"), id("ev1.3")));

        let mut learned = SchemaLibrary::new();
        let mut x = SchemaEvent::new(id("ev1"), "x");
        x.gate = Gate::Or;
        for (k, n) in ["p", "q", "s"].iter().enumerate() {
            let c = id(&format!("ev1.{}", k + 1));
            x.participants.push(Participant { child_id: c.clone(), importance: if k == 0 { 0.5 } else { 1.0 } });
            learned.insert(SchemaEvent::new(c, *n));
        }
        learned.insert(x);
        learned.relations.push(TemporalRelation::new(id("ev1.3"), id("ev1.1")));
        (learned, gold)
    }

    /// Independent oracle: tries every permutation of gold ids padded to
    /// the larger size and counts matches in name space after renaming.
    fn oracle(sl: &SchemaLibrary, sgt: &SchemaLibrary) -> usize {
        let l_ids: Vec<&EventId> = sl.event_ids().collect();
        let g_ids: Vec<&EventId> = sgt.event_ids().collect();
        let k = l_ids.len().max(g_ids.len());
        let mut idx: Vec<usize> = (0..k).collect();
        let gold_set: BTreeSet<(Relation, String, String, u64)> = decompose_ids(sgt);
        let mut best = 0;
        permute(&mut idx, 0, &mut |perm| {
            let rename: BTreeMap<&EventId, String> = l_ids
                .iter()
                .enumerate()
                .filter(|(i, _)| perm[*i] < g_ids.len())
                .map(|(i, l)| (*l, g_ids[perm[i]].to_string()))
                .collect();
            let count = decompose_ids(sl)
                .into_iter()
                .filter(|(rel, a, b, imp)| {
                    let ma = sl_rename(&rename, a);
                    let mb = if *rel == Relation::Gate { Some(b.clone()) } else { sl_rename(&rename, b) };
                    match (ma, mb) {
                        (Some(a), Some(b)) => gold_set.contains(&(*rel, a, b, *imp)),
                        _ => false,
                    }
                })
                .count();
            best = best.max(count);
        });
        best
    }

    fn sl_rename(rename: &BTreeMap<&EventId, String>, raw: &str) -> Option<String> {
        rename.iter().find(|(k, _)| k.as_str() == raw).map(|(_, v)| v.clone())
    }

    fn decompose_ids(lib: &SchemaLibrary) -> BTreeSet<(Relation, String, String, u64)> {
        let mut s = BTreeSet::new();
        for ev in lib.events.values() {
            for p in &ev.participants {
                s.insert((Relation::Subevent, ev.id.to_string(), p.child_id.to_string(), p.importance.to_bits()));
            }
            if ev.gate != Gate::None {
                s.insert((Relation::Gate, ev.id.to_string(), ev.gate.token().into(), 1f64.to_bits()));
            }
        }
        for r in &lib.relations {
            s.insert((Relation::Before, r.subject.to_string(), r.object.to_string(), 1f64.to_bits()));
        }
        s
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn chain_versus_star_matches_oracle() {
        let (learned, gold) = chain_and_star();
        let m = exhaustive_mapping(&learned, &gold, 1e-9);
        let expected = oracle(&learned, &gold);
        // two unit-importance participants plus one relation
        assert_eq!(expected, 3);
        assert_eq!(m.matched_count, expected);
        assert_eq!(hill_climb_mapping(&learned, &gold, &SearchConfig::default()).matched_count, expected);
    }

    #[test]
    fn unequal_sizes() {
        let gold = recycling();
        let mut learned = SchemaLibrary::new();
        let mut root = SchemaEvent::new(id("ev1"), "lithium-ion recycling");
        root.gate = Gate::Or;
        learned.insert(root);
        let m = exhaustive_mapping(&learned, &gold, 1e-9);
        assert_eq!(m.matched_count, 1);
        let m = exhaustive_mapping(&gold, &learned, 1e-9);
        assert_eq!(m.matched_count, 1);
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn importance_tolerance() {
        let gold = recycling();
        let mut learned = gold.clone();
        learned.events.get_mut(&id("ev1")).unwrap().participants[0].importance = 1.0 - 1e-6;
        let strict = score(&learned, &gold, &SearchConfig::default());
        assert!(strict.recall < 1.0);
        let loose = score(&learned, &gold, &SearchConfig { importance_tol: 1e-3, ..Default::default() });
        assert_eq!(loose.recall, 1.0);
    }

    #[test]
    fn prf_formula() {
        assert_eq!(Prf::new(0.0, 0.0).fscore, 0.0);
        assert_eq!(Prf::new(0.5, 1.0).fscore, 2.0 * 0.5 / 1.5);
    }

    #[test]
    fn report_text() {
        let lib = recycling();
        let text = report(&lib, &lib, &SearchConfig::default()).to_string();
        for field in ["precision", "recall", "fscore", "matched", "total_learned", "total_gold", "mapping"] {
            assert!(text.contains(field), "{text}");
        }
    }
}
