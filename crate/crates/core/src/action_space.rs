//! Action schemas and candidate enumeration.
//!
//! A schema names an action type and the ordered object kinds it consumes;
//! the candidate set at any point is the Cartesian product of each schema's
//! slot pools, concatenated in schema declaration order. Pure functions over
//! an immutable pool snapshot.

use serde::{Deserialize, Serialize};

use crate::registry::{ObjectId, PoolView};

/// An action type: its name and the ordered object kinds it consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub slots: Vec<String>,
}

impl ActionSchema {
    pub fn new(name: &str, slots: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            slots: slots.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A fully bound action: schema name plus one object per slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub schema: String,
    pub bindings: Vec<ObjectId>,
}

/// An action addressed by labels instead of ids, one per slot. Pipeline
/// scripts and scripted policies use this form so the same plan can run
/// against different pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub action: String,
    pub objects: Vec<String>,
}

/// How to treat repeated same-kind slots (the two model slots of a merge):
/// unordered emits each pair once and excludes self-pairs; ordered emits the
/// full product. Symmetric merge weights make ordered pairs redundant, so
/// unordered is the default; configs with asymmetric weight tuples resolve
/// to ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    #[default]
    Unordered,
    Ordered,
}

/// One odometer wheel: the slot positions it fills and the id tuples it can
/// assign to them. Simple slots fill one position; grouped same-kind slots
/// fill all their positions from one combination.
struct Wheel {
    positions: Vec<usize>,
    choices: Vec<Vec<ObjectId>>,
}

fn wheels_for_schema(schema: &ActionSchema, pool: &PoolView, mode: PairMode) -> Vec<Wheel> {
    let mut wheels = Vec::new();
    let mut consumed = vec![false; schema.slots.len()];
    for (pos, kind) in schema.slots.iter().enumerate() {
        if consumed[pos] {
            continue;
        }
        let positions: Vec<usize> = schema
            .slots
            .iter()
            .enumerate()
            .filter(|(_, k)| *k == kind)
            .map(|(p, _)| p)
            .collect();
        let objects = pool.objects(kind);
        let ids: Vec<ObjectId> = objects.iter().map(|(id, _)| *id).collect();
        if positions.len() > 1 && mode == PairMode::Unordered {
            for &p in &positions {
                consumed[p] = true;
            }
            wheels.push(Wheel {
                choices: combinations(&ids, positions.len()),
                positions,
            });
        } else {
            consumed[pos] = true;
            wheels.push(Wheel {
                positions: vec![pos],
                choices: ids.into_iter().map(|id| vec![id]).collect(),
            });
        }
    }
    wheels
}

/// All strictly increasing index combinations of size `r`, in lexicographic
/// order.
fn combinations(ids: &[ObjectId], r: usize) -> Vec<Vec<ObjectId>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(r);
    fn rec(ids: &[ObjectId], r: usize, start: usize, current: &mut Vec<ObjectId>, out: &mut Vec<Vec<ObjectId>>) {
        if current.len() == r {
            out.push(current.clone());
            return;
        }
        for i in start..ids.len() {
            current.push(ids[i]);
            rec(ids, r, i + 1, current, out);
            current.pop();
        }
    }
    rec(ids, r, 0, &mut current, &mut out);
    out
}

/// Enumerate every concrete action available over `pool`, in schema
/// declaration order then lexicographic binding order. Deterministic; a
/// schema with any empty slot kind contributes zero candidates.
pub fn enumerate_candidates(
    schemas: &[ActionSchema],
    pool: &PoolView,
    mode: PairMode,
) -> Vec<ActionCandidate> {
    let mut out = Vec::new();
    for schema in schemas {
        let wheels = wheels_for_schema(schema, pool, mode);
        if wheels.iter().any(|w| w.choices.is_empty()) {
            continue;
        }
        let mut cursors = vec![0usize; wheels.len()];
        loop {
            let mut bindings = vec![ObjectId(0); schema.slots.len()];
            for (wheel, &cursor) in wheels.iter().zip(&cursors) {
                for (slot, &id) in wheel.positions.iter().zip(&wheel.choices[cursor]) {
                    bindings[*slot] = id;
                }
            }
            out.push(ActionCandidate {
                schema: schema.name.clone(),
                bindings,
            });
            // Advance the odometer, rightmost wheel fastest.
            let mut i = wheels.len();
            let mut wrapped = true;
            while i > 0 {
                i -= 1;
                cursors[i] += 1;
                if cursors[i] < wheels[i].choices.len() {
                    wrapped = false;
                    break;
                }
                cursors[i] = 0;
            }
            if wrapped {
                break;
            }
        }
    }
    out
}

/// Number of candidates [`enumerate_candidates`] would return, computed from
/// pool sizes alone. `sizes(kind)` is the object count for that kind.
pub fn count_candidates(
    schemas: &[ActionSchema],
    sizes: impl Fn(&str) -> usize,
    mode: PairMode,
) -> u64 {
    let mut total = 0u64;
    for schema in schemas {
        let mut per_schema = 1u64;
        let mut seen: Vec<&str> = Vec::new();
        for kind in &schema.slots {
            if seen.contains(&kind.as_str()) {
                continue;
            }
            seen.push(kind);
            let n = sizes(kind) as u64;
            let r = schema.slots.iter().filter(|k| *k == kind).count() as u64;
            let factor = if r > 1 && mode == PairMode::Unordered {
                binomial(n, r)
            } else {
                n.pow(r as u32)
            };
            per_schema = per_schema.saturating_mul(factor);
        }
        total += per_schema;
    }
    total
}

fn binomial(n: u64, r: u64) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc = 1u64;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
