use serde::Serialize;

use super::EntanglementMap;

/// Live-variable bookkeeping for stage-by-stage evaluation of an entangled sum.
///
/// Variables and stages are 1-based here, matching the entanglement map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EliminationSchedule {
    /// Variables live at each stage, sorted.
    pub live_sets: Vec<Vec<usize>>,
    pub width: usize,
    /// Stage where each variable first occurs (`None` if unused).
    pub introduced_at: Vec<Option<usize>>,
    /// Stage after which each variable is summed out.
    pub eliminated_at: Vec<Option<usize>>,
}

pub fn elimination_schedule(ent: &EntanglementMap) -> EliminationSchedule {
    let k = ent.k();
    let mut introduced_at = vec![None; k];
    let mut eliminated_at = vec![None; k];
    for (stage, &var) in ent.alpha().iter().enumerate() {
        let stage = stage + 1;
        introduced_at[var - 1].get_or_insert(stage);
        eliminated_at[var - 1] = Some(stage);
    }
    let live_sets: Vec<Vec<usize>> = (1..=ent.m())
        .map(|stage| {
            (1..=k)
                .filter(|&v| match (introduced_at[v - 1], eliminated_at[v - 1]) {
                    (Some(a), Some(b)) => a <= stage && stage <= b,
                    _ => false,
                })
                .collect()
        })
        .collect();
    let width = live_sets.iter().map(Vec::len).max().unwrap_or(0);
    EliminationSchedule {
        live_sets,
        width,
        introduced_at,
        eliminated_at,
    }
}
