//! Occlusion graph, stacking statements and pick ordering.
//!
//! An edge `i → j` means instance `i` is occluded by instance `j`: the
//! fraction of `i`'s full region on which `j` is the visible instance
//! exceeds the edge threshold (default 0.1). A target whose own occlusion
//! ratio exceeds 0.3 needs its occluders cleared first.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::compositor::{InstanceAnnotation, SceneAnnotation};
use crate::mask::BitMask;

pub const DEFAULT_OCC_THRESHOLD: f64 = 0.3;
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("instance {0} has no pixels")]
    ZeroArea(u32),
    #[error("no instance with id {0}")]
    UnknownInstance(u32),
    #[error("no instance of class '{0}'")]
    UnknownClass(String),
}

/// `|occluded| / (|visible| + |occluded|)`.
pub fn occlusion_ratio(inst: &InstanceAnnotation) -> Result<f64, PlannerError> {
    let occluded = inst.occluded.count();
    let total = inst.area();
    if total == 0 {
        return Err(PlannerError::ZeroArea(inst.instance_id));
    }
    Ok(occluded as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionEdge {
    pub occludee: u32,
    pub occluder: u32,
    /// `|full(occludee) ∩ visible(occluder)| / |full(occludee)|`.
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionGraph {
    pub nodes: Vec<u32>,
    /// Sorted by `(occludee, occluder)`.
    pub edges: Vec<OcclusionEdge>,
}

impl OcclusionGraph {
    pub fn occluders_of(&self, id: u32) -> impl Iterator<Item = &OcclusionEdge> {
        self.edges.iter().filter(move |e| e.occludee == id)
    }
}

/// Scans every pixel: records which instance is visible there, then
/// tallies, for each instance, which other instances show on its full
/// region.
pub fn build_graph(scene: &SceneAnnotation, edge_threshold: f64) -> OcclusionGraph {
    const NONE: u32 = u32::MAX;
    let (w, h) = scene.dims();
    let mut owner = vec![NONE; w as usize * h as usize];
    for (k, inst) in scene.instances.iter().enumerate() {
        for (x, y) in inst.visible.iter_set() {
            owner[y as usize * w as usize + x as usize] = k as u32;
        }
    }
    let mut edges = Vec::new();
    for (i, inst) in scene.instances.iter().enumerate() {
        let full = inst.full();
        let area = full.count();
        if area == 0 {
            continue;
        }
        let mut tally = vec![0u64; scene.instances.len()];
        for (x, y) in full.iter_set() {
            let k = owner[y as usize * w as usize + x as usize];
            if k != NONE && k as usize != i {
                tally[k as usize] += 1;
            }
        }
        for (j, &count) in tally.iter().enumerate() {
            let weight = count as f64 / area as f64;
            if count > 0 && weight > edge_threshold {
                edges.push(OcclusionEdge {
                    occludee: inst.instance_id,
                    occluder: scene.instances[j].instance_id,
                    weight,
                });
            }
        }
    }
    edges.sort_by_key(|e| (e.occludee, e.occluder));
    OcclusionGraph {
        nodes: scene.instances.iter().map(|i| i.instance_id).collect(),
        edges,
    }
}

/// Instance id → class name.
pub fn class_names(scene: &SceneAnnotation) -> BTreeMap<u32, String> {
    scene
        .instances
        .iter()
        .map(|i| (i.instance_id, i.object_class.clone()))
        .collect()
}

/// One "`<occluder>` is on `<occludee>`" statement per edge, heaviest first.
pub fn interpret_stacking(graph: &OcclusionGraph, names: &BTreeMap<u32, String>) -> Vec<String> {
    let mut edges: Vec<&OcclusionEdge> = graph.edges.iter().collect();
    edges.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    let name = |id: u32| names.get(&id).cloned().unwrap_or_else(|| format!("#{id}"));
    edges
        .into_iter()
        .map(|e| format!("{} is on {}", name(e.occluder), name(e.occludee)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub occ_threshold: f64,
    pub edge_threshold: f64,
    /// Only clear the target's direct occluders.
    pub direct_only: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            occ_threshold: DEFAULT_OCC_THRESHOLD,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            direct_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub instance_id: u32,
    pub occlusion_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickPlan {
    pub target: u32,
    /// Removal order, ending with the target.
    pub order: Vec<u32>,
    pub rationale: Vec<PlanStep>,
}

/// Occlusion ratio the target would have once `removed` are gone, taking
/// list order as stacking order.
fn residual_occlusion(scene: &SceneAnnotation, target: usize, removed: &BTreeSet<u32>) -> (f64, BitMask) {
    let full = scene.instances[target].full();
    let mut covered = BitMask::new(scene.width, scene.height);
    for above in &scene.instances[target + 1..] {
        if !removed.contains(&above.instance_id) {
            covered.or_assign(&above.full()).expect("scene masks share dimensions");
        }
    }
    let residual = full.and(&covered).expect("scene masks share dimensions");
    let ratio = residual.count() as f64 / full.count().max(1) as f64;
    (ratio, residual)
}

/// Plans which instances to remove, and in what order, before picking
/// `target`.
///
/// Occluders are collected by following occluded-by edges from the target
/// (transitively unless `direct_only`). If sub-threshold occluders would
/// still leave the target above `occ_threshold`, the instance hiding the
/// most remaining target pixels is added (with its own occluders) until the
/// target is clear. The removal order is topmost first; cycles are broken by
/// taking the largest visible area first.
pub fn plan_pick(
    graph: &OcclusionGraph,
    scene: &SceneAnnotation,
    target: u32,
    opts: &PlanOptions,
) -> Result<PickPlan, PlannerError> {
    let position = |id: u32| scene.instances.iter().position(|i| i.instance_id == id);
    let t_pos = position(target).ok_or(PlannerError::UnknownInstance(target))?;
    let t_ratio = occlusion_ratio(&scene.instances[t_pos])?;
    let step = |id: u32| -> Result<PlanStep, PlannerError> {
        let inst = scene.instance(id).ok_or(PlannerError::UnknownInstance(id))?;
        Ok(PlanStep {
            instance_id: id,
            occlusion_ratio: occlusion_ratio(inst)?,
        })
    };
    if t_ratio <= opts.occ_threshold {
        return Ok(PickPlan {
            target,
            order: vec![target],
            rationale: vec![step(target)?],
        });
    }

    let mut required: BTreeSet<u32> = BTreeSet::new();
    let collect = |from: u32, required: &mut BTreeSet<u32>| {
        let mut queue = VecDeque::from([from]);
        while let Some(node) = queue.pop_front() {
            for e in graph.occluders_of(node) {
                if e.occluder != target && required.insert(e.occluder) && !opts.direct_only {
                    queue.push_back(e.occluder);
                }
            }
        }
    };
    collect(target, &mut required);
    loop {
        let (ratio, residual) = residual_occlusion(scene, t_pos, &required);
        if ratio <= opts.occ_threshold {
            break;
        }
        let extra = scene.instances[t_pos + 1..]
            .iter()
            .filter(|i| !required.contains(&i.instance_id))
            .map(|i| (residual.intersection_count(&i.full()).unwrap_or(0), i.instance_id))
            .filter(|&(hidden, _)| hidden > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((_, id)) = extra else { break };
        required.insert(id);
        if !opts.direct_only {
            collect(id, &mut required);
        }
    }

    let mut order = removal_order(graph, scene, &required);
    order.push(target);
    let rationale = order.iter().map(|&id| step(id)).collect::<Result<Vec<_>, _>>()?;
    Ok(PickPlan {
        target,
        order,
        rationale,
    })
}

/// Topmost-first order over `set`: an instance is removed only after every
/// instance in `set` occluding it. Ties go to the instance placed later.
fn removal_order(graph: &OcclusionGraph, scene: &SceneAnnotation, set: &BTreeSet<u32>) -> Vec<u32> {
    let position = |id: u32| scene.instances.iter().position(|i| i.instance_id == id).unwrap_or(0);
    let visible_area = |id: u32| scene.instance(id).map_or(0, |i| i.visible.count());
    let mut remaining: BTreeSet<u32> = set.clone();
    let mut order = Vec::with_capacity(set.len());
    while !remaining.is_empty() {
        let blocked = |id: u32| {
            graph
                .occluders_of(id)
                .any(|e| e.occluder != id && remaining.contains(&e.occluder))
        };
        let ready = remaining
            .iter()
            .copied()
            .filter(|&id| !blocked(id))
            .max_by_key(|&id| (position(id), id));
        let next = ready.unwrap_or_else(|| {
            // Cycle: largest visible area, then lowest id.
            *remaining
                .iter()
                .max_by(|&&a, &&b| visible_area(a).cmp(&visible_area(b)).then(b.cmp(&a)))
                .expect("remaining is non-empty")
        });
        remaining.remove(&next);
        order.push(next);
    }
    order
}

/// A plan for the least-occluded instance of a class, plus the other
/// candidates in order of preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPlan {
    pub plan: PickPlan,
    pub statements: Vec<String>,
    pub alternatives: Vec<u32>,
}

pub fn plan_for_class(
    scene: &SceneAnnotation,
    class: &str,
    opts: &PlanOptions,
) -> Result<ClassPlan, PlannerError> {
    let mut candidates = Vec::new();
    for inst in scene.instances.iter().filter(|i| i.object_class == class) {
        if let Ok(r) = occlusion_ratio(inst) {
            candidates.push((r, inst.instance_id));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let Some(&(_, target)) = candidates.first() else {
        return Err(PlannerError::UnknownClass(class.to_string()));
    };
    let graph = build_graph(scene, opts.edge_threshold);
    Ok(ClassPlan {
        plan: plan_pick(&graph, scene, target, opts)?,
        statements: interpret_stacking(&graph, &class_names(scene)),
        alternatives: candidates[1..].iter().map(|c| c.1).collect(),
    })
}
