//! Turns an error report into label-state edits: phantoms erased, split
//! fragments unified, merged masks quarantined, noisy views penalized, and
//! everything healthy pulled onto global IDs.

use super::detect::{error_scores, ErrorReport, Finding};
use super::votes::{ForwardVoteTable, InverseVoteTable, VoteTarget};
use crate::scene::RenderedView;
use std::collections::{BTreeMap, BTreeSet};

/// The cross-view labeling being built up: which (view, local ID) pairs map
/// to which global ID, which were judged spurious, and how trustworthy each
/// view has looked so far.
#[derive(Debug, Clone)]
pub struct GlobalLabelState {
    /// (view, local) -> minted global ID. Resolve through `root` before
    /// comparing: unification happens by union, not rewrite.
    pub assigned: BTreeMap<(usize, u32), u32>,
    /// (view, local) pairs erased as phantoms; never reassigned.
    pub eliminated: BTreeSet<(usize, u32)>,
    /// Per-view penalty from merge/loss findings.
    pub error_scores: Vec<u32>,
    /// Main views in processing order.
    pub processed: Vec<usize>,
    pub iterations: usize,
    next_global: u32,
    /// Union-find parents over minted IDs; index 0 unused.
    parent: Vec<u32>,
}

impl GlobalLabelState {
    pub fn new(n_views: usize) -> Self {
        GlobalLabelState {
            assigned: BTreeMap::new(),
            eliminated: BTreeSet::new(),
            error_scores: vec![0; n_views],
            processed: Vec::new(),
            iterations: 0,
            next_global: 0,
            parent: vec![0],
        }
    }

    pub fn mint(&mut self) -> u32 {
        self.next_global += 1;
        self.parent.push(self.next_global);
        self.next_global
    }

    /// Representative of a global ID's union class (smallest member).
    pub fn root(&mut self, g: u32) -> u32 {
        let mut g = g;
        while self.parent[g as usize] != g {
            let gp = self.parent[g as usize];
            self.parent[g as usize] = self.parent[gp as usize];
            g = self.parent[g as usize];
        }
        g
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.root(a), self.root(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi as usize] = lo;
        }
    }

    /// Bind a local instance to a global ID. A conflicting earlier binding
    /// unifies instead of being overwritten; eliminated instances stay dead.
    pub fn assign(&mut self, view: usize, local: u32, g: u32) {
        if self.eliminated.contains(&(view, local)) {
            return;
        }
        if let Some(&g0) = self.assigned.get(&(view, local)) {
            self.union(g0, g);
        } else {
            self.assigned.insert((view, local), g);
        }
    }

    pub fn eliminate(&mut self, view: usize, local: u32) {
        self.assigned.remove(&(view, local));
        self.eliminated.insert((view, local));
    }

    pub fn global_of(&mut self, view: usize, local: u32) -> Option<u32> {
        let g = *self.assigned.get(&(view, local))?;
        Some(self.root(g))
    }

    /// Distinct global classes currently assigned.
    pub fn distinct_globals(&mut self) -> usize {
        let gs: Vec<u32> = self.assigned.values().copied().collect();
        let roots: BTreeSet<u32> = gs.into_iter().map(|g| self.root(g)).collect();
        roots.len()
    }
}

/// Zero out every pixel of one instance: no label, no class, empty depth.
pub fn erase_instance(view: &mut RenderedView, id: u32) {
    for i in 0..view.instance.len() {
        if view.instance[i] == id {
            view.instance[i] = 0;
            view.semantic[i] = 0;
            view.depth[i] = f32::INFINITY;
        }
    }
}

/// Modal already-assigned global among the forward argmax targets of the
/// given main instances, tallied by union root; ties favor the smaller ID.
fn modal_counterpart(
    state: &mut GlobalLabelState,
    fwd: &ForwardVoteTable,
    members: &[usize],
) -> Option<u32> {
    let mut tally: BTreeMap<u32, u32> = BTreeMap::new();
    for &mi in members {
        for ai in fwd.valid_views(mi) {
            if let Some(VoteTarget::Aux(j)) = fwd.argmax(mi, ai) {
                let av = fwd.aux_views[ai];
                if let Some(g) = state.global_of(av, j) {
                    *tally.entry(g).or_insert(0) += 1;
                }
            }
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(g, _)| g)
}

/// Fold one main view's findings into the global state. Order matters:
/// eliminations first so nothing later binds a phantom, then unifications,
/// then fresh assignment, then cross-view propagation.
pub fn apply_strategies(
    state: &mut GlobalLabelState,
    report: &ErrorReport,
    fwd: &ForwardVoteTable,
    inv: &InverseVoteTable,
    working: &mut [RenderedView],
) {
    let mv = fwd.main_view;

    let phantoms: BTreeSet<u32> = report.phantoms().into_iter().collect();
    for &id in &phantoms {
        erase_instance(&mut working[mv], id);
        state.eliminate(mv, id);
    }

    // Split fragments share one global: unify any existing bindings, else
    // adopt the cluster's modal assigned counterpart, else mint.
    let mut clustered: BTreeSet<u32> = BTreeSet::new();
    for cluster in report.split_clusters() {
        clustered.extend(cluster.iter().copied());
        let mut g: Option<u32> = None;
        for &id in &cluster {
            if let Some(gi) = state.global_of(mv, id) {
                match g {
                    None => g = Some(gi),
                    Some(g0) => state.union(g0, gi),
                }
            }
        }
        let g = g.unwrap_or_else(|| {
            let members: Vec<usize> =
                cluster.iter().filter_map(|&id| fwd.main_index(id)).collect();
            modal_counterpart(state, fwd, &members).unwrap_or_else(|| state.mint())
        });
        for &id in &cluster {
            state.assign(mv, id, g);
        }
    }

    // Merged masks cover several objects; any single ID would be wrong, so
    // they sit out this round.
    let merged: BTreeSet<u32> = report.merged_mains().into_iter().collect();

    // Everything else unassigned adopts its majority counterpart or mints.
    for (mi, &id) in fwd.main_ids.iter().enumerate() {
        if phantoms.contains(&id) || merged.contains(&id) || clustered.contains(&id) {
            continue;
        }
        if state.assigned.contains_key(&(mv, id)) {
            continue;
        }
        let g = modal_counterpart(state, fwd, &[mi]).unwrap_or_else(|| state.mint());
        state.assign(mv, id, g);
    }

    // View-local splits: both fragments inherit the main instance's global.
    for f in &report.findings {
        if let Finding::SplitInView { view, main, aux_ids } = f {
            if let Some(g) = state.global_of(mv, *main) {
                for &j in aux_ids {
                    state.assign(*view, j, g);
                }
            }
        }
    }

    for (view, pts) in error_scores(report) {
        state.error_scores[view] += pts;
    }

    // Propagate to aux instances that agree with an assigned main in both
    // directions; one such anchor view is enough.
    for (ai, &av) in fwd.aux_views.iter().enumerate() {
        let Some(per_aux) = inv.per_view.get(&av) else { continue };
        for &j in per_aux.keys() {
            if state.assigned.contains_key(&(av, j)) || state.eliminated.contains(&(av, j)) {
                continue;
            }
            let Some(m) = inv.argmax(av, j) else { continue };
            let mi = fwd.main_index(m).expect("inverse votes only name known mains");
            if fwd.argmax(mi, ai) == Some(VoteTarget::Aux(j)) {
                if let Some(g) = state.global_of(mv, m) {
                    state.assign(av, j, g);
                }
            }
        }
    }
}
