//! Cross-view consistency checks over the vote tables. Each finding names a
//! suspected label defect: phantom instances, one object split across IDs,
//! several objects merged under one ID, and view-local variants of each.

use super::votes::{ForwardVoteTable, InverseVoteTable, VoteTarget};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Finding {
    /// Main instance that mostly lands on background: not real geometry.
    Phantom { main: u32, support: f64 },
    /// Main instances that consistently land on a shared aux instance:
    /// fragments of one object.
    SplitMain { mains: Vec<u32>, support: f64 },
    /// Main instance that several aux instances point back at: its mask
    /// covers more than one object.
    MergedMain { main: u32, aux_count: usize, support: f64 },
    /// One aux view where several of its instances map to the same
    /// (unmerged) main: that view over-segmented the object.
    SplitInView { view: usize, main: u32, aux_ids: Vec<u32> },
    /// One aux view where several (unsplit) mains land on the same aux
    /// instance: that view merged objects.
    MergedInView { view: usize, aux_id: u32, mains: Vec<u32> },
    /// A healthy main instance invisible in specific views: those views
    /// dropped its label.
    MissingInView { view: usize, main: u32 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub findings: Vec<Finding>,
}

impl ErrorReport {
    pub fn phantoms(&self) -> Vec<u32> {
        self.findings
            .iter()
            .filter_map(|f| match f {
                Finding::Phantom { main, .. } => Some(*main),
                _ => None,
            })
            .collect()
    }

    pub fn split_clusters(&self) -> Vec<Vec<u32>> {
        self.findings
            .iter()
            .filter_map(|f| match f {
                Finding::SplitMain { mains, .. } => Some(mains.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn merged_mains(&self) -> Vec<u32> {
        self.findings
            .iter()
            .filter_map(|f| match f {
                Finding::MergedMain { main, .. } => Some(*main),
                _ => None,
            })
            .collect()
    }
}

/// Minimal union-find over a fixed id universe.
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so cluster order is stable.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Run every consistency check against one main view's vote tables.
pub fn detect_errors(fwd: &ForwardVoteTable, inv: &InverseVoteTable) -> ErrorReport {
    let n_main = fwd.main_ids.len();
    let n_aux = fwd.aux_views.len();
    let mut findings = Vec::new();

    // Per-main cached argmaxes and valid views.
    let valid: Vec<Vec<usize>> = (0..n_main).map(|mi| fwd.valid_views(mi)).collect();
    let argmax: Vec<Vec<Option<VoteTarget>>> = (0..n_main)
        .map(|mi| (0..n_aux).map(|ai| fwd.argmax(mi, ai)).collect())
        .collect();

    // Phantoms: background wins in a majority of the views that see anything.
    let mut phantom = vec![false; n_main];
    for mi in 0..n_main {
        let denom = valid[mi].len();
        if denom == 0 {
            continue;
        }
        let bg = valid[mi]
            .iter()
            .filter(|&&ai| argmax[mi][ai] == Some(VoteTarget::Bg))
            .count();
        let support = bg as f64 / denom as f64;
        if support > 0.5 {
            phantom[mi] = true;
            findings.push(Finding::Phantom { main: fwd.main_ids[mi], support });
        }
    }

    // Forward claims: which mains argmax onto which aux instance, per view.
    // An aux instance claimed by some OTHER main is that main's counterpart,
    // not a fragment — boundary bleed from a big neighbor must not drag it
    // into merge/split evidence below.
    let mut claimed: Vec<BTreeMap<u32, Vec<u32>>> = vec![BTreeMap::new(); n_aux];
    for mi in 0..n_main {
        if phantom[mi] {
            continue;
        }
        for ai in 0..n_aux {
            if let Some(VoteTarget::Aux(j)) = argmax[mi][ai] {
                claimed[ai].entry(j).or_default().push(fwd.main_ids[mi]);
            }
        }
    }
    let foreign_claim = |ai: usize, j: u32, m: u32| -> bool {
        claimed[ai].get(&j).is_some_and(|mains| mains.iter().any(|&m2| m2 != m))
    };

    // Split mains: pairs that co-land on the same aux instance in a majority
    // of their shared valid views. Union the pairs into clusters.
    let mut uf = UnionFind::new(n_main);
    let mut paired = vec![false; n_main];
    let mut pair_support: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for mi in 0..n_main {
        if phantom[mi] {
            continue;
        }
        for mj in mi + 1..n_main {
            if phantom[mj] {
                continue;
            }
            let shared: Vec<usize> = valid[mi]
                .iter()
                .copied()
                .filter(|ai| valid[mj].contains(ai))
                .collect();
            if shared.is_empty() {
                continue;
            }
            let agree = shared
                .iter()
                .filter(|&&ai| {
                    matches!(
                        (argmax[mi][ai], argmax[mj][ai]),
                        (Some(VoteTarget::Aux(a)), Some(VoteTarget::Aux(b))) if a == b
                    )
                })
                .count();
            let support = agree as f64 / shared.len() as f64;
            if support > 0.5 {
                uf.union(mi, mj);
                paired[mi] = true;
                paired[mj] = true;
                pair_support.insert((mi, mj), support);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for mi in 0..n_main {
        if paired[mi] {
            clusters.entry(uf.find(mi)).or_default().push(mi);
        }
    }
    for (_, members) in clusters {
        let support = members
            .iter()
            .flat_map(|&a| members.iter().map(move |&b| (a.min(b), a.max(b))))
            .filter_map(|key| pair_support.get(&key))
            .fold(0.0f64, |acc, &s| acc.max(s));
        findings.push(Finding::SplitMain {
            mains: members.iter().map(|&mi| fwd.main_ids[mi]).collect(),
            support,
        });
    }

    // Merged mains: views whose own instances point back at one main two or
    // more times. Local IDs are view-scoped, so the count happens per view
    // and the majority is taken over views that show this pattern.
    let mut merged = vec![false; n_main];
    for mi in 0..n_main {
        if phantom[mi] {
            continue;
        }
        let denom = valid[mi].len();
        if denom == 0 {
            continue;
        }
        let m_id = fwd.main_ids[mi];
        let mut supporting = 0usize;
        let mut max_backers = 0usize;
        for &ai in &valid[mi] {
            let av = fwd.aux_views[ai];
            let backers = inv
                .per_view
                .get(&av)
                .map(|per_aux| {
                    per_aux
                        .keys()
                        .filter(|&&j| {
                            inv.argmax(av, j) == Some(m_id) && !foreign_claim(ai, j, m_id)
                        })
                        .count()
                })
                .unwrap_or(0);
            if backers >= 2 {
                supporting += 1;
                max_backers = max_backers.max(backers);
            }
        }
        let support = supporting as f64 / denom as f64;
        if support > 0.5 {
            merged[mi] = true;
            findings.push(Finding::MergedMain { main: m_id, aux_count: max_backers, support });
        }
    }

    // View-local over-segmentation: inside one aux view, several aux
    // instances pointing back at one main (skipping mains already flagged as
    // merged — there the aux side is right and the main side is wrong).
    for (ai, &av) in fwd.aux_views.iter().enumerate() {
        if let Some(per_aux) = inv.per_view.get(&av) {
            let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for (&j, _) in per_aux {
                if let Some(m) = inv.argmax(av, j) {
                    let mi = fwd.main_index(m).expect("inverse votes only name known mains");
                    if !merged[mi] && !phantom[mi] && !foreign_claim(ai, j, m) {
                        groups.entry(m).or_default().push(j);
                    }
                }
            }
            for (m, aux_ids) in groups {
                if aux_ids.len() >= 2 {
                    findings.push(Finding::SplitInView { view: av, main: m, aux_ids });
                }
            }
        }
        // View-local merges: several unsplit mains whose forward argmax in
        // this view is the same aux instance.
        let mut fwd_groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for mi in 0..n_main {
            if paired[mi] || phantom[mi] {
                continue;
            }
            if let Some(VoteTarget::Aux(j)) = argmax[mi][ai] {
                fwd_groups.entry(j).or_default().push(fwd.main_ids[mi]);
            }
        }
        for (j, mains) in fwd_groups {
            if mains.len() >= 2 {
                findings.push(Finding::MergedInView { view: av, aux_id: j, mains });
            }
        }
    }

    // View-local losses: a healthy main that one specific view claims is
    // background.
    for mi in 0..n_main {
        if phantom[mi] {
            continue;
        }
        for &ai in &valid[mi] {
            if argmax[mi][ai] == Some(VoteTarget::Bg) {
                findings.push(Finding::MissingInView {
                    view: fwd.aux_views[ai],
                    main: fwd.main_ids[mi],
                });
            }
        }
    }

    ErrorReport { findings }
}

/// Views penalized for view-local merge/loss findings, one point each.
/// View-local splits are repaired by ID unification instead of penalized.
pub fn error_scores(report: &ErrorReport) -> BTreeMap<usize, u32> {
    let mut scores: BTreeMap<usize, u32> = BTreeMap::new();
    for f in &report.findings {
        let view = match f {
            Finding::MergedInView { view, .. } | Finding::MissingInView { view, .. } => *view,
            _ => continue,
        };
        *scores.entry(view).or_insert(0) += 1;
    }
    scores
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_flagged_on_bg_majority() {
        let mut t = ForwardVoteTable::new(0, vec![1, 2], vec![1, 2, 3]);
        let votes = [
            (0, 0, VoteTarget::Bg, 10),
            (0, 1, VoteTarget::Bg, 10),
            (0, 2, VoteTarget::Aux(4), 10),
            (1, 0, VoteTarget::Aux(1), 10),
            (1, 1, VoteTarget::Aux(2), 10),
            (1, 2, VoteTarget::Aux(3), 10),
        ];
        for (mi, ai, target, count) in votes {
            t.insert_votes(mi, ai, target, count);
        }
        let report = detect_errors(&t, &InverseVoteTable::default());
        assert_eq!(report.phantoms(), vec![1]);
        assert!(report.split_clusters().is_empty());
    }

    #[test]
    fn split_cluster_unions_pairs() {
        // Mains 1, 2, 3 all land on aux instance 9 everywhere.
        let mut t = ForwardVoteTable::new(0, vec![1, 2, 3], vec![1, 2]);
        for mi in 0..3 {
            for ai in 0..2 {
                t.insert_votes(mi, ai, VoteTarget::Aux(9), 5);
            }
        }
        let report = detect_errors(&t, &InverseVoteTable::default());
        assert_eq!(report.split_clusters(), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn merged_main_needs_two_strong_backers() {
        let mut t = ForwardVoteTable::new(0, vec![7], vec![1, 2]);
        t.insert_votes(0, 0, VoteTarget::Aux(1), 5);
        t.insert_votes(0, 1, VoteTarget::Aux(1), 5);
        let mut inv = InverseVoteTable::default();
        for av in [1usize, 2] {
            let per = inv.per_view.entry(av).or_default();
            per.entry(1).or_default().insert(7, 8);
            per.entry(2).or_default().insert(7, 8);
        }
        let report = detect_errors(&t, &inv);
        assert_eq!(report.merged_mains(), vec![7]);
        // The aux groups that back a merged main are not double-reported as
        // view-local splits.
        assert!(report
            .findings
            .iter()
            .all(|f| !matches!(f, Finding::SplitInView { .. })));
    }

    #[test]
    fn view_local_split_and_merge() {
        // View 2 carved main 5 into aux instances 8 and 9, both fed by main
        // 5's landings alone; main 6 lives in aux 7 there. View 1 lumped
        // mains 5 and 6 together into aux 3.
        let mut t = ForwardVoteTable::new(0, vec![5, 6], vec![1, 2]);
        t.insert_votes(0, 0, VoteTarget::Aux(3), 5);
        t.insert_votes(0, 1, VoteTarget::Aux(8), 5);
        t.insert_votes(0, 1, VoteTarget::Aux(9), 4);
        t.insert_votes(1, 0, VoteTarget::Aux(3), 5);
        t.insert_votes(1, 1, VoteTarget::Aux(7), 5);
        let mut inv = InverseVoteTable::default();
        {
            let per = inv.per_view.entry(1).or_default();
            let cell = per.entry(3).or_default();
            cell.insert(5, 5);
            cell.insert(6, 5);
        }
        {
            let per = inv.per_view.entry(2).or_default();
            per.entry(7).or_default().insert(6, 5);
            per.entry(8).or_default().insert(5, 5);
            per.entry(9).or_default().insert(5, 4);
        }
        let report = detect_errors(&t, &inv);
        let splits: Vec<_> = report
            .findings
            .iter()
            .filter(|f| matches!(f, Finding::SplitInView { .. }))
            .collect();
        assert_eq!(splits.len(), 1);
        assert!(matches!(
            splits[0],
            Finding::SplitInView { view: 2, main: 5, aux_ids } if *aux_ids == vec![8, 9]
        ));
        let merges: Vec<_> = report
            .findings
            .iter()
            .filter(|f| matches!(f, Finding::MergedInView { .. }))
            .collect();
        assert_eq!(merges.len(), 1);
        assert!(matches!(
            merges[0],
            Finding::MergedInView { view: 1, aux_id: 3, mains } if *mains == vec![5, 6]
        ));
    }

    #[test]
    fn boundary_bleed_does_not_fabricate_findings() {
        // Main 1 is large and sprays a few edge votes into aux instance 4's
        // mask — enough to win that inverse cell, because aux 4's own main is
        // mostly occluded. Main 4 still claims aux 4 by forward argmax, so
        // neither a merged-main nor an over-segmentation finding may appear.
        let mut t = ForwardVoteTable::new(0, vec![1, 4], vec![1]);
        t.insert_votes(0, 0, VoteTarget::Aux(1), 18);
        t.insert_votes(0, 0, VoteTarget::Aux(4), 10);
        t.insert_votes(0, 0, VoteTarget::Bg, 16);
        t.insert_votes(1, 0, VoteTarget::Aux(4), 6);
        t.insert_votes(1, 0, VoteTarget::Occ, 21);
        let mut inv = InverseVoteTable::default();
        {
            let per = inv.per_view.entry(1).or_default();
            per.entry(1).or_default().insert(1, 18);
            let bled = per.entry(4).or_default();
            bled.insert(1, 10);
            bled.insert(4, 6);
        }
        let report = detect_errors(&t, &inv);
        assert!(report.merged_mains().is_empty(), "{:?}", report.findings);
        assert!(
            !report.findings.iter().any(|f| matches!(f, Finding::SplitInView { .. })),
            "{:?}",
            report.findings
        );
    }

    #[test]
    fn missing_in_view_names_the_view() {
        let mut t = ForwardVoteTable::new(0, vec![4], vec![1, 2, 3]);
        t.insert_votes(0, 0, VoteTarget::Aux(4), 5);
        t.insert_votes(0, 1, VoteTarget::Aux(4), 5);
        t.insert_votes(0, 2, VoteTarget::Bg, 5);
        let report = detect_errors(&t, &InverseVoteTable::default());
        assert!(report.phantoms().is_empty());
        assert_eq!(
            report.findings,
            vec![Finding::MissingInView { view: 3, main: 4 }]
        );
        assert_eq!(error_scores(&report).get(&3), Some(&1));
    }

    #[test]
    fn clean_tables_produce_no_findings() {
        let mut t = ForwardVoteTable::new(0, vec![1, 2], vec![1, 2]);
        for mi in 0..2 {
            for ai in 0..2 {
                t.insert_votes(mi, ai, VoteTarget::Aux(mi as u32 + 1), 6);
            }
        }
        let mut inv = InverseVoteTable::default();
        for av in [1usize, 2] {
            let per = inv.per_view.entry(av).or_default();
            per.entry(1).or_default().insert(1, 6);
            per.entry(2).or_default().insert(2, 6);
        }
        let report = detect_errors(&t, &inv);
        assert!(report.findings.is_empty(), "{:?}", report.findings);
    }
}
