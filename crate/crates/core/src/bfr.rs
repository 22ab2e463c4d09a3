//! Branch Fusion Refinement: reconcile the semantic and instance branches by
//! confidence overriding, majority voting and remasking, then assemble the
//! panoptic assignment.

use std::collections::BTreeMap;

use crate::decoder::{InstanceProposal, SemanticPrediction};
use crate::geometry::{ClassId, ClassTable};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPrediction {
    pub semantic: SemanticPrediction,
    pub proposals: Vec<InstanceProposal>,
}

/// Replaces a primitive's semantic prediction with the best covering
/// proposal's label and score when that score is strictly higher. Equal
/// proposal scores resolve to the lower proposal index.
pub fn override_semantic(semantic: &SemanticPrediction, proposals: &[InstanceProposal]) -> SemanticPrediction {
    let mut out = semantic.clone();
    let n = semantic.labels.len();
    let mut best: Vec<Option<usize>> = vec![None; n];
    for (j, p) in proposals.iter().enumerate() {
        for i in p.members().filter(|&i| i < n) {
            match best[i] {
                Some(b) if proposals[b].score >= p.score => {}
                _ => best[i] = Some(j),
            }
        }
    }
    for (i, b) in best.into_iter().enumerate() {
        if let Some(j) = b {
            if proposals[j].score > semantic.scores[i] {
                out.labels[i] = proposals[j].label;
                out.scores[i] = proposals[j].score;
            }
        }
    }
    out
}

/// Most frequent foreground label among the proposal's members (smaller class
/// wins ties). Background votes are ignored; if nothing else remains the
/// proposal keeps its own label. `None` for an empty mask.
pub fn vote(proposal: &InstanceProposal, labels: &[ClassId], class_count: usize) -> Option<ClassId> {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut members = 0;
    for i in proposal.members() {
        members += 1;
        let l = labels[i];
        if l >= 1 && l as usize <= class_count {
            *counts.entry(l).or_default() += 1;
        }
    }
    if members == 0 {
        return None;
    }
    let winner = counts
        .into_iter()
        .fold(None, |best: Option<(ClassId, usize)>, (l, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        });
    Some(winner.map_or(proposal.label, |(l, _)| l))
}

/// Drops members whose label disagrees with the proposal's; `None` when empty.
pub fn remask(proposal: &InstanceProposal, labels: &[ClassId]) -> Option<InstanceProposal> {
    let mask: Vec<bool> = proposal
        .mask
        .iter()
        .zip(labels)
        .map(|(&m, &l)| m && l == proposal.label)
        .collect();
    if !mask.iter().any(|&m| m) {
        return None;
    }
    Some(InstanceProposal {
        mask,
        ..proposal.clone()
    })
}

/// Overriding, then Voting, then Remasking.
pub fn refine(semantic: &SemanticPrediction, proposals: &[InstanceProposal], class_count: usize) -> RefinedPrediction {
    let semantic = override_semantic(semantic, proposals);
    let proposals = proposals
        .iter()
        .filter_map(|p| {
            let label = vote(p, &semantic.labels, class_count)?;
            let voted = InstanceProposal { label, ..p.clone() };
            remask(&voted, &semantic.labels)
        })
        .collect();
    RefinedPrediction { semantic, proposals }
}

/// Per-primitive `(label, instance)`; `None` for primitives in no symbol.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanopticAssignment {
    pub entries: Vec<Option<(ClassId, i64)>>,
}

impl PanopticAssignment {
    /// Symbols as `(label, instance, member indices)`, ordered by `(label, instance)`.
    pub fn symbols(&self) -> Vec<(ClassId, i64, Vec<usize>)> {
        let mut groups: BTreeMap<(ClassId, i64), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(key) = e {
                groups.entry(*key).or_default().push(i);
            }
        }
        groups.into_iter().map(|((l, z), m)| (l, z, m)).collect()
    }
}

/// Things come from the highest-scoring thing proposal claiming a primitive
/// (lower index on ties); leftover primitives with a stuff label join their
/// class's single stuff symbol (instance 0); everything else stays unassigned.
pub fn assemble_panoptic(refined: &RefinedPrediction, classes: &ClassTable) -> PanopticAssignment {
    let n = refined.semantic.labels.len();
    let mut claim: Vec<Option<usize>> = vec![None; n];
    for (j, p) in refined.proposals.iter().enumerate() {
        if !classes.is_thing(p.label) {
            continue;
        }
        for i in p.members().filter(|&i| i < n) {
            match claim[i] {
                Some(b) if refined.proposals[b].score >= p.score => {}
                _ => claim[i] = Some(j),
            }
        }
    }
    let entries = (0..n)
        .map(|i| match claim[i] {
            Some(j) => Some((refined.proposals[j].label, j as i64)),
            None => {
                let l = refined.semantic.labels[i];
                classes.is_stuff(l).then_some((l, 0))
            }
        })
        .collect();
    PanopticAssignment { entries }
}

/// Assembly without refinement, for ablation.
pub fn assemble_unrefined(semantic: &SemanticPrediction, proposals: &[InstanceProposal], classes: &ClassTable) -> PanopticAssignment {
    assemble_panoptic(
        &RefinedPrediction {
            semantic: semantic.clone(),
            proposals: proposals.to_vec(),
        },
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ClassInfo;

    fn proposal(label: ClassId, score: f64, members: &[usize], n: usize) -> InstanceProposal {
        let mut mask = vec![false; n];
        for &m in members {
            mask[m] = true;
        }
        InstanceProposal {
            label,
            score,
            mask,
            logits: None,
        }
    }

    fn sem(labels: &[ClassId], scores: &[f64]) -> SemanticPrediction {
        SemanticPrediction {
            labels: labels.to_vec(),
            scores: scores.to_vec(),
        }
    }

    fn classes() -> ClassTable {
        let c = |id, name: &str| ClassInfo { id, name: name.into() };
        ClassTable {
            things: vec![c(1, "door"), c(2, "window")],
            stuffs: vec![c(3, "wall")],
        }
    }

    #[test]
    fn override_takes_strongest_covering_proposal() {
        let s = sem(&[3], &[0.6]);
        let props = [proposal(1, 0.7, &[0], 1), proposal(2, 0.5, &[0], 1)];
        let r = override_semantic(&s, &props);
        assert_eq!((r.labels[0], r.scores[0]), (1, 0.7));
    }

    #[test]
    fn override_keeps_confident_or_uncovered() {
        let s = sem(&[3, 2], &[0.9, 0.1]);
        let props = [proposal(1, 0.7, &[0], 2)];
        assert_eq!(override_semantic(&s, &props), s);
    }

    #[test]
    fn override_ties_prefer_lower_index() {
        let s = sem(&[3], &[0.1]);
        let props = [proposal(2, 0.7, &[0], 1), proposal(1, 0.7, &[0], 1)];
        assert_eq!(override_semantic(&s, &props).labels[0], 2);
    }

    #[test]
    fn voting_rules() {
        let p = proposal(2, 0.9, &[0, 1, 2], 3);
        assert_eq!(vote(&p, &[1, 1, 2], 3), Some(1));
        let p2 = proposal(3, 0.9, &[0, 1], 2);
        assert_eq!(vote(&p2, &[2, 1], 3), Some(1));
        // Background members do not vote.
        assert_eq!(vote(&p2, &[4, 4], 3), Some(3));
        assert_eq!(vote(&p2, &[4, 2], 3), Some(2));
        assert_eq!(vote(&proposal(1, 0.5, &[], 2), &[1, 1], 3), None);
    }

    #[test]
    fn override_then_vote_is_a_fixed_point() {
        let s = sem(&[2, 3, 1], &[0.2, 0.3, 0.1]);
        let p = proposal(1, 0.8, &[0, 1, 2], 3);
        let r = override_semantic(&s, std::slice::from_ref(&p));
        assert_eq!(vote(&p, &r.labels, 3), Some(1));
    }

    #[test]
    fn remask_prunes_disagreeing_members() {
        let p = proposal(1, 0.9, &[0, 1, 2], 3);
        let r = remask(&p, &[1, 1, 2]).unwrap();
        assert_eq!(r.size(), 2);
        assert_eq!(vote(&r, &[1, 1, 2], 3), Some(1));
        assert_eq!(remask(&p, &[1, 1, 1]).unwrap(), p);
        assert!(remask(&p, &[2, 2, 2]).is_none());
    }

    #[test]
    fn assembly_cases() {
        // One clean thing proposal plus stuff leftovers.
        let s = sem(&[1, 1, 3, 3, 4], &[0.9; 5]);
        let r = refine(&s, &[proposal(1, 0.95, &[0, 1], 5)], 3);
        let a = assemble_panoptic(&r, &classes());
        assert_eq!(a.entries, vec![Some((1, 0)), Some((1, 0)), Some((3, 0)), Some((3, 0)), None]);
        assert_eq!(a.symbols().len(), 2);

        // Overlap goes to the higher score.
        let r = RefinedPrediction {
            semantic: sem(&[2, 2, 2], &[0.5; 3]),
            proposals: vec![proposal(2, 0.8, &[1, 2], 3), proposal(2, 0.9, &[0, 1], 3)],
        };
        let a = assemble_panoptic(&r, &classes());
        assert_eq!(a.entries[1], Some((2, 1)));
        assert_eq!(a.entries[2], Some((2, 0)));
    }

    #[test]
    fn stuff_without_proposals_forms_one_symbol_per_class() {
        let s = sem(&[3, 3, 3], &[0.9; 3]);
        let a = assemble_panoptic(&refine(&s, &[], 3), &classes());
        assert_eq!(a.symbols(), vec![(3, 0, vec![0, 1, 2])]);
    }
}
