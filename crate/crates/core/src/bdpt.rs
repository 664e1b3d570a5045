//! Bi-directional parse tree.
//!
//! Five layers: root, token length, direction (forward/reverse), `M` token
//! levels, template group. Each template is indexed under two branches, one
//! keyed by its first `M` tokens and one by the first `M` tokens of its
//! reversed token sequence, both pointing at the same shared template record.
//!
//! Updates never rewrite a token node in place. When a constant position
//! inside the branch depth turns into a wildcard, a wildcard sibling is added
//! and the superseded exact node is marked obsolete once no live template
//! remains beneath it. Descent explores the wildcard child before the exact
//! child at every level and never enters obsolete nodes, so a superseded
//! branch cannot match again while every live template stays reachable
//! through its own token path.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{Template, TemplateId, TemplateStore, TemplateToken, WILDCARD};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("branch depth is undefined for zero-length messages")]
    ZeroLength,
    #[error("template {0} not found in the store")]
    UnknownTemplate(TemplateId),
    #[error("template {id} changed length from {old} to {new}")]
    LengthChanged { id: TemplateId, old: usize, new: usize },
    #[error("template {id} is not reachable through its recorded tokens ({direction:?})")]
    UnreachableTemplate { id: TemplateId, direction: Direction },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Dynamic branch depth: `(N + 1) / 2` for odd `N`, `N / 2 + 1` for even `N`.
/// The forward and reverse branches then always share one or two positions.
#[allow(clippy::manual_div_ceil)] // keep the two-case formula literal
pub fn branch_depth(n: usize) -> Result<usize, TreeError> {
    if n == 0 {
        return Err(TreeError::ZeroLength);
    }
    Ok(if n % 2 == 1 { (n + 1) / 2 } else { n / 2 + 1 })
}

#[derive(Debug, Default)]
struct TokenNode {
    obsolete: bool,
    wildcard: Option<Box<TokenNode>>,
    exact: BTreeMap<String, TokenNode>,
    /// Template group; populated only at depth `M`.
    group: Vec<TemplateId>,
}

impl TokenNode {
    fn child_mut(&mut self, key: &TemplateToken) -> &mut TokenNode {
        match key {
            TemplateToken::Wildcard => self.wildcard.get_or_insert_with(Default::default),
            TemplateToken::Constant { text, .. } => self.exact.entry(text.clone()).or_default(),
        }
    }

    fn subtree_has_templates(&self) -> bool {
        if !self.group.is_empty() {
            return true;
        }
        if let Some(w) = &self.wildcard {
            if w.subtree_has_templates() {
                return true;
            }
        }
        self.exact.values().any(TokenNode::subtree_has_templates)
    }
}

#[derive(Debug)]
struct LengthNode {
    depth: usize,
    forward: TokenNode,
    reverse: TokenNode,
}

/// The parse tree proper. All mutation happens on the pipeline thread.
#[derive(Debug, Default)]
pub struct ParseTree {
    lengths: BTreeMap<usize, LengthNode>,
}

fn branch_path(tokens: &[TemplateToken], direction: Direction, depth: usize) -> Vec<TemplateToken> {
    match direction {
        Direction::Forward => tokens[..depth].to_vec(),
        Direction::Reverse => tokens.iter().rev().take(depth).cloned().collect(),
    }
}

impl ParseTree {
    pub fn new() -> ParseTree {
        ParseTree::default()
    }

    /// Index a template under both directions. Re-inserting is a no-op.
    pub fn insert(&mut self, tpl: &Template) -> Result<(), TreeError> {
        let n = tpl.length();
        let depth = branch_depth(n)?;
        let entry = self.lengths.entry(n).or_insert_with(|| LengthNode {
            depth,
            forward: TokenNode::default(),
            reverse: TokenNode::default(),
        });
        for direction in [Direction::Forward, Direction::Reverse] {
            let path = branch_path(&tpl.tokens, direction, depth);
            let root = match direction {
                Direction::Forward => &mut entry.forward,
                Direction::Reverse => &mut entry.reverse,
            };
            let mut node = root;
            for key in &path {
                node = node.child_mut(key);
            }
            if !node.group.contains(&tpl.id) {
                node.group.push(tpl.id);
            }
        }
        Ok(())
    }

    /// Walk one direction for a log token sequence; returns the reached
    /// template group, or nothing when no live leaf is reachable.
    ///
    /// The wildcard child is explored before the exact child at every level,
    /// and obsolete nodes are never entered, so a superseded exact branch can
    /// no longer match once its wildcard replacement exists. Live exact
    /// siblings of a wildcard stay reachable: their leaf groups are appended
    /// after the wildcard-reached ones.
    pub fn descend(&self, direction: Direction, tokens: &[String]) -> Option<Vec<TemplateId>> {
        let entry = self.lengths.get(&tokens.len())?;
        let root = match direction {
            Direction::Forward => &entry.forward,
            Direction::Reverse => &entry.reverse,
        };
        let depth = entry.depth;
        let path: Vec<&str> = match direction {
            Direction::Forward => tokens[..depth].iter().map(String::as_str).collect(),
            Direction::Reverse => tokens.iter().rev().take(depth).map(String::as_str).collect(),
        };
        let mut group = Vec::new();
        collect(root, &path, &mut group);
        if group.is_empty() {
            None
        } else {
            Some(group)
        }
    }

    /// Propagate a template's token change into both branches.
    ///
    /// For every direction whose branch path changed, the new path is built
    /// (reusing the single wildcard child per level), the template moves to
    /// the new leaf group, and the superseded exact node is obsoleted once
    /// nothing live remains beneath it. The shared record's tokens are
    /// replaced last.
    pub fn apply_update(
        &mut self,
        store: &mut TemplateStore,
        id: TemplateId,
        new_tokens: Vec<TemplateToken>,
    ) -> Result<(), TreeError> {
        let old_tokens = store
            .get(id)
            .ok_or(TreeError::UnknownTemplate(id))?
            .tokens
            .clone();
        if old_tokens.len() != new_tokens.len() {
            return Err(TreeError::LengthChanged {
                id,
                old: old_tokens.len(),
                new: new_tokens.len(),
            });
        }
        let n = old_tokens.len();
        let depth = branch_depth(n)?;
        let entry = self
            .lengths
            .get_mut(&n)
            .ok_or(TreeError::UnknownTemplate(id))?;

        for direction in [Direction::Forward, Direction::Reverse] {
            let old_path = branch_path(&old_tokens, direction, depth);
            let new_path = branch_path(&new_tokens, direction, depth);
            if old_path == new_path {
                continue;
            }
            let root = match direction {
                Direction::Forward => &mut entry.forward,
                Direction::Reverse => &mut entry.reverse,
            };
            detach_from_old_branch(root, &old_path, &new_path, id, direction)?;

            let mut node = root;
            for key in &new_path {
                node = node.child_mut(key);
            }
            if !node.group.contains(&id) {
                node.group.push(id);
            }
        }

        let record = store.get_mut(id).ok_or(TreeError::UnknownTemplate(id))?;
        if record.tokens != new_tokens {
            record.tokens = new_tokens;
            record.updated = true;
        }
        Ok(())
    }

    /// Deterministic indented rendering, one node per line, for golden tests.
    pub fn render(&self) -> String {
        let mut out = String::from("root\n");
        for (n, entry) in &self.lengths {
            let _ = writeln!(out, "  len={} depth={}", n, entry.depth);
            for (label, node) in [("fwd", &entry.forward), ("rev", &entry.reverse)] {
                let _ = writeln!(out, "    {label}");
                render_children(node, 3, entry.depth, 0, &mut out);
            }
        }
        out
    }
}

fn collect(node: &TokenNode, path: &[&str], out: &mut Vec<TemplateId>) {
    let Some((token, rest)) = path.split_first() else {
        for id in &node.group {
            if !out.contains(id) {
                out.push(*id);
            }
        }
        return;
    };
    if let Some(w) = node.wildcard.as_deref() {
        if !w.obsolete {
            collect(w, rest, out);
        }
    }
    if *token != WILDCARD {
        if let Some(exact) = node.exact.get(*token) {
            if !exact.obsolete {
                collect(exact, rest, out);
            }
        }
    }
}

/// Remove `id` from the leaf at `old_path` and obsolete the exact node where
/// the old branch diverges from the new one, provided no live template is
/// left in its subtree. Missing ids are tolerated so replaying an update is
/// a structural no-op; a missing path is an internal inconsistency.
fn detach_from_old_branch(
    root: &mut TokenNode,
    old_path: &[TemplateToken],
    new_path: &[TemplateToken],
    id: TemplateId,
    direction: Direction,
) -> Result<(), TreeError> {
    let divergence = old_path
        .iter()
        .zip(new_path)
        .position(|(a, b)| a != b)
        .expect("paths differ");

    let mut node = &mut *root;
    for key in &old_path[..divergence] {
        node = match node.child_mut_existing(key) {
            Some(next) => next,
            None => return Err(TreeError::UnreachableTemplate { id, direction }),
        };
    }
    let Some(diverged) = node.child_mut_existing(&old_path[divergence]) else {
        return Err(TreeError::UnreachableTemplate { id, direction });
    };
    {
        let mut leaf = &mut *diverged;
        for key in &old_path[divergence + 1..] {
            leaf = match leaf.child_mut_existing(key) {
                Some(next) => next,
                None => return Err(TreeError::UnreachableTemplate { id, direction }),
            };
        }
        leaf.group.retain(|t| *t != id);
    }
    if !diverged.subtree_has_templates() {
        diverged.obsolete = true;
    }
    Ok(())
}

impl TokenNode {
    fn child_mut_existing(&mut self, key: &TemplateToken) -> Option<&mut TokenNode> {
        match key {
            TemplateToken::Wildcard => self.wildcard.as_deref_mut(),
            TemplateToken::Constant { text, .. } => self.exact.get_mut(text.as_str()),
        }
    }
}

fn render_children(node: &TokenNode, indent: usize, depth: usize, level: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    let mut emit = |text: &str, child: &TokenNode| {
        let mut line = format!("{pad}{text}");
        if child.obsolete {
            line.push_str(" [obsolete]");
        }
        if level + 1 == depth {
            let mut ids: Vec<u64> = child.group.iter().map(|t| t.0).collect();
            ids.sort_unstable();
            let rendered: Vec<String> = ids.iter().map(u64::to_string).collect();
            let _ = write!(line, " => group({}): [{}]", ids.len(), rendered.join(","));
        }
        out.push_str(&line);
        out.push('\n');
        render_children(child, indent + 1, depth, level + 1, out);
    };
    if let Some(w) = node.wildcard.as_deref() {
        emit(WILDCARD, w);
    }
    for (text, child) in &node.exact {
        emit(text, child);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TemplateStore;

    fn tokens(parts: &[&str]) -> Vec<TemplateToken> {
        parts.iter().map(|p| TemplateToken::from_text(p)).collect()
    }

    fn seq(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn branch_depth_closed_form() {
        assert_eq!(branch_depth(4).unwrap(), 3);
        assert_eq!(branch_depth(1).unwrap(), 1);
        assert_eq!(branch_depth(7).unwrap(), 4);
        assert_eq!(branch_depth(0).unwrap_err(), TreeError::ZeroLength);
    }

    #[test]
    fn insert_builds_both_branches() {
        let mut store = TemplateStore::new();
        let id = store.create(tokens(&["eth0", "send", "<*>", "packages"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(id).unwrap()).unwrap();
        let rendered = tree.render();
        // Forward branch: first M tokens; reverse branch: first M of the
        // reversed sequence.
        let expected = "\
root
  len=4 depth=3
    fwd
      eth0
        send
          <*> => group(1): [1]
    rev
      packages
        <*>
          send => group(1): [1]
";
        assert_eq!(rendered, expected);
    }

    #[test]
    fn insert_single_token_template() {
        let mut store = TemplateStore::new();
        let id = store.create(tokens(&["ready"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(id).unwrap()).unwrap();
        assert_eq!(
            tree.descend(Direction::Forward, &seq(&["ready"])).unwrap(),
            &[id]
        );
        assert_eq!(
            tree.descend(Direction::Reverse, &seq(&["ready"])).unwrap(),
            &[id]
        );
    }

    #[test]
    fn templates_sharing_prefix_share_a_group() {
        let mut store = TemplateStore::new();
        let a = store.create(tokens(&["user", "<*>", "auth", "accepted"]));
        let b = store.create(tokens(&["user", "<*>", "auth", "rejected"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(a).unwrap()).unwrap();
        tree.insert(store.get(b).unwrap()).unwrap();
        let group = tree
            .descend(Direction::Forward, &seq(&["user", "bob", "auth", "accepted"]))
            .unwrap();
        assert_eq!(group, &[a, b]);
    }

    #[test]
    fn descend_fig2_scenario() {
        let mut store = TemplateStore::new();
        let id = store.create(tokens(&["eth0", "send", "<*>", "packages"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(id).unwrap()).unwrap();

        let log = seq(&["eth1", "send", "<*>", "packages"]);
        assert!(tree.descend(Direction::Forward, &log).is_none());
        assert_eq!(tree.descend(Direction::Reverse, &log).unwrap(), &[id]);
        // Unseen length.
        assert!(tree.descend(Direction::Forward, &seq(&["a", "b"])).is_none());
    }

    #[test]
    fn update_adds_wildcard_and_obsoletes_old_branch() {
        let mut store = TemplateStore::new();
        let id = store.create(tokens(&["eth0", "send", "<*>", "packages"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(id).unwrap()).unwrap();

        tree.apply_update(&mut store, id, tokens(&["<*>", "send", "<*>", "packages"]))
            .unwrap();

        let rendered = tree.render();
        assert_eq!(rendered.matches("[obsolete]").count(), 1);
        assert!(rendered.contains("eth0 [obsolete]"));
        assert!(store.get(id).unwrap().updated);

        // Both the original and the new shape descend to the template.
        for log in [
            seq(&["eth0", "send", "<*>", "packages"]),
            seq(&["eth3", "send", "<*>", "packages"]),
        ] {
            assert_eq!(tree.descend(Direction::Forward, &log).unwrap(), &[id]);
            assert_eq!(tree.descend(Direction::Reverse, &log).unwrap(), &[id]);
        }
    }

    #[test]
    fn update_outside_branch_depth_changes_nothing() {
        let mut store = TemplateStore::new();
        // N=5, M=3: position 4 sits outside the forward branch but inside
        // the reverse branch only at its first level.
        let id = store.create(tokens(&["job", "step", "done", "in", "cell7"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(id).unwrap()).unwrap();
        let before_fwd_section = tree.render();

        tree.apply_update(
            &mut store,
            id,
            tokens(&["job", "step", "done", "in", "<*>"]),
        )
        .unwrap();
        let after = tree.render();
        // Forward branch (first three tokens) unchanged.
        assert_eq!(
            before_fwd_section.lines().take(7).collect::<Vec<_>>(),
            after.lines().take(7).collect::<Vec<_>>()
        );
        // Reverse branch gained a wildcard level.
        assert!(after.contains("cell7 [obsolete]"));
    }

    #[test]
    fn reapplying_an_update_is_a_structural_noop() {
        let mut store = TemplateStore::new();
        let id = store.create(tokens(&["eth0", "send", "<*>", "packages"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(id).unwrap()).unwrap();
        let new = tokens(&["<*>", "send", "<*>", "packages"]);
        tree.apply_update(&mut store, id, new.clone()).unwrap();
        let once = tree.render();
        tree.apply_update(&mut store, id, new).unwrap();
        assert_eq!(tree.render(), once);
    }

    #[test]
    fn update_of_unknown_template_errors() {
        let mut store = TemplateStore::new();
        let mut tree = ParseTree::new();
        let err = tree
            .apply_update(&mut store, TemplateId(9), tokens(&["a"]))
            .unwrap_err();
        assert_eq!(err, TreeError::UnknownTemplate(TemplateId(9)));
    }

    #[test]
    fn obsolete_node_keeps_live_siblings_reachable() {
        let mut store = TemplateStore::new();
        let a = store.create(tokens(&["alpha", "send", "<*>", "packages"]));
        let b = store.create(tokens(&["beta", "recv", "<*>", "bytes"]));
        let mut tree = ParseTree::new();
        tree.insert(store.get(a).unwrap()).unwrap();
        tree.insert(store.get(b).unwrap()).unwrap();

        // Generalizing `a` adds a forward wildcard level; `beta ...` must
        // still reach `b` through its exact branch.
        tree.apply_update(&mut store, a, tokens(&["<*>", "send", "<*>", "packages"]))
            .unwrap();
        let log_b = seq(&["beta", "recv", "<*>", "bytes"]);
        assert_eq!(tree.descend(Direction::Forward, &log_b).unwrap(), &[b]);

        // Shared-prefix case: obsoleting must not cut off the sibling leaf,
        // and the exact path stays reachable next to the wildcard branch.
        let c = store.create(tokens(&["gamma", "send", "<*>", "bytes"]));
        tree.insert(store.get(c).unwrap()).unwrap();
        tree.apply_update(&mut store, c, tokens(&["gamma", "send", "<*>", "<*>"]))
            .unwrap();
        let group = tree
            .descend(Direction::Forward, &seq(&["gamma", "send", "<*>", "bytes"]))
            .unwrap();
        assert!(group.contains(&c), "{group:?}");

        // Every live template reaches itself through its own tokens.
        for tpl in store.iter() {
            let rendered: Vec<String> = tpl.tokens.iter().map(|t| t.text().to_string()).collect();
            for direction in [Direction::Forward, Direction::Reverse] {
                let group = tree.descend(direction, &rendered);
                assert!(
                    group.is_some_and(|g| g.contains(&tpl.id)),
                    "template {} unreachable {direction:?}",
                    tpl.id
                );
            }
        }
    }
}
