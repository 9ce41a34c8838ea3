//! Rooted concept taxonomy, word lexicon and Wu-Palmer similarity.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Index of a concept inside its [`Taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptId(usize);

/// Single-rooted tree of concepts. The root has depth 1.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    names: Vec<String>,
    ids: HashMap<String, ConceptId>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    root: usize,
}

impl Taxonomy {
    /// Parses `concept<TAB>parent` lines; the root's parent is `-`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut ids = HashMap::new();
        let mut parents: Vec<(Option<String>, usize)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (concept, parent) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(line_no, "expected concept<TAB>parent"))?;
            let (concept, parent) = (concept.trim(), parent.trim());
            if concept.is_empty() || parent.is_empty() {
                return Err(Error::format(line_no, "empty concept or parent"));
            }
            if ids.contains_key(concept) {
                return Err(Error::format(
                    line_no,
                    format!("duplicate concept {concept:?}"),
                ));
            }
            ids.insert(concept.to_string(), ConceptId(names.len()));
            names.push(concept.to_string());
            parents.push(((parent != "-").then(|| parent.to_string()), line_no));
        }

        let mut root = None;
        let mut parent = Vec::with_capacity(names.len());
        for (i, (p, line_no)) in parents.iter().enumerate() {
            match p {
                None => {
                    if root.is_some() {
                        return Err(Error::format(*line_no, "multiple roots"));
                    }
                    root = Some(i);
                    parent.push(i);
                }
                Some(p) => match ids.get(p) {
                    Some(id) => parent.push(id.0),
                    None => return Err(Error::format(*line_no, format!("unknown parent {p:?}"))),
                },
            }
        }
        let root = root.ok_or_else(|| {
            Error::format(
                parents.len().max(1),
                "no root (a concept whose parent is \"-\")",
            )
        })?;

        // Depths by root-down traversal; anything left unvisited sits on a cycle
        // or hangs below one.
        let mut children = vec![Vec::new(); names.len()];
        for (i, &p) in parent.iter().enumerate() {
            if i != root {
                children[p].push(i);
            }
        }
        let mut depth = vec![0; names.len()];
        depth[root] = 1;
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            for &c in &children[node] {
                depth[c] = depth[node] + 1;
                stack.push(c);
            }
        }
        if let Some(stuck) = depth.iter().position(|&d| d == 0) {
            return Err(Error::format(
                parents[stuck].1,
                format!("cycle through concept {:?}", names[stuck]),
            ));
        }

        Ok(Self {
            names,
            ids,
            parent,
            depth,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, concept: &str) -> Result<ConceptId> {
        self.ids
            .get(concept)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown concept {concept:?}")))
    }

    pub fn name(&self, id: ConceptId) -> &str {
        &self.names[id.0]
    }

    pub fn root(&self) -> ConceptId {
        ConceptId(self.root)
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        (0..self.names.len()).map(ConceptId)
    }

    pub fn parent(&self, id: ConceptId) -> Option<ConceptId> {
        (id.0 != self.root).then(|| ConceptId(self.parent[id.0]))
    }

    pub fn depth(&self, id: ConceptId) -> usize {
        self.depth[id.0]
    }

    /// The concept and all of its ancestors, nearest first.
    pub fn ancestors(&self, id: ConceptId) -> impl Iterator<Item = ConceptId> + '_ {
        std::iter::successors(Some(id), move |&c| self.parent(c))
    }

    /// Deepest concept on both ancestor chains.
    pub fn lca(&self, a: ConceptId, b: ConceptId) -> ConceptId {
        let (mut a, mut b) = (a.0, b.0);
        while self.depth[a] > self.depth[b] {
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b];
        }
        while a != b {
            a = self.parent[a];
            b = self.parent[b];
        }
        ConceptId(a)
    }

    pub fn lca_by_name(&self, a: &str, b: &str) -> Result<&str> {
        let c = self.lca(self.id(a)?, self.id(b)?);
        Ok(self.name(c))
    }

    /// Wu-Palmer similarity `2 depth(lca) / (depth(a) + depth(b))`.
    pub fn wup(&self, a: ConceptId, b: ConceptId) -> f64 {
        let shared = self.depth(self.lca(a, b));
        2.0 * shared as f64 / (self.depth(a) + self.depth(b)) as f64
    }

    pub fn wup_by_name(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.wup(self.id(a)?, self.id(b)?))
    }
}

/// Candidate senses of each word.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    senses: HashMap<String, Vec<ConceptId>>,
}

impl Lexicon {
    /// Parses `word<TAB>concept[,concept...]` lines against `taxonomy`.
    pub fn parse(text: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let mut senses = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (word, concepts) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(line_no, "expected word<TAB>concepts"))?;
            let word = word.trim();
            if word.is_empty() {
                return Err(Error::format(line_no, "empty word"));
            }
            let mut ids = Vec::new();
            for c in concepts.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                let id = taxonomy
                    .id(c)
                    .map_err(|_| Error::format(line_no, format!("unknown concept {c:?}")))?;
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            if ids.is_empty() {
                return Err(Error::format(
                    line_no,
                    format!("word {word:?} lists no concepts"),
                ));
            }
            if senses.insert(word.to_string(), ids).is_some() {
                return Err(Error::format(line_no, format!("duplicate word {word:?}")));
            }
        }
        Ok(Self { senses })
    }

    pub fn senses(&self, word: &str) -> Option<&[ConceptId]> {
        self.senses.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.senses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senses.is_empty()
    }
}

/// Word similarity: the best Wu-Palmer score over all sense pairs. A word
/// missing from the lexicon only matches an identical string.
pub fn word_wup(w1: &str, w2: &str, lexicon: &Lexicon, taxonomy: &Taxonomy) -> f64 {
    match (lexicon.senses(w1), lexicon.senses(w2)) {
        (Some(s1), Some(s2)) => s1
            .iter()
            .flat_map(|&a| s2.iter().map(move |&b| taxonomy.wup(a, b)))
            .fold(0.0, f64::max),
        _ => {
            if w1 == w2 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// A taxonomy together with the lexicon that maps words onto it.
#[derive(Debug, Clone)]
pub struct Ontology {
    pub taxonomy: Taxonomy,
    pub lexicon: Lexicon,
}

impl Ontology {
    pub fn parse(taxonomy: &str, lexicon: &str) -> Result<Self> {
        let taxonomy = Taxonomy::parse(taxonomy)?;
        let lexicon = Lexicon::parse(lexicon, &taxonomy)?;
        Ok(Self { taxonomy, lexicon })
    }

    /// Single-concept ontology with an empty lexicon: every comparison
    /// falls back to exact string matching.
    pub fn string_match_only() -> Self {
        Self::parse("entity\t-\n", "").expect("static taxonomy parses")
    }

    pub fn word_wup(&self, w1: &str, w2: &str) -> f64 {
        word_wup(w1, w2, &self.lexicon, &self.taxonomy)
    }
}

/// Brute-force LCA: deepest member of the intersection of both ancestor
/// sets. Kept for cross-checking [`Taxonomy::lca`].
pub fn lca_by_intersection(taxonomy: &Taxonomy, a: ConceptId, b: ConceptId) -> ConceptId {
    let chain: HashSet<ConceptId> = taxonomy.ancestors(a).collect();
    taxonomy
        .ancestors(b)
        .filter(|c| chain.contains(c))
        .max_by_key(|&c| taxonomy.depth(c))
        .expect("the root is a common ancestor")
}
