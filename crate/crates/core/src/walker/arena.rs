use rustc_hash::FxHashMap;

pub type VertexId = u32;

/// Id of the root `o`; its parent is itself.
pub const ROOT: VertexId = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexRecord {
    pub parent: VertexId,
    pub height: u32,
    /// Number of children attached so far, materialized or not.
    pub child_count: u64,
    /// Step at which the vertex was first visited.
    pub creation_step: u64,
    /// Jumps from this vertex to its parent (root: root-loop crossings).
    pub up_crossings: u64,
    pub visits: u64,
}

/// A growing planar tree in which a child only receives an id when the walk
/// first steps onto it. Unvisited leaves exist only as `child_count`.
#[derive(Clone, Debug)]
pub struct TreeArena {
    vertices: Vec<VertexRecord>,
    children: FxHashMap<(VertexId, u64), VertexId>,
    total_leaves: u64,
}

impl Default for TreeArena {
    fn default() -> Self {
        Self::new()
    }
}

impl TreeArena {
    pub fn new() -> Self {
        let root = VertexRecord {
            parent: ROOT,
            height: 0,
            child_count: 0,
            creation_step: 0,
            up_crossings: 0,
            visits: 0,
        };
        Self {
            vertices: vec![root],
            children: FxHashMap::default(),
            total_leaves: 0,
        }
    }

    #[inline]
    pub fn vertex(&self, v: VertexId) -> &VertexRecord {
        &self.vertices[v as usize]
    }

    #[inline]
    pub(crate) fn vertex_mut(&mut self, v: VertexId) -> &mut VertexRecord {
        &mut self.vertices[v as usize]
    }

    #[inline]
    pub fn parent(&self, v: VertexId) -> VertexId {
        self.vertices[v as usize].parent
    }

    #[inline]
    pub fn height(&self, v: VertexId) -> u32 {
        self.vertices[v as usize].height
    }

    /// Number of materialized (visited) vertices, i.e. the range `R_n`.
    pub fn materialized(&self) -> usize {
        self.vertices.len()
    }

    /// `1 + Σ ξ`: all vertices of the tree, visited or not.
    pub fn total_vertices(&self) -> u64 {
        1 + self.total_leaves
    }

    pub fn total_leaves(&self) -> u64 {
        self.total_leaves
    }

    #[inline]
    pub fn add_leaves(&mut self, v: VertexId, count: u64) {
        if count > 0 {
            let rec = &mut self.vertices[v as usize];
            rec.child_count = rec.child_count.saturating_add(count);
            self.total_leaves = self.total_leaves.saturating_add(count);
        }
    }

    pub fn child(&self, v: VertexId, index: u64) -> Option<VertexId> {
        self.children.get(&(v, index)).copied()
    }

    /// Id of the `index`-th child of `v` (1-based), creating it if needed.
    #[inline]
    pub fn child_or_materialize(&mut self, v: VertexId, index: u64, step: u64) -> VertexId {
        debug_assert!(index >= 1 && index <= self.vertices[v as usize].child_count);
        let next = self.vertices.len() as VertexId;
        let id = *self.children.entry((v, index)).or_insert(next);
        if id == next {
            let height = self.vertices[v as usize].height + 1;
            self.vertices.push(VertexRecord {
                parent: v,
                height,
                child_count: 0,
                creation_step: step,
                up_crossings: 0,
                visits: 0,
            });
        }
        id
    }

    /// Whether `ancestor` lies on the path from `v` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: VertexId, mut v: VertexId) -> bool {
        let target = self.height(ancestor);
        while self.height(v) > target {
            v = self.parent(v);
        }
        v == ancestor
    }

    /// Materialized children of every vertex, sorted by child index.
    pub fn children_lists(&self) -> Vec<Vec<(u64, VertexId)>> {
        let mut lists = vec![Vec::new(); self.vertices.len()];
        for (&(parent, index), &id) in &self.children {
            lists[parent as usize].push((index, id));
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        lists
    }

    pub fn vertices(&self) -> &[VertexRecord] {
        &self.vertices
    }
}
