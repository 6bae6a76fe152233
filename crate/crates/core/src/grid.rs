//! Two-level Cartesian mesh hierarchy and element patches.
//!
//! Elements are indexed row-major, `e = iy * n + ix`, with `ix` along the
//! first coordinate. Nodes use the same convention on the `(n + 1) × (n + 1)`
//! grid. Fine-scale degrees of freedom live on a *lattice*: the Lagrange nodes
//! of the `Q^q` fine space, `q · n_fine + 1` per side.

use crate::error::{invalid, Result};

/// Axis-aligned square `[x0, x0 + side] × [y0, y0 + side]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub origin: [f64; 2],
    pub side: f64,
}

impl Domain {
    pub fn new(origin: [f64; 2], side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid(format!(
                "domain side length must be positive, got {side}"
            )));
        }
        Ok(Self { origin, side })
    }

    pub fn unit_square() -> Self {
        Self {
            origin: [0.0, 0.0],
            side: 1.0,
        }
    }

    /// `(-a, a)²`
    pub fn centered(half_width: f64) -> Result<Self> {
        Self::new([-half_width, -half_width], 2.0 * half_width)
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x0, y0] = self.origin;
        x >= x0 && x <= x0 + self.side && y >= y0 && y <= y0 + self.side
    }
}

/// Uniform mesh of `n × n` square elements.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianMesh {
    pub domain: Domain,
    pub n: usize,
    pub h: f64,
}

/// Builds the uniform mesh with `n` cells per side.
pub fn build_mesh(domain: Domain, n: usize) -> Result<CartesianMesh> {
    if n == 0 {
        return Err(invalid("mesh needs at least one cell per side"));
    }
    Ok(CartesianMesh {
        domain,
        n,
        h: domain.side / n as f64,
    })
}

impl CartesianMesh {
    pub fn element_count(&self) -> usize {
        self.n * self.n
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    #[inline]
    pub fn element(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.n && iy < self.n);
        iy * self.n + ix
    }

    #[inline]
    pub fn element_coords(&self, e: usize) -> (usize, usize) {
        (e % self.n, e / self.n)
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.n + 1) + ix
    }

    #[inline]
    pub fn node_coords(&self, v: usize) -> (usize, usize) {
        (v % (self.n + 1), v / (self.n + 1))
    }

    #[inline]
    pub fn is_boundary_node(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.n || iy == self.n
    }

    pub fn boundary_flags(&self) -> Vec<bool> {
        (0..self.node_count())
            .map(|v| {
                let (ix, iy) = self.node_coords(v);
                self.is_boundary_node(ix, iy)
            })
            .collect()
    }

    /// Physical coordinates of node `(ix, iy)`.
    pub fn node_position(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.domain.origin[0] + ix as f64 * self.h,
            self.domain.origin[1] + iy as f64 * self.h,
        ]
    }

    /// Lower-left corner of element `(ix, iy)`.
    pub fn element_origin(&self, ix: usize, iy: usize) -> [f64; 2] {
        self.node_position(ix, iy)
    }

    /// The (up to four) elements whose closure contains node `(ix, iy)`.
    pub fn elements_around_node(&self, ix: usize, iy: usize) -> ElementBox {
        ElementBox {
            x0: ix.saturating_sub(1),
            x1: ix.min(self.n - 1),
            y0: iy.saturating_sub(1),
            y1: iy.min(self.n - 1),
        }
    }

    pub fn full_box(&self) -> ElementBox {
        ElementBox {
            x0: 0,
            x1: self.n - 1,
            y0: 0,
            y1: self.n - 1,
        }
    }
}

/// Inclusive rectangle of element indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl ElementBox {
    pub fn single(ix: usize, iy: usize) -> Self {
        Self {
            x0: ix,
            x1: ix,
            y0: iy,
            y1: iy,
        }
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix <= self.x1 && iy >= self.y0 && iy <= self.y1
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn count(&self) -> usize {
        self.width() * self.height()
    }

    /// Grows by `rings` elements in every direction, clipped to an `n × n` mesh.
    pub fn expand(&self, rings: usize, n: usize) -> Self {
        Self {
            x0: self.x0.saturating_sub(rings),
            x1: (self.x1 + rings).min(n - 1),
            y0: self.y0.saturating_sub(rings),
            y1: (self.y1 + rings).min(n - 1),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            x0: self.x0.min(other.x0),
            x1: self.x1.max(other.x1),
            y0: self.y0.min(other.y0),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }

    pub fn elements(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y0..=self.y1).flat_map(move |iy| (self.x0..=self.x1).map(move |ix| iy * n + ix))
    }
}

/// Coarse mesh, its uniform refinement, and the parent relation.
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub coarse: CartesianMesh,
    pub fine: CartesianMesh,
    pub ratio: usize,
}

/// Splits every coarse element into `r × r` fine elements.
pub fn refine(coarse: &CartesianMesh, r: usize) -> Result<Refinement> {
    if r == 0 {
        return Err(invalid("refinement ratio must be positive"));
    }
    let n_fine = coarse
        .n
        .checked_mul(r)
        .filter(|&m| {
            m.checked_add(1).and_then(|k| k.checked_mul(k)).is_some() && m <= u32::MAX as usize
        })
        .ok_or_else(|| {
            invalid(format!(
                "refining {} cells by {r} overflows the index space",
                coarse.n
            ))
        })?;
    let fine = build_mesh(coarse.domain, n_fine)?;
    Ok(Refinement {
        coarse: coarse.clone(),
        fine,
        ratio: r,
    })
}

impl Refinement {
    #[inline]
    pub fn parent(&self, fine_element: usize) -> usize {
        let (ix, iy) = self.fine.element_coords(fine_element);
        self.coarse.element(ix / self.ratio, iy / self.ratio)
    }

    /// Fine elements covering coarse element `e`, row-major.
    pub fn children(&self, coarse_element: usize) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.coarse.element_coords(coarse_element);
        let r = self.ratio;
        (cy * r..(cy + 1) * r)
            .flat_map(move |iy| (cx * r..(cx + 1) * r).map(move |ix| self.fine.element(ix, iy)))
    }

    /// Lattice of `Q^q` nodes on the fine mesh.
    pub fn lattice(&self, q: usize) -> Lattice {
        Lattice {
            q,
            ratio: self.ratio,
            n_coarse: self.coarse.n,
            n_fine: self.fine.n,
        }
    }
}

/// Lagrange node lattice of the fine `Q^q` space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub q: usize,
    pub ratio: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
}

impl Lattice {
    /// Points per side.
    #[inline]
    pub fn side(&self) -> usize {
        self.q * self.n_fine + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize) -> usize {
        b * self.side() + a
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.side(), k / self.side())
    }

    /// Lattice points per coarse element side.
    #[inline]
    pub fn per_coarse(&self) -> usize {
        self.q * self.ratio
    }

    #[inline]
    pub fn is_boundary(&self, a: usize, b: usize) -> bool {
        let last = self.side() - 1;
        a == 0 || b == 0 || a == last || b == last
    }

    /// Coarse element index range (one axis) whose closure contains lattice
    /// coordinate `a`.
    #[inline]
    pub fn coarse_range(&self, a: usize) -> (usize, usize) {
        let s = self.per_coarse();
        if a.is_multiple_of(s) {
            let k = a / s;
            (k.saturating_sub(1), k.min(self.n_coarse - 1))
        } else {
            (a / s, a / s)
        }
    }

    /// Lattice box covering the closure of an element box.
    pub fn closure(&self, b: &ElementBox) -> LatticeBox {
        let s = self.per_coarse();
        LatticeBox {
            a0: b.x0 * s,
            a1: (b.x1 + 1) * s,
            b0: b.y0 * s,
            b1: (b.y1 + 1) * s,
        }
    }

    /// Lattice box of fine element `(ix, iy)`.
    pub fn fine_element_box(&self, ix: usize, iy: usize) -> LatticeBox {
        LatticeBox {
            a0: ix * self.q,
            a1: (ix + 1) * self.q,
            b0: iy * self.q,
            b1: (iy + 1) * self.q,
        }
    }
}

/// Inclusive rectangle of lattice points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    pub a0: usize,
    pub a1: usize,
    pub b0: usize,
    pub b1: usize,
}

impl LatticeBox {
    pub fn width(&self) -> usize {
        self.a1 - self.a0 + 1
    }

    pub fn height(&self) -> usize {
        self.b1 - self.b0 + 1
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        a >= self.a0 && a <= self.a1 && b >= self.b0 && b <= self.b1
    }

    /// Offset of lattice point `(a, b)` inside the box, row-major.
    #[inline]
    pub fn offset(&self, a: usize, b: usize) -> usize {
        (b - self.b0) * self.width() + (a - self.a0)
    }

    pub fn union(&self, o: &Self) -> Self {
        Self {
            a0: self.a0.min(o.a0),
            a1: self.a1.max(o.a1),
            b0: self.b0.min(o.b0),
            b1: self.b1.max(o.b1),
        }
    }

    pub fn intersection(&self, o: &Self) -> Option<Self> {
        let r = Self {
            a0: self.a0.max(o.a0),
            a1: self.a1.min(o.a1),
            b0: self.b0.max(o.b0),
            b1: self.b1.min(o.b1),
        };
        (r.a0 <= r.a1 && r.b0 <= r.b1).then_some(r)
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.b0..=self.b1).flat_map(move |b| (self.a0..=self.a1).map(move |a| (a, b)))
    }
}

/// `ℓ`-th order element patch `N^ℓ(S)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub centers: Vec<usize>,
    pub order: usize,
    /// Sorted element ids.
    pub elements: Vec<usize>,
    /// Bounding box of `elements`.
    pub bbox: ElementBox,
    n: usize,
    member: Vec<bool>,
}

/// Applies the one-ring expansion `ℓ` times to `centers`, clipped at `∂Ω`.
pub fn patch(mesh: &CartesianMesh, centers: &[usize], order: usize) -> Result<Patch> {
    if centers.is_empty() {
        return Err(invalid("patch needs a non-empty center set"));
    }
    let n = mesh.n;
    if let Some(&e) = centers.iter().find(|&&e| e >= mesh.element_count()) {
        return Err(invalid(format!(
            "element {e} is not part of a {n}x{n} mesh"
        )));
    }
    let mut member = vec![false; n * n];
    for &e in centers {
        member[e] = true;
    }
    for _ in 0..order {
        let mut next = member.clone();
        for iy in 0..n {
            for ix in 0..n {
                if !member[iy * n + ix] {
                    continue;
                }
                let b = ElementBox::single(ix, iy).expand(1, n);
                for e in b.elements(n) {
                    next[e] = true;
                }
            }
        }
        member = next;
    }
    Ok(Patch::from_members(centers, order, n, member))
}

impl Patch {
    fn from_members(centers: &[usize], order: usize, n: usize, member: Vec<bool>) -> Self {
        let elements: Vec<usize> = (0..n * n).filter(|&e| member[e]).collect();
        let mut bbox = ElementBox {
            x0: n,
            x1: 0,
            y0: n,
            y1: 0,
        };
        for &e in &elements {
            let (ix, iy) = (e % n, e / n);
            bbox.x0 = bbox.x0.min(ix);
            bbox.x1 = bbox.x1.max(ix);
            bbox.y0 = bbox.y0.min(iy);
            bbox.y1 = bbox.y1.max(iy);
        }
        let mut centers = centers.to_vec();
        centers.sort_unstable();
        centers.dedup();
        Self {
            centers,
            order,
            elements,
            bbox,
            n,
            member,
        }
    }

    /// Patch consisting of a whole element rectangle.
    pub fn from_box(mesh: &CartesianMesh, b: ElementBox) -> Self {
        let n = mesh.n;
        let mut member = vec![false; n * n];
        for e in b.elements(n) {
            member[e] = true;
        }
        let centers: Vec<usize> = b.elements(n).collect();
        Self::from_members(&centers, 0, n, member)
    }

    #[inline]
    pub fn contains(&self, e: usize) -> bool {
        self.member[e]
    }

    #[inline]
    pub fn contains_xy(&self, ix: usize, iy: usize) -> bool {
        self.member[iy * self.n + ix]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_rectangular(&self) -> bool {
        self.bbox.count() == self.elements.len()
    }

    /// Whether every element of `other` belongs to this patch.
    pub fn covers(&self, other: &Patch) -> bool {
        other.elements.iter().all(|&e| self.contains(e))
    }

    /// A coarse node is interior to the patch when all mesh elements around
    /// it belong to the patch and it does not lie on `∂Ω`.
    pub fn is_interior_node(&self, mesh: &CartesianMesh, ix: usize, iy: usize) -> bool {
        !mesh.is_boundary_node(ix, iy)
            && mesh
                .elements_around_node(ix, iy)
                .elements(mesh.n)
                .all(|e| self.contains(e))
    }
}

/// Boundary treatment of local fine spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceCondition {
    /// Zero trace on the whole patch boundary (ambient space `H¹₀(Ω)`).
    Vanishing,
    /// Zero trace only on the part of the patch boundary inside `Ω`
    /// (ambient space `H¹(Ω)`).
    InteriorOnly,
}

/// Fine `Q^q` lattice nodes strictly inside the patch (`H¹₀` ambient space).
pub fn fine_dofs_in_patch(refinement: &Refinement, patch: &Patch, q: usize) -> Vec<usize> {
    fine_dofs_in_patch_with(refinement, patch, q, TraceCondition::Vanishing)
}

/// Fine lattice nodes of the local space `{v : supp v ⊂ patch}` under the
/// given trace condition, sorted by lattice index.
pub fn fine_dofs_in_patch_with(
    refinement: &Refinement,
    patch: &Patch,
    q: usize,
    trace: TraceCondition,
) -> Vec<usize> {
    let lat = refinement.lattice(q);
    let closure = lat.closure(&patch.bbox);
    let mut dofs = Vec::new();
    for (a, b) in closure.points() {
        if trace == TraceCondition::Vanishing && lat.is_boundary(a, b) {
            continue;
        }
        let (x0, x1) = lat.coarse_range(a);
        let (y0, y1) = lat.coarse_range(b);
        let inside = (y0..=y1).all(|iy| (x0..=x1).all(|ix| patch.contains_xy(ix, iy)));
        if inside {
            dofs.push(lat.index(a, b));
        }
    }
    dofs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> CartesianMesh {
        build_mesh(Domain::unit_square(), n).unwrap()
    }

    #[test]
    fn mesh_counts() {
        let m = unit(2);
        assert_eq!(m.element_count(), 4);
        assert_eq!(m.node_count(), 9);
        assert_eq!(m.boundary_flags().iter().filter(|&&b| b).count(), 8);

        let m = unit(1);
        assert_eq!((m.element_count(), m.node_count()), (1, 4));
        assert!(m.boundary_flags().into_iter().all(|b| b));

        let m = build_mesh(Domain::centered(6.0).unwrap(), 8).unwrap();
        assert_eq!(m.h, 1.5);
        assert!(build_mesh(Domain::unit_square(), 0).is_err());
        assert!(Domain::new([0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn refinement_parents() {
        let r = refine(&unit(2), 4).unwrap();
        assert_eq!(r.fine.n, 8);
        assert_eq!(r.parent(r.fine.element(5, 3)), r.coarse.element(1, 0));

        let id = refine(&unit(1), 1).unwrap();
        assert_eq!(id.fine, id.coarse);

        let big = refine(&unit(4), 32).unwrap();
        assert_eq!(big.fine.n, 128);
        assert_eq!(big.fine.element_count(), 16384);

        assert!(refine(&unit(4), 0).is_err());
        assert!(refine(&unit(4), usize::MAX / 2).is_err());
    }

    #[test]
    fn children_round_trip() {
        let r = refine(&unit(3), 4).unwrap();
        for e in 0..r.coarse.element_count() {
            let kids: Vec<_> = r.children(e).collect();
            assert_eq!(kids.len(), 16);
            assert!(kids.iter().all(|&k| r.parent(k) == e));
        }
    }

    #[test]
    fn patch_sizes() {
        let m = unit(8);
        let c = m.element(3, 3);
        assert_eq!(patch(&m, &[c], 0).unwrap().len(), 1);
        assert_eq!(patch(&m, &[c], 1).unwrap().len(), 9);
        assert_eq!(patch(&m, &[c], 2).unwrap().len(), 25);
        assert_eq!(patch(&m, &[m.element(0, 0)], 1).unwrap().len(), 4);
        assert!(patch(&m, &[], 1).is_err());
        assert!(patch(&m, &[64], 1).is_err());
    }

    #[test]
    fn patch_dofs() {
        let coarse = unit(2);
        let r = refine(&coarse, 2).unwrap();
        let whole = patch(&coarse, &[0, 1, 2, 3], 0).unwrap();
        assert_eq!(fine_dofs_in_patch(&r, &whole, 1).len(), 9);

        let single = patch(&coarse, &[0], 0).unwrap();
        assert_eq!(fine_dofs_in_patch(&r, &single, 1).len(), 1);

        let r4 = refine(&coarse, 4).unwrap();
        assert_eq!(fine_dofs_in_patch(&r4, &single, 1).len(), 9);
        assert_eq!(fine_dofs_in_patch(&r4, &single, 2).len(), 49);
    }

    #[test]
    fn h1_patch_dofs_keep_domain_boundary() {
        let coarse = unit(2);
        let r = refine(&coarse, 2).unwrap();
        let whole = patch(&coarse, &[0, 1, 2, 3], 0).unwrap();
        assert_eq!(
            fine_dofs_in_patch_with(&r, &whole, 1, TraceCondition::InteriorOnly).len(),
            25
        );
        // Lower-left element: its interior node plus the four nodes on the two
        // domain edges that do not touch the neighbouring elements' interfaces.
        let single = patch(&coarse, &[0], 0).unwrap();
        let dofs = fine_dofs_in_patch_with(&r, &single, 1, TraceCondition::InteriorOnly);
        assert_eq!(dofs.len(), 4);
    }

    #[test]
    fn interior_nodes_of_patch() {
        let m = unit(8);
        let p = patch(&m, &[m.element(3, 3)], 1).unwrap();
        let interior = (0..=8)
            .flat_map(|iy| (0..=8).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| p.is_interior_node(&m, ix, iy))
            .count();
        assert_eq!(interior, 4);
    }
}
