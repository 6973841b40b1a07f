"""Conforming triangulations of the unit square sharing one bisection forest.

Every mesh of a run is a leaf set ("cut") of a single newest-vertex-bisection
forest. A node stores its vertex triple ``(a, b, c)`` where ``(a, b)`` is the
refinement edge and ``c`` the newest vertex. Bisection inserts the midpoint
``m`` of ``(a, b)`` (registered once per forest, so neighbours share it) and
creates the children ``(c, a, m)`` and ``(b, c, m)``.

Because meshes are cuts of one forest, the coarsest common refinement of two
meshes is again a cut (the deeper of the two along each root-to-leaf path),
and each of its elements lies inside exactly one element of either mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .basis import LOCAL_EDGES


class ForestMismatchError(ValueError):
    """Raised when meshes from different forests are combined."""


class RefinementForest:
    """Shared vertex registry plus the bisection tree over a macro mesh."""

    def __init__(self, vertices, triangles):
        self.coords: list[tuple[float, float]] = [tuple(map(float, v)) for v in vertices]
        self.midpoints: dict[tuple[int, int], int] = {}
        self.node_vertices: list[tuple[int, int, int]] = []
        self.parent: list[int] = []
        self.children: list[tuple[int, int] | None] = []
        self.level: list[int] = []
        for tri in triangles:
            self._add_node(tuple(int(v) for v in tri), -1, 0)
        self.roots = list(range(len(self.node_vertices)))

    def _add_node(self, tri, parent, level):
        self.node_vertices.append(tri)
        self.parent.append(parent)
        self.children.append(None)
        self.level.append(level)
        return len(self.node_vertices) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.node_vertices)

    def midpoint(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        m = self.midpoints.get(key)
        if m is None:
            xa, xb = self.coords[a], self.coords[b]
            self.coords.append((0.5 * (xa[0] + xb[0]), 0.5 * (xa[1] + xb[1])))
            m = len(self.coords) - 1
            self.midpoints[key] = m
        return m

    def bisect(self, node: int) -> tuple[int, int]:
        """Children of ``node``, creating them on first use."""
        ch = self.children[node]
        if ch is not None:
            return ch
        a, b, c = self.node_vertices[node]
        m = self.midpoint(a, b)
        lev = self.level[node] + 1
        c1 = self._add_node((c, a, m), node, lev)
        c2 = self._add_node((b, c, m), node, lev)
        self.children[node] = (c1, c2)
        return c1, c2

    def ancestors(self, node: int):
        p = self.parent[node]
        while p >= 0:
            yield p
            p = self.parent[p]

    def containing(self, node: int, leafset: set[int]) -> int:
        """The member of ``leafset`` equal to ``node`` or one of its ancestors."""
        if node in leafset:
            return node
        for p in self.ancestors(node):
            if p in leafset:
                return p
        raise ValueError(f"node {node} is not below the given cut")


@dataclass(eq=False)
class MeshLevel:
    """A conforming triangulation given by a leaf set of a forest.

    ``triangles`` uses a local vertex numbering that is monotone in the
    forest's global vertex numbering, so orientation decisions based on
    vertex order agree with every other mesh of the forest.
    """

    forest: RefinementForest
    leaves: np.ndarray
    vertex_ids: np.ndarray = field(init=False)
    vertices: np.ndarray = field(init=False)
    triangles: np.ndarray = field(init=False)

    def __post_init__(self):
        self.leaves = np.asarray(sorted(int(x) for x in self.leaves), dtype=np.int64)
        tri_g = np.array([self.forest.node_vertices[i] for i in self.leaves], dtype=np.int64)
        self.vertex_ids = np.unique(tri_g)
        lookup = {int(g): i for i, g in enumerate(self.vertex_ids)}
        self.triangles = np.vectorize(lookup.__getitem__, otypes=[np.int64])(tri_g).reshape(tri_g.shape)
        coords = np.asarray(self.forest.coords)
        self.vertices = coords[self.vertex_ids]

    # -- basic sizes -------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.leaves)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @cached_property
    def leaf_index(self) -> dict[int, int]:
        return {int(n): i for i, n in enumerate(self.leaves)}

    # -- edges ---------------------------------------------------------------
    @cached_property
    def _edge_data(self):
        T = self.triangles
        pairs = np.concatenate([T[:, [i, j]] for i, j in LOCAL_EDGES])
        srt = np.sort(pairs, axis=1)
        edges, inv = np.unique(srt, axis=0, return_inverse=True)
        inv = inv.ravel()
        nel = len(T)
        elem_edges = inv.reshape(3, nel).T.copy()
        edge_elems = -np.ones((len(edges), 2), dtype=np.int64)
        count = np.zeros(len(edges), dtype=np.int64)
        for k in range(3):
            for e_idx, el in zip(elem_edges[:, k], range(nel)):
                edge_elems[e_idx, count[e_idx]] = el
                count[e_idx] += 1
        return edges, elem_edges, edge_elems, count

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def elem_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def edge_elems(self) -> np.ndarray:
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self._edge_data[3] == 1)

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @cached_property
    def boundary_edge_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.edges), dtype=bool)
        mask[self.boundary_edges] = True
        return mask

    # -- geometry ------------------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        X = self.vertices[self.triangles]
        return np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobians)

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        X = self.vertices
        return np.linalg.norm(X[self.edges[:, 1]] - X[self.edges[:, 0]], axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths[self.elem_edges].max(axis=1)

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (nel, 3, 2)."""
        Jinv = np.linalg.inv(self.jacobians)  # rows: d(xi_k)/dx
        g = np.empty((self.n_elements, 3, 2))
        g[:, 1] = Jinv[:, 0]
        g[:, 2] = Jinv[:, 1]
        g[:, 0] = -g[:, 1] - g[:, 2]
        return g

    @cached_property
    def shape_ratios(self) -> np.ndarray:
        """Circumradius over inradius, 2 for an equilateral triangle."""
        L = self.edge_lengths[self.elem_edges]
        a, b, c = L[:, 0], L[:, 1], L[:, 2]
        A = self.areas
        R = a * b * c / (4 * A)
        r = 2 * A / (a + b + c)
        return R / r

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def barycentric(self, elems, points) -> np.ndarray:
        """Barycentric coordinates of ``points`` (n, 2) with respect to ``elems`` (n,)."""
        elems = np.asarray(elems)
        x0 = self.vertices[self.triangles[elems, 0]]
        Jinv = np.linalg.inv(self.jacobians[elems])
        ref = np.einsum("nij,nj->ni", Jinv, np.asarray(points) - x0)
        return np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])

    def map_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical images of reference points on every element: (nel, nq, 2)."""
        x0 = self.vertices[self.triangles[:, 0]]
        return x0[:, None, :] + np.einsum("eij,qj->eqi", self.jacobians, ref_points)

    def vertex_elements(self) -> list[np.ndarray]:
        """Elements incident to each vertex."""
        order = np.argsort(self.triangles.ravel(), kind="stable")
        verts = self.triangles.ravel()[order]
        elems = order // 3
        splits = np.searchsorted(verts, np.arange(1, self.n_vertices))
        return np.split(elems, splits)

    # -- audits --------------------------------------------------------------
    def conformity_audit(self) -> list[str]:
        """Problems found by the edge-incidence check; empty when conforming."""
        issues = []
        count = self._edge_data[3]
        if np.any(count > 2):
            issues.append("edge shared by more than two triangles")
        if np.any(self.signed_areas <= 0):
            issues.append("non-positive orientation")
        # hanging nodes: a used vertex lying in the interior of some edge
        used = set(int(g) for g in self.vertex_ids)
        for a, b in self.edges:
            ga, gb = int(self.vertex_ids[a]), int(self.vertex_ids[b])
            key = (ga, gb) if ga < gb else (gb, ga)
            m = self.forest.midpoints.get(key)
            if m is not None and m in used:
                issues.append(f"hanging node on edge {key}")
                break
        # boundary edges must lie on the square boundary
        X = self.vertices[self.edges[self.boundary_edges]]
        on_bdry = np.zeros(len(X), dtype=bool)
        for d in (0, 1):
            for val in (0.0, 1.0):
                on_bdry |= np.all(np.abs(X[:, :, d] - val) < 1e-14, axis=1)
        if not np.all(on_bdry):
            issues.append("boundary edge away from the domain boundary")
        return issues

    def is_conforming(self) -> bool:
        return not self.conformity_audit()


# ---------------------------------------------------------------------------
# construction and refinement
# ---------------------------------------------------------------------------

def build_uniform_mesh(n: int) -> MeshLevel:
    """Unit square split into n x n cells, each cut along its rising diagonal.

    The diagonal is the refinement edge of both cell triangles.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v11, v00, v10))
            tris.append((v00, v11, v01))
    forest = RefinementForest(verts, tris)
    return MeshLevel(forest, np.array(forest.roots))


def _closure(forest: RefinementForest, leaves: set[int]) -> set[int]:
    """Bisect leaves until no leaf edge carries a midpoint used by another leaf."""
    while True:
        used = set()
        for nd in leaves:
            used.update(forest.node_vertices[nd])
        hanging = []
        for nd in leaves:
            tri = forest.node_vertices[nd]
            for i, j in LOCAL_EDGES:
                a, b = tri[i], tri[j]
                m = forest.midpoints.get((a, b) if a < b else (b, a))
                if m is not None and m in used:
                    hanging.append(nd)
                    break
        if not hanging:
            return leaves
        for nd in hanging:
            leaves.discard(nd)
            leaves.update(forest.bisect(nd))


def refine(mesh: MeshLevel, marked) -> MeshLevel:
    """Bisect the marked elements (by index) once, then restore conformity."""
    marked = [int(k) for k in np.atleast_1d(np.asarray(marked, dtype=np.int64))]
    if not marked:
        return MeshLevel(mesh.forest, mesh.leaves.copy())
    if min(marked) < 0 or max(marked) >= mesh.n_elements:
        raise IndexError("marked element out of range")
    forest = mesh.forest
    leaves = set(int(x) for x in mesh.leaves)
    for k in set(marked):
        nd = int(mesh.leaves[k])
        leaves.discard(nd)
        leaves.update(forest.bisect(nd))
    leaves = _closure(forest, leaves)
    return MeshLevel(forest, np.array(sorted(leaves)))


def refine_uniform(mesh: MeshLevel, rounds: int = 1) -> MeshLevel:
    """Bisect every element ``rounds`` times (two rounds halve h)."""
    for _ in range(rounds):
        mesh = refine(mesh, np.arange(mesh.n_elements))
    return mesh


def _check_same_forest(*meshes: MeshLevel):
    f = meshes[0].forest
    for m in meshes[1:]:
        if m.forest is not f:
            raise ForestMismatchError("meshes belong to different refinement forests")


def union_cut(*meshes: MeshLevel) -> MeshLevel:
    """Coarsest common refinement of several cuts of one forest."""
    _check_same_forest(*meshes)
    forest = meshes[0].forest
    union: set[int] = set()
    for m in meshes:
        union.update(int(x) for x in m.leaves)
    covered: set[int] = set()
    for nd in union:
        for p in forest.ancestors(nd):
            if p in covered:
                break
            covered.add(p)
    return MeshLevel(forest, np.array(sorted(union - covered)))


def parent_map(fine: MeshLevel, coarse: MeshLevel) -> np.ndarray:
    """Index in ``coarse`` of the element containing each element of ``fine``."""
    _check_same_forest(fine, coarse)
    forest = fine.forest
    cset = set(int(x) for x in coarse.leaves)
    idx = coarse.leaf_index
    return np.array([idx[forest.containing(int(nd), cset)] for nd in fine.leaves], dtype=np.int64)


def common_refinement(prev: MeshLevel, nxt: MeshLevel):
    """Union cut of two meshes with the containment maps into each of them."""
    fine = union_cut(prev, nxt)
    return fine, parent_map(fine, prev), parent_map(fine, nxt)


def same_mesh(a: MeshLevel, b: MeshLevel) -> bool:
    return a.forest is b.forest and np.array_equal(a.leaves, b.leaves)


def coarsen_to(mesh: MeshLevel, target: MeshLevel) -> MeshLevel:
    """Coarsening is a change to a shallower cut of the same forest."""
    _check_same_forest(mesh, target)
    return MeshLevel(target.forest, target.leaves.copy())


# ---------------------------------------------------------------------------
# vertex patches
# ---------------------------------------------------------------------------

@dataclass
class Patch:
    """Vertex patch of a coarse mesh resolved by a finer submesh.

    ``psi`` holds the values of the hat function at the three vertices of
    each submesh element (it is affine there). ``gamma_edges`` are the fine
    edges carrying a zero normal-trace condition.
    """

    vertex: int
    elements: np.ndarray
    coarse_elements: np.ndarray
    local_vertex: np.ndarray
    psi: np.ndarray
    kind: str
    gamma_edges: np.ndarray
    boundary_edges: np.ndarray
    p: int

    @property
    def is_interior(self) -> bool:
        return self.kind == "interior"


def vertex_patches(coarse: MeshLevel, fine: MeshLevel, fine_to_coarse=None, fine_degrees=None):
    """One patch per vertex of ``coarse`` with its submesh in ``fine``.

    ``fine_degrees`` are the polynomial degrees on the fine elements
    (default 1); the patch degree is their maximum plus one.
    """
    if fine_to_coarse is None:
        fine_to_coarse = parent_map(fine, coarse)
    fine_to_coarse = np.asarray(fine_to_coarse)
    if fine_degrees is None:
        fine_degrees = np.ones(fine.n_elements, dtype=int)
    fine_degrees = np.asarray(fine_degrees)
    # barycentric coordinates of fine vertices in their coarse parents
    Xf = fine.vertices[fine.triangles]  # (nf, 3, 2)
    nf = fine.n_elements
    par = np.repeat(fine_to_coarse, 3)
    lam = coarse.barycentric(par, Xf.reshape(-1, 2)).reshape(nf, 3, 3)
    lam[np.abs(lam) < 1e-14] = 0.0
    coarse_vertex_elems = coarse.vertex_elements()
    fine_children = [[] for _ in range(coarse.n_elements)]
    for k, c in enumerate(fine_to_coarse):
        fine_children[c].append(k)
    bvert = coarse.boundary_vertex_mask
    fine_bedge = fine.boundary_edge_mask
    patches = []
    for a in range(coarse.n_vertices):
        celems = coarse_vertex_elems[a]
        elems, loc, cel = [], [], []
        for ce in celems:
            i = int(np.flatnonzero(coarse.triangles[ce] == a)[0])
            for k in fine_children[ce]:
                elems.append(k)
                loc.append(i)
                cel.append(ce)
        elems = np.array(elems, dtype=np.int64)
        loc = np.array(loc, dtype=np.int64)
        psi = lam[elems, :, loc]  # (m, 3)
        # patch boundary: fine edges of the submesh used once inside the patch
        ed = fine.elem_edges[elems].ravel()
        uniq, cnt = np.unique(ed, return_counts=True)
        outer = uniq[cnt == 1]
        on_domain = fine_bedge[outer]
        kind = "boundary" if bvert[a] else "interior"
        if kind == "interior":
            gamma = outer
        else:
            gamma = outer[~on_domain]
        patches.append(Patch(
            vertex=a, elements=elems, coarse_elements=np.array(cel, dtype=np.int64),
            local_vertex=loc, psi=psi, kind=kind, gamma_edges=np.sort(gamma),
            boundary_edges=np.sort(outer[on_domain]),
            p=int(fine_degrees[elems].max()) + 1,
        ))
    return patches


def hat_function_sum(coarse: MeshLevel, points: np.ndarray) -> np.ndarray:
    """Sum of all hat functions of ``coarse`` at ``points`` (located by search)."""
    elems = locate_points(coarse, points)
    lam = coarse.barycentric(elems, points)
    return lam.sum(axis=1)


def locate_points(mesh: MeshLevel, points: np.ndarray) -> np.ndarray:
    """Element containing each point (brute force; intended for audits)."""
    points = np.atleast_2d(points)
    out = np.empty(len(points), dtype=np.int64)
    x0 = mesh.vertices[mesh.triangles[:, 0]]
    Jinv = np.linalg.inv(mesh.jacobians)
    for k, x in enumerate(points):
        ref = np.einsum("nij,nj->ni", Jinv, x - x0)
        lam = np.column_stack([1 - ref.sum(axis=1), ref])
        out[k] = int(np.argmax(lam.min(axis=1)))
    return out


# ---------------------------------------------------------------------------
# plain-text and VTK output
# ---------------------------------------------------------------------------

MESH_HEADER = "# eqflux mesh v1"


def dump_mesh(mesh: MeshLevel, path) -> None:
    """Write the forest and the leaf set.

    Layout (whitespace separated, one record per line)::

        # eqflux mesh v1
        vertices <count>
        <x> <y>                     one line per forest vertex
        nodes <count>
        <parent> <a> <b> <c>        one line per forest node, parent -1 for roots
        leaves <count>
        <node id>                   one line per element of this mesh
    """
    f = mesh.forest
    lines = [MESH_HEADER, f"vertices {len(f.coords)}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in f.coords]
    lines.append(f"nodes {f.n_nodes}")
    lines += [f"{f.parent[i]} {a} {b} {c}" for i, (a, b, c) in enumerate(f.node_vertices)]
    lines.append(f"leaves {mesh.n_elements}")
    lines += [str(int(x)) for x in mesh.leaves]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> MeshLevel:
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if rows[0] != MESH_HEADER:
        raise ValueError("not an eqflux mesh file")
    pos = 1

    def section(name):
        nonlocal pos
        key, count = rows[pos].split()
        if key != name:
            raise ValueError(f"expected section {name!r}, found {key!r}")
        pos += 1
        body = rows[pos:pos + int(count)]
        pos += int(count)
        return body

    coords = [tuple(float(t) for t in r.split()) for r in section("vertices")]
    nodes = [tuple(int(t) for t in r.split()) for r in section("nodes")]
    leaves = [int(r) for r in section("leaves")]
    roots = [nd[1:] for nd in nodes if nd[0] < 0]
    forest = RefinementForest(np.array(coords[: max(max(r) for r in roots) + 1]), roots)
    forest.coords = [tuple(c) for c in coords]
    for i, (par, a, b, c) in enumerate(nodes):
        if par < 0:
            continue
        if i != forest.n_nodes:
            raise ValueError("forest nodes out of order")
        forest._add_node((a, b, c), par, forest.level[par] + 1)
        ch = forest.children[par]
        forest.children[par] = (i,) if ch is None else (ch[0], i)
        pa, pb, _ = forest.node_vertices[par]
        key = (pa, pb) if pa < pb else (pb, pa)
        forest.midpoints[key] = c
    return MeshLevel(forest, np.array(leaves))


def export_vtk(mesh: MeshLevel, path, cell_data: dict | None = None, point_data: dict | None = None) -> None:
    """Legacy-VTK ASCII unstructured grid with optional scalar fields."""
    nv, ne = mesh.n_vertices, mesh.n_elements
    out = ["# vtk DataFile Version 3.0", "eqflux mesh", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {ne} {4 * ne}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {ne}")
    out += ["5"] * ne
    if cell_data:
        out.append(f"CELL_DATA {ne}")
        for name, vals in cell_data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(float(v)) for v in np.asarray(vals).ravel()]
    if point_data:
        out.append(f"POINT_DATA {nv}")
        for name, vals in point_data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(float(v)) for v in np.asarray(vals).ravel()]
    Path(path).write_text("\n".join(out) + "\n")
