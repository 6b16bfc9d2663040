"""Minimal assembly runtime: meshes, affine maps, dof maps, a quadrature
oracle for element tensors, sparse assembly and a conjugate gradient solver.

The runtime exists to close the loop around compiled forms: assemble global
matrices either by contracting reference and geometry tensors or by direct
quadrature, compare the two, and run small boundary value problems end to
end.  Element tensor evaluation is pure per cell; only the triplet buffer
accumulating global entries is stateful, so cells may be processed in any
order (or concurrently, merging buffers at finalize).
"""

import math

import numpy as np
import scipy.io
import scipy.sparse

from .errors import (
    DegenerateCell,
    DimensionMismatch,
    MaxIterations,
    NotSymmetric,
)
from .form_language import BasisFunction, Form, expand_to_monomials
from .reference_elements import ReferenceCell, make_quadrature
from .tensor_representation import CompiledForm

__all__ = [
    "Mesh",
    "AffineMap",
    "DofMap",
    "SparseBuilder",
    "load_mesh",
    "save_mesh",
    "unit_square_mesh",
    "unit_cube_mesh",
    "perturb_mesh",
    "affine_map",
    "affine_maps",
    "build_dofmap",
    "quadrature_element_tensor",
    "assemble",
    "cg_solve",
    "apply_dirichlet",
    "lift_solution",
    "write_matrix_market",
    "l2_error",
]

_SHAPES = {1: "interval", 2: "triangle", 3: "tetrahedron"}


def _cell_matrix(coords):
    """Columns are edge vectors from vertex 0: x = x0 + B X."""
    coords = np.asarray(coords, dtype=float)
    return (coords[1:] - coords[0]).T


class Mesh:
    """Simplicial mesh: vertex coordinates plus (d+1)-tuples of vertex ids.

    Cells are reoriented at construction: a cell with negative Jacobian
    determinant gets its last two vertices swapped, so every map built from
    the mesh has positive determinant.  Degenerate cells are rejected.
    """

    def __init__(self, vertices, cells):
        self.vertices = np.array(vertices, dtype=float)
        if self.vertices.ndim != 2:
            raise DimensionMismatch("vertex array must be two dimensional")
        self.dim = self.vertices.shape[1]
        if self.dim not in _SHAPES:
            raise DimensionMismatch("unsupported mesh dimension %d" % self.dim)
        self.cells = np.array(cells, dtype=int)
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dim + 1:
            raise DimensionMismatch(
                "cells must have %d vertices each" % (self.dim + 1))
        if self.cells.size and (self.cells.min() < 0 or
                                self.cells.max() >= len(self.vertices)):
            raise DimensionMismatch("cell vertex id out of range")
        self.cell_shape = _SHAPES[self.dim]

        for c in range(len(self.cells)):
            coords = self.vertices[self.cells[c]]
            B = _cell_matrix(coords)
            det = float(np.linalg.det(B))
            scale = max(np.abs(B).max(), 1e-30)
            if abs(det) <= 1e-14 * scale ** self.dim:
                raise DegenerateCell("cell %d is degenerate" % c)
            if det < 0:
                self.cells[c, [-2, -1]] = self.cells[c, [-1, -2]]

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    def cell_coordinates(self, cell_id):
        return self.vertices[self.cells[cell_id]]

    def reference_cell(self):
        return ReferenceCell(self.cell_shape)

    def facets(self):
        """All (d-1)-subentities as sorted vertex tuples, with cell counts."""
        from itertools import combinations
        counts = {}
        for cell in self.cells:
            for f in combinations(sorted(cell), self.dim):
                counts[f] = counts.get(f, 0) + 1
        return counts

    def boundary_vertices(self):
        out = set()
        for facet, count in self.facets().items():
            if count == 1:
                out.update(facet)
        return out


def save_mesh(mesh, path):
    """ASCII format: 'mesh <d> <#vertices> <#cells>', vertices, cells."""
    with open(path, "w") as fh:
        fh.write("mesh %d %d %d\n" % (mesh.dim, mesh.num_vertices,
                                      mesh.num_cells))
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")


def load_mesh(path):
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens or tokens[0] != "mesh":
        raise DimensionMismatch("not a mesh file (missing 'mesh' header)")
    d, nv, nc = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos = 4
    need = nv * d + nc * (d + 1)
    if len(tokens) - pos != need:
        raise DimensionMismatch("mesh file has %d data fields, expected %d"
                                % (len(tokens) - pos, need))
    vertices = np.array(tokens[pos:pos + nv * d], dtype=float).reshape(nv, d)
    pos += nv * d
    cells = np.array(tokens[pos:], dtype=int).reshape(nc, d + 1)
    return Mesh(vertices, cells)


def unit_square_mesh(n):
    """Uniform (n+1)^2 lattice on [0,1]^2, two triangles per square."""
    xs = np.linspace(0.0, 1.0, n + 1)
    vid = lambda i, j: i * (n + 1) + j
    vertices = [(xs[i], xs[j]) for i in range(n + 1) for j in range(n + 1)]
    cells = []
    for i in range(n):
        for j in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return Mesh(vertices, cells)


def unit_cube_mesh(n):
    """Uniform lattice on [0,1]^3, six tetrahedra per cube."""
    xs = np.linspace(0.0, 1.0, n + 1)
    m = n + 1
    vid = lambda i, j, k: (i * m + j) * m + k
    vertices = [(xs[i], xs[j], xs[k])
                for i in range(m) for j in range(m) for k in range(m)]
    cells = []
    # six tetrahedra along the vertex-ordered paths from corner to corner
    paths = [
        ((1, 0, 0), (1, 1, 0)), ((1, 0, 0), (1, 0, 1)),
        ((0, 1, 0), (1, 1, 0)), ((0, 1, 0), (0, 1, 1)),
        ((0, 0, 1), (1, 0, 1)), ((0, 0, 1), (0, 1, 1)),
    ]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                v0 = vid(i, j, k)
                v7 = vid(i + 1, j + 1, k + 1)
                for (a, b) in paths:
                    va = vid(i + a[0], j + a[1], k + a[2])
                    vb = vid(i + b[0], j + b[1], k + b[2])
                    cells.append((v0, va, vb, v7))
    return Mesh(vertices, cells)


def perturb_mesh(mesh, amount=0.2, seed=0):
    """Random interior-vertex perturbation preserving validity.

    Each non-boundary vertex moves by at most ``amount`` times its shortest
    incident edge; the Mesh constructor then restores positive orientation.
    """
    rng = np.random.default_rng(seed)
    shortest = np.full(mesh.num_vertices, np.inf)
    for cell in mesh.cells:
        coords = mesh.vertices[cell]
        for a in range(len(cell)):
            for b in range(a + 1, len(cell)):
                e = np.linalg.norm(coords[a] - coords[b])
                shortest[cell[a]] = min(shortest[cell[a]], e)
                shortest[cell[b]] = min(shortest[cell[b]], e)
    vertices = mesh.vertices.copy()
    boundary = mesh.boundary_vertices()
    for v in range(mesh.num_vertices):
        if v in boundary or not np.isfinite(shortest[v]):
            continue
        step = rng.uniform(-1.0, 1.0, size=mesh.dim)
        vertices[v] += amount * shortest[v] * step / max(
            np.linalg.norm(step), 1e-30)
    return Mesh(vertices, mesh.cells)


# --- affine maps -----------------------------------------------------------------


class AffineMap:
    """x = x0 + B X with B = dx/dX, g = dX/dx and det = det B."""

    __slots__ = ("B", "g", "det", "x0")

    def __init__(self, B, g, det, x0):
        self.B = B
        self.g = g
        self.det = det
        self.x0 = x0

    def map_points(self, X):
        return np.asarray(X) @ self.B.T + self.x0


def affine_map(mesh, cell_id):
    coords = mesh.cell_coordinates(cell_id)
    B = _cell_matrix(coords)
    det = float(np.linalg.det(B))
    scale = max(np.abs(B).max(), 1e-30)
    if abs(det) <= 1e-14 * scale ** mesh.dim:
        raise DegenerateCell("cell %d is degenerate" % cell_id)
    return AffineMap(B, np.linalg.inv(B), det, coords[0].copy())


def affine_maps(mesh):
    """Vectorized maps for every cell: (dets, gs, Bs, x0s)."""
    coords = mesh.vertices[mesh.cells]
    Bs = np.swapaxes(coords[:, 1:] - coords[:, :1], 1, 2)
    dets = np.linalg.det(Bs)
    gs = np.linalg.inv(Bs)
    return dets, gs, Bs, coords[:, 0]


# --- dof maps --------------------------------------------------------------------


class DofMap:
    """Local-to-global dof numbering for one element over one mesh."""

    def __init__(self, element, global_dim, cell_dofs):
        self.element = element
        self.global_dim = global_dim
        self.cell_dofs = cell_dofs

    def __repr__(self):
        return "DofMap(M=%d, cells=%d, n=%d)" % (
            self.global_dim, *self.cell_dofs.shape)


def build_dofmap(mesh, element):
    """Number global dofs: vertex dofs first (one per vertex, numbered by
    vertex id), then edge blocks, face blocks and cell interiors; entities
    are keyed by their sorted global vertex tuples and dof positions along
    an entity follow the sorted order, so incident cells agree.  Vector
    elements are numbered component-major; discontinuous elements make every
    dof cell-private.
    """
    if element.cell.shape != mesh.cell_shape:
        raise DimensionMismatch(
            "element cell %r does not match mesh cells %r"
            % (element.cell.shape, mesh.cell_shape))

    ns = element.scalar_dim
    ncells = mesh.num_cells
    scalar_entities = [entry[:3] for entry in element.dof_entities[:ns]]

    if element.continuity == "discontinuous":
        scalar_global = ncells * ns
        scalar_dofs = (np.arange(ncells)[:, None] * ns +
                       np.arange(ns)[None, :])
    else:
        # canonical lattice orders per entity dimension
        lattice_rank = {}
        per_entity = {}
        for dim, entity, bary in scalar_entities:
            lattices = sorted({
                b for dd, ee, b in scalar_entities
                if dd == dim and ee == entity
            })
            lattice_rank[dim] = {b: k for k, b in enumerate(lattices)}
            per_entity[dim] = len(lattices)

        # shared entity enumeration, sorted lexicographically
        entity_rank = {}
        for dim in sorted(per_entity):
            if dim == 0 or dim == mesh.dim:
                continue
            keys = set()
            for cell in mesh.cells:
                for dd, entity, _ in scalar_entities:
                    if dd == dim:
                        keys.add(tuple(sorted(cell[v] for v in entity)))
            entity_rank[dim] = {k: r for r, k in enumerate(sorted(keys))}

        base = {}
        offset = 0
        for dim in sorted(per_entity):
            base[dim] = offset
            if dim == 0:
                offset += mesh.num_vertices
            elif dim == mesh.dim:
                offset += ncells * per_entity[dim]
            else:
                offset += len(entity_rank[dim]) * per_entity[dim]
        scalar_global = offset

        scalar_dofs = np.empty((ncells, ns), dtype=int)
        for c, cell in enumerate(mesh.cells):
            for k, (dim, entity, bary) in enumerate(scalar_entities):
                gverts = tuple(cell[v] for v in entity)
                if dim == 0:
                    scalar_dofs[c, k] = gverts[0]
                elif dim == mesh.dim:
                    pos = lattice_rank[dim][bary]
                    scalar_dofs[c, k] = base[dim] + c * per_entity[dim] + pos
                else:
                    order = np.argsort(gverts)
                    key = tuple(gverts[p] for p in order)
                    canon = tuple(bary[p] for p in order)
                    pos = lattice_rank[dim][canon]
                    scalar_dofs[c, k] = (base[dim] +
                                         entity_rank[dim][key] *
                                         per_entity[dim] + pos)

    comps = element.components
    if comps == 1:
        return DofMap(element, scalar_global, scalar_dofs)
    blocks = [scalar_dofs + comp * scalar_global for comp in range(comps)]
    return DofMap(element, comps * scalar_global, np.hstack(blocks))


# --- quadrature oracle ------------------------------------------------------------


_oracle_tabs = {}


def _oracle_tab(element, rule):
    key = (element._key(), rule.cell.shape, rule.exact_degree)
    if key not in _oracle_tabs:
        _oracle_tabs[key] = element.tabulate(rule.points)
    return _oracle_tabs[key]


def quadrature_element_tensor(form, amap, coefficients=(), reduced=False):
    """Element tensor by direct quadrature, independent of the tensor
    representation: per monomial, basis values and reference gradients are
    pretabulated at quadrature points, derivatives become physical through
    dX/dx, free indices are summed by explicit enumeration, and the rule is
    exact for the reference integrand degree p = sum(q_factor - #derivs).

    ``reduced`` switches to the underintegrating max(2q-2, 0) rule, for
    quadrature-cost sensitivity studies only.
    """
    if not isinstance(form, Form):
        raise TypeError("expected a Form")
    from itertools import product as iter_product

    d = form.cell.dim
    g = amap.g
    scale = abs(amap.det)
    dims = tuple(el.space_dim for el in form.arguments)
    A = np.zeros(dims)

    for monomial in expand_to_monomials(form):
        if reduced:
            qmax = max(f.element.degree for f in monomial.factors)
            p = max(2 * qmax - 2, 0)
        else:
            p = sum(max(f.element.degree - len(f.derivatives), 0)
                    for f in monomial.factors)
        rule = make_quadrature(form.cell.shape, p)

        free = []
        for f in monomial.factors:
            if (f.component is not None and f.component.kind == "free"
                    and f.component.id not in free):
                free.append(f.component.id)
            for ix in f.derivatives:
                if ix.kind == "free" and ix.id not in free:
                    free.append(ix.id)

        for combo in iter_product(range(d), repeat=len(free)):
            env = dict(zip(free, combo))
            operands = []
            slot_labels = []
            label = 1
            for f in monomial.factors:
                tab = _oracle_tab(f.element, rule)
                if f.element.value_rank == 1:
                    comp = (f.component.value if f.component.kind == "fixed"
                            else env[f.component.id])
                    vals = tab.values[:, comp, :]
                    grads = tab.gradients[:, comp, :, :]
                else:
                    vals = tab.values
                    grads = tab.gradients
                if f.derivatives:
                    (ix,) = f.derivatives
                    b = ix.value if ix.kind == "fixed" else env[ix.id]
                    arr = np.einsum("kap,a->kp", grads, g[:, b])
                else:
                    arr = vals
                if isinstance(f, BasisFunction):
                    operands += [arr, [label, 0]]
                    slot_labels.append((f.slot, label))
                    label += 1
                else:
                    w = np.asarray(coefficients[f.number], dtype=float)
                    if w.shape != (f.element.space_dim,):
                        raise DimensionMismatch(
                            "coefficient %d has %d dofs, element needs %d"
                            % (f.number, w.size, f.element.space_dim))
                    operands += [w @ arr, [0]]
            operands += [rule.weights, [0]]
            out = [lab for _, lab in sorted(slot_labels)]
            A += monomial.scalar * scale * np.einsum(*operands, out)
    return A


# --- assembly --------------------------------------------------------------------


class SparseBuilder:
    """Triplet accumulator; finalize sums duplicates into CSR (or a dense
    vector for one-dimensional shapes)."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, rows, values, cols=None):
        self._rows.append(np.asarray(rows, dtype=int).ravel())
        self._vals.append(np.asarray(values, dtype=float).ravel())
        if len(self.shape) == 2:
            if cols is None:
                raise DimensionMismatch("matrix builder needs column ids")
            self._cols.append(np.asarray(cols, dtype=int).ravel())

    def finalize(self):
        rows = np.concatenate(self._rows) if self._rows else np.empty(0, int)
        vals = np.concatenate(self._vals) if self._vals else np.empty(0)
        if len(self.shape) == 1:
            out = np.zeros(self.shape[0])
            np.add.at(out, rows, vals)
            return out
        cols = np.concatenate(self._cols) if self._cols else np.empty(0, int)
        return scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=self.shape).tocsr()


def assemble(evaluator, mesh, dofmaps, coefficients=()):
    """Global matrix (arity 2) or vector (arity 1) over all cells.

    ``evaluator`` is a CompiledForm (tensor contraction path) or a Form
    (quadrature oracle path); ``coefficients`` pairs each slot's global
    coefficient vector with its dof map: [(vector, dofmap), ...].
    """
    compiled = isinstance(evaluator, CompiledForm)
    form = evaluator.form if compiled else evaluator
    if not isinstance(form, Form):
        raise TypeError("evaluator must be a CompiledForm or a Form")
    if form.cell.shape != mesh.cell_shape:
        raise DimensionMismatch("form cell %r does not match mesh %r"
                                % (form.cell.shape, mesh.cell_shape))
    if len(dofmaps) != form.arity:
        raise DimensionMismatch("form needs %d dof maps, got %d"
                                % (form.arity, len(dofmaps)))
    if len(coefficients) != len(form.coefficients):
        raise DimensionMismatch("form needs %d coefficients, got %d"
                                % (len(form.coefficients), len(coefficients)))

    locals_ = []
    for num, (vec, dmap) in enumerate(coefficients):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (dmap.global_dim,):
            raise DimensionMismatch(
                "coefficient %d vector has length %d, dof map has %d"
                % (num, vec.size, dmap.global_dim))
        locals_.append(vec[dmap.cell_dofs])

    shape = tuple(dm.global_dim for dm in dofmaps)
    builder = SparseBuilder(shape)
    ncells = mesh.num_cells

    if compiled:
        dets, gs, _, _ = affine_maps(mesh)
        blocks = evaluator.element_tensors(dets, gs, locals_)
    else:
        blocks = None

    for c in range(ncells):
        if compiled:
            block = blocks[c]
        else:
            block = quadrature_element_tensor(
                form, affine_map(mesh, c), [w[c] for w in locals_])
        if len(dofmaps) == 1:
            builder.add(dofmaps[0].cell_dofs[c], block)
        else:
            di = dofmaps[0].cell_dofs[c]
            dj = dofmaps[1].cell_dofs[c]
            rows = np.repeat(di, len(dj))
            cols = np.tile(dj, len(di))
            builder.add(rows, block, cols)
    return builder.finalize()


# --- solver and boundary conditions ------------------------------------------------


def cg_solve(matrix, rhs, tol=1e-10, max_iter=None, check_symmetric=True,
             return_iterations=False):
    """Plain conjugate gradients with a symmetry spot check.

    Raises NotSymmetric when one of 10 random entry pairs disagrees, and
    MaxIterations when the relative residual fails to reach ``tol``.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = max(100, 10 * n)
    A = matrix

    if check_symmetric and n > 1:
        rng = np.random.default_rng(0)
        for _ in range(10):
            i, j = rng.integers(0, n, size=2)
            aij, aji = A[int(i), int(j)], A[int(j), int(i)]
            if abs(aij - aji) > 1e-10 * (1.0 + abs(aij)):
                raise NotSymmetric(
                    "entry (%d,%d)=%r differs from (%d,%d)=%r"
                    % (i, j, aij, j, i, aji))

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, 0) if return_iterations else x

    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for k in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rr / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_next = float(r @ r)
        if math.sqrt(rr_next) <= tol * bnorm:
            return (x, k) if return_iterations else x
        p = r + (rr_next / rr) * p
        rr = rr_next
    raise MaxIterations("no convergence within %d iterations "
                        "(relative residual %.3e)"
                        % (max_iter, math.sqrt(rr) / bnorm))


def apply_dirichlet(matrix, rhs, dofs, values):
    """Symmetric elimination of prescribed dofs.

    Returns (reduced matrix, reduced rhs, free dof ids); the eliminated
    columns move to the right-hand side so symmetry is preserved.
    """
    n = rhs.size
    dofs = np.asarray(dofs, dtype=int)
    values = np.asarray(values, dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[dofs] = False
    free = np.nonzero(mask)[0]
    A = matrix.tocsr() if scipy.sparse.issparse(matrix) else np.asarray(matrix)
    Afb = A[free][:, dofs]
    reduced_rhs = rhs[free] - Afb @ values
    return A[free][:, free], reduced_rhs, free


def lift_solution(n, free, x_free, dofs, values):
    """Full-length vector from a reduced solve plus prescribed values."""
    out = np.zeros(n)
    out[free] = x_free
    out[np.asarray(dofs, dtype=int)] = values
    return out


def write_matrix_market(path, matrix):
    """MatrixMarket export: coordinate, 1-based, general symmetry field.

    One-dimensional arrays (assembled vectors) are written as a single
    column.
    """
    if scipy.sparse.issparse(matrix):
        scipy.io.mmwrite(path, matrix.tocoo(), symmetry="general")
    else:
        matrix = np.asarray(matrix)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        scipy.io.mmwrite(path, matrix)


def l2_error(mesh, dofmap, vec, exact, quadrature_degree=6):
    """L2 distance between a scalar FE function and a callable."""
    element = dofmap.element
    if element.value_rank != 0:
        raise DimensionMismatch("l2_error supports scalar elements only")
    rule = make_quadrature(mesh.cell_shape, quadrature_degree)
    tab = element.tabulate(rule.points)
    total = 0.0
    vec = np.asarray(vec, dtype=float)
    for c in range(mesh.num_cells):
        amap = affine_map(mesh, c)
        uh = vec[dofmap.cell_dofs[c]] @ tab.values
        ux = exact(amap.map_points(rule.points))
        total += abs(amap.det) * float(rule.weights @ (uh - ux) ** 2)
    return math.sqrt(total)
