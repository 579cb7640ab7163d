"""Finite isometry groups acting on 2-D grids and on point data.

Grid actions are exact index permutations (flips and quarter-turn rotations),
so applying them to an array re-orders entries without any floating-point
work.  Point actions are orthogonal 2x2 matrices.

Rotation convention: ``r1`` rotates a grid counter-clockwise when the grid is
displayed with the origin at the lower-left corner (Cartesian display).  In
array-index space this maps ``[[1, 2], [3, 4]]`` to ``[[3, 1], [4, 2]]``.
The 2x2 point rotation ``r1`` is the matrix ``[[0, -1], [1, 0]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams, NonSquareGrid, ShapeMismatch

_MATRIX_MATCH_ATOL = 1e-9


@dataclass(frozen=True)
class GroupElement:
    """One isometry: either a flat index permutation of a grid or a matrix.

    Parameters
    ----------
    gid : int
        Position of the element in its group's element list.
    name : str
        Human-readable label such as ``"e"``, ``"r1"`` or ``"fr2"``.
    perm : ndarray or None
        For grid actions, ``out.flat[i] = x.flat[perm[i]]``.
    grid_shape : tuple or None
        The (H, W) grid the permutation acts on.
    matrix : ndarray or None
        For point actions, the orthogonal matrix applied as ``A @ x``.
    """

    gid: int
    name: str
    perm: np.ndarray | None = None
    grid_shape: tuple[int, int] | None = None
    matrix: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return "grid" if self.perm is not None else "matrix"

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply the isometry to an array.

        Grid elements accept arrays whose trailing axes are (H, W) or
        (H, W, C); leading batch axes are carried through.  Matrix elements
        accept arrays whose last axis matches the matrix dimension.
        """
        x = np.asarray(x)
        if self.perm is not None:
            h, w = self.grid_shape
            if x.ndim >= 2 and x.shape[-2:] == (h, w):
                lead = x.shape[:-2]
                out = x.reshape(*lead, h * w)[..., self.perm]
                return out.reshape(*lead, h, w)
            if x.ndim >= 3 and x.shape[-3:-1] == (h, w):
                lead, c = x.shape[:-3], x.shape[-1]
                out = x.reshape(*lead, h * w, c)[..., self.perm, :]
                return out.reshape(*lead, h, w, c)
            raise ShapeMismatch(
                f"array of shape {x.shape} does not end in grid shape {(h, w)}"
            )
        d = self.matrix.shape[0]
        if x.ndim == 0 or x.shape[-1] != d:
            raise ShapeMismatch(
                f"array of shape {x.shape} does not end in dimension {d}"
            )
        return x @ self.matrix.T


def apply(element: GroupElement, x: np.ndarray) -> np.ndarray:
    """Apply a group element to an array (see GroupElement.apply)."""
    return element.apply(x)


@dataclass(frozen=True)
class IsometryGroup:
    """A finite group of isometries with precomputed composition tables.

    Parameters
    ----------
    name : str
        Label such as ``"C4-grid-8x8"``.
    elements : tuple of GroupElement
        Elements in fixed order; element 0 is the identity.
    compose_table : ndarray
        ``compose_table[i, j]`` is the id of ``elements[i] o elements[j]``,
        where ``(a o b)(x) = a(b(x))``.
    inverse_table : ndarray
        ``inverse_table[i]`` is the id of the inverse of ``elements[i]``.
    """

    name: str
    elements: tuple[GroupElement, ...]
    compose_table: np.ndarray
    inverse_table: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def identity(self) -> GroupElement:
        return self.elements[0]

    def compose(self, a: GroupElement, b: GroupElement) -> GroupElement:
        """Return the element acting as ``x -> a(b(x))``."""
        return self.elements[int(self.compose_table[a.gid, b.gid])]

    def inverse(self, a: GroupElement) -> GroupElement:
        return self.elements[int(self.inverse_table[a.gid])]

    def element_by_name(self, name: str) -> GroupElement:
        for el in self.elements:
            if el.name == name:
                return el
        raise KeyError(name)

    def random_element(self, rng: np.random.Generator) -> GroupElement:
        return self.elements[int(rng.integers(len(self.elements)))]


@dataclass(frozen=True)
class PairedGroup:
    """Pairs (k1, k2) acting on (state, conditioning) for conditional fields."""

    name: str
    pairs: tuple[tuple[GroupElement, GroupElement], ...]
    state_group: IsometryGroup
    cond_group: IsometryGroup

    def __len__(self) -> int:
        return len(self.pairs)


def diagonal_pair_group(group: IsometryGroup) -> PairedGroup:
    """Pair each element with itself: the action (k x, k y)."""
    pairs = tuple((el, el) for el in group.elements)
    return PairedGroup(
        name=f"diag({group.name})",
        pairs=pairs,
        state_group=group,
        cond_group=group,
    )


def _compose_perms(p_outer: np.ndarray, p_inner: np.ndarray) -> np.ndarray:
    # out.flat[i] = y.flat[p_outer[i]] with y.flat[j] = x.flat[p_inner[j]]
    return p_inner[p_outer]


def _identify(elements: list[GroupElement], perm=None, matrix=None) -> int:
    for el in elements:
        if perm is not None and np.array_equal(el.perm, perm):
            return el.gid
        if matrix is not None and np.allclose(
            el.matrix, matrix, atol=_MATRIX_MATCH_ATOL
        ):
            return el.gid
    raise InvalidParams("composition left the element set; group is not closed")


def _build_group(name: str, elements: list[GroupElement]) -> IsometryGroup:
    n = len(elements)
    table = np.zeros((n, n), dtype=np.int64)
    for a in elements:
        for b in elements:
            if a.kind == "grid":
                prod = _compose_perms(a.perm, b.perm)
                table[a.gid, b.gid] = _identify(elements, perm=prod)
            else:
                prod = a.matrix @ b.matrix
                table[a.gid, b.gid] = _identify(elements, matrix=prod)
    inv = np.zeros(n, dtype=np.int64)
    for a in elements:
        hits = np.nonzero(table[a.gid] == 0)[0]
        if len(hits) != 1:
            raise InvalidParams(f"element {a.name} has no unique inverse")
        inv[a.gid] = hits[0]
    return IsometryGroup(name, tuple(elements), table, inv)


def _grid_perm(shape: tuple[int, int], op) -> np.ndarray:
    idx = np.arange(shape[0] * shape[1]).reshape(shape)
    return np.ascontiguousarray(op(idx)).ravel()


def _grid_element(gid: int, name: str, shape: tuple[int, int], op) -> GroupElement:
    return GroupElement(gid=gid, name=name, perm=_grid_perm(shape, op), grid_shape=shape)


def make_flip_group(axis: str, shape: tuple[int, int]) -> IsometryGroup:
    """Order-2 group {identity, flip} on an H x W grid.

    Parameters
    ----------
    axis : {"vertical", "horizontal"}
        ``"vertical"`` reverses the row order (top and bottom swap, so the
        grid moves vertically); ``"horizontal"`` reverses the column order.
    shape : (int, int)
        Grid height and width.
    """
    if axis not in ("vertical", "horizontal"):
        raise InvalidParams(f"axis must be 'vertical' or 'horizontal', got {axis!r}")
    _validate_shape(shape)
    op = np.flipud if axis == "vertical" else np.fliplr
    els = [
        _grid_element(0, "e", shape, lambda a: a),
        _grid_element(1, "f", shape, op),
    ]
    return _build_group(f"flip-{axis[0]}-grid-{shape[0]}x{shape[1]}", els)


def make_c4_group(shape: tuple[int, int]) -> IsometryGroup:
    """Quarter-turn rotation group {e, r1, r2, r3} on a square grid.

    ``r1`` is the counter-clockwise quarter turn in Cartesian display (see
    module docstring); ``rk`` applies it k times.
    """
    _validate_shape(shape)
    if shape[0] != shape[1]:
        raise NonSquareGrid(f"rotations need a square grid, got {shape}")
    els = [
        _grid_element(k, f"r{k}" if k else "e", shape, lambda a, k=k: np.rot90(a, -k))
        for k in range(4)
    ]
    return _build_group(f"C4-grid-{shape[0]}x{shape[1]}", els)


def make_d4_group(shape: tuple[int, int]) -> IsometryGroup:
    """Dihedral group of the square: four rotations and four reflections.

    The reflection generator ``f`` reverses the column order; ``frk`` acts as
    ``rk`` followed by ``f``.
    """
    _validate_shape(shape)
    if shape[0] != shape[1]:
        raise NonSquareGrid(f"rotations need a square grid, got {shape}")
    els = [
        _grid_element(k, f"r{k}" if k else "e", shape, lambda a, k=k: np.rot90(a, -k))
        for k in range(4)
    ]
    els += [
        _grid_element(
            4 + k, f"fr{k}" if k else "f", shape,
            lambda a, k=k: np.fliplr(np.rot90(a, -k)),
        )
        for k in range(4)
    ]
    return _build_group(f"D4-grid-{shape[0]}x{shape[1]}", els)


def _snap_integers(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    r = np.round(m)
    return np.where(np.abs(m - r) < tol, r, m)


def make_point_group_2d(n_rotations: int, with_reflection: bool = False) -> IsometryGroup:
    """Cyclic or dihedral point group acting on R^2 by orthogonal matrices.

    Parameters
    ----------
    n_rotations : int
        Number of rotations; ``rk`` rotates counter-clockwise by 2 pi k / n.
    with_reflection : bool
        If True, add the n reflections ``s o rk`` where ``s`` negates the
        second coordinate, giving the dihedral group of order 2n.

    Matrix entries within 1e-12 of an integer are snapped to that integer,
    so quarter-turn groups act by exact signed permutations.
    """
    if n_rotations < 1:
        raise InvalidParams(f"n_rotations must be >= 1, got {n_rotations}")
    els = []
    for k in range(n_rotations):
        th = 2.0 * np.pi * k / n_rotations
        m = _snap_integers(np.array([[np.cos(th), -np.sin(th)],
                                     [np.sin(th), np.cos(th)]]))
        els.append(GroupElement(gid=k, name=f"r{k}" if k else "e", matrix=m))
    if with_reflection:
        s = np.array([[1.0, 0.0], [0.0, -1.0]])
        for k in range(n_rotations):
            m = _snap_integers(s @ els[k].matrix)
            els.append(GroupElement(gid=n_rotations + k,
                                    name=f"sr{k}" if k else "s", matrix=m))
    label = f"D{n_rotations}-point" if with_reflection else f"C{n_rotations}-point"
    return _build_group(label, els)


def _validate_shape(shape) -> None:
    if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
        raise InvalidParams(f"grid shape must be two positive ints, got {shape}")


@dataclass
class GroupCheckReport:
    """Outcome of verify_group_axioms; all booleans must be True."""

    closure: bool
    identity: bool
    inverses: bool
    associativity: bool
    orthogonality: bool
    max_orthogonality_error: float
    max_closure_error: float
    messages: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.closure and self.identity and self.inverses
                and self.associativity and self.orthogonality)


def verify_group_axioms(group: IsometryGroup, atol: float = 1e-12) -> GroupCheckReport:
    """Check closure, identity, inverses, associativity and orthogonality.

    Closure recomputes every pairwise product from the element actions and
    compares it against the stored composition table, so a corrupted table
    is caught here.  Associativity is checked exhaustively on the table.
    Matrix actions must satisfy ``A.T A = I`` within ``atol``; grid actions
    are permutations, which are isometries exactly.
    """
    n = len(group)
    msgs: list[str] = []
    closure_ok, max_closure_err = True, 0.0
    for a in group.elements:
        for b in group.elements:
            claimed = group.elements[int(group.compose_table[a.gid, b.gid])]
            if a.kind == "grid":
                prod = _compose_perms(a.perm, b.perm)
                err = 0.0 if np.array_equal(prod, claimed.perm) else 1.0
            else:
                err = float(np.max(np.abs(a.matrix @ b.matrix - claimed.matrix)))
            max_closure_err = max(max_closure_err, err)
            if err > atol:
                closure_ok = False
                msgs.append(f"closure: {a.name} o {b.name} != {claimed.name}")

    ident_ok = True
    for a in group.elements:
        if (group.compose_table[0, a.gid] != a.gid
                or group.compose_table[a.gid, 0] != a.gid):
            ident_ok = False
            msgs.append(f"identity fails against {a.name}")

    inv_ok = True
    for a in group.elements:
        i = int(group.inverse_table[a.gid])
        if (group.compose_table[a.gid, i] != 0
                or group.compose_table[i, a.gid] != 0):
            inv_ok = False
            msgs.append(f"inverse fails for {a.name}")

    assoc_ok = True
    t = group.compose_table
    for a in range(n):
        for b in range(n):
            if not np.array_equal(t[t[a, b]], t[a][t[b]]):
                assoc_ok = False
                msgs.append(f"associativity fails at ({a}, {b})")

    ortho_ok, max_ortho_err = True, 0.0
    for a in group.elements:
        if a.kind == "matrix":
            d = a.matrix.shape[0]
            err = float(np.max(np.abs(a.matrix.T @ a.matrix - np.eye(d))))
            max_ortho_err = max(max_ortho_err, err)
            if err > atol:
                ortho_ok = False
                msgs.append(f"orthogonality fails for {a.name}")

    return GroupCheckReport(
        closure=closure_ok,
        identity=ident_ok,
        inverses=inv_ok,
        associativity=assoc_ok,
        orthogonality=ortho_ok,
        max_orthogonality_error=max_ortho_err,
        max_closure_error=max_closure_err,
        messages=msgs,
    )


class FrameAveragedField:
    """Group average of a vector field: s~(x) = mean_k k^-1 s(k x).

    For conditional fields a PairedGroup supplies the action on the
    conditioning argument: s~(x, y) = mean_(k1,k2) k1^-1 s(k1 x, k2 y).
    The average runs in ascending element-id order and uses numpy's pairwise
    summation, so results are deterministic across runs.
    """

    def __init__(self, base, group: IsometryGroup, paired: PairedGroup | None = None):
        self.base = base
        self.group = group
        self.paired = paired

    def __call__(self, x, *args):
        if self.paired is None:
            terms = [
                self.group.inverse(k).apply(self.base(k.apply(x), *args))
                for k in self.group.elements
            ]
        else:
            g = self.paired.state_group
            y, rest = args[0], args[1:]
            terms = [
                g.inverse(k1).apply(self.base(k1.apply(x), k2.apply(y), *rest))
                for k1, k2 in self.paired.pairs
            ]
        return np.sum(np.stack(terms, axis=0), axis=0) / len(terms)


def frame_average(score, group: IsometryGroup,
                  paired: PairedGroup | None = None) -> FrameAveragedField:
    """Wrap a score field so its output is exactly group-equivariant."""
    if paired is not None and paired.state_group is not group:
        raise InvalidParams("paired group must share the state group")
    return FrameAveragedField(score, group, paired)
