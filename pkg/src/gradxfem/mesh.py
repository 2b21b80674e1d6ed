"""Structured quadrilateral meshes, including crack-tip focused (box-in-box) grading.

A focused mesh is a uniform core of ``core x core`` elements (``core x core/2``
for a half model) surrounded by concentric rectangular rings whose size grows
geometrically, followed by a few transition rings that morph onto the outer
boundary (a circle, or a box spanning the rectangle's full width). Tall
rectangles are completed with graded row blocks above and below that box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .shapes import gauss_legendre_2d, physical_gradients


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    order: int
    node_sets: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def corners(self) -> np.ndarray:
        """(n_el, 4, 2) corner coordinates."""
        return self.nodes[self.elements[:, :4]]

    @property
    def areas(self) -> np.ndarray:
        c = self.corners
        x, y = c[..., 0], c[..., 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    @property
    def element_size(self) -> np.ndarray:
        """Characteristic element length sqrt(area)."""
        return np.sqrt(self.areas)

    def node_set(self, name: str) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise KeyError(f"mesh has no node set {name!r}; available: {sorted(self.node_sets)}") from None

    def min_jacobian(self) -> float:
        pts, _ = gauss_legendre_2d(3)
        _, _, detJ = physical_gradients(
            self.order, self.nodes[self.elements], pts[:, 0][None, :], pts[:, 1][None, :]
        )
        return float(detJ.min())

    def find_element(self, point, tol: float = 1e-12) -> int:
        """Index of an element containing ``point`` (first match); -1 if none."""
        from .shapes import inverse_map

        p = np.asarray(point, dtype=float)
        c = self.corners
        lo, hi = c.min(axis=1), c.max(axis=1)
        span = (hi - lo).max(axis=1)
        cand = np.flatnonzero(np.all((p >= lo - tol * span[:, None]) & (p <= hi + tol * span[:, None]), axis=1))
        for e in cand:
            nat = inverse_map(c[e], p[None, :])[0]
            if np.all(np.abs(nat) <= 1.0 + 1e-9):
                return int(e)
        return -1

    def element_adjacency(self):
        """Pairs of elements sharing an edge."""
        edges = {}
        pairs = []
        for e, conn in enumerate(self.elements[:, :4]):
            for k in range(4):
                key = tuple(sorted((conn[k], conn[(k + 1) % 4])))
                other = edges.setdefault(key, e)
                if other != e:
                    pairs.append((other, e))
        return np.array(pairs, dtype=int).reshape(-1, 2)

    def max_adjacent_size_ratio(self) -> float:
        pairs = self.element_adjacency()
        if len(pairs) == 0:
            return 1.0
        s = self.element_size
        r = s[pairs[:, 0]] / s[pairs[:, 1]]
        return float(np.max(np.maximum(r, 1.0 / r)))


@dataclass(frozen=True)
class GradingSpec:
    """Focused refinement around ``focus``.

    tip_size: edge length of the uniform core elements (mm).
    core: elements per core side; odd puts the focus at an element centre,
    even puts it on a node. Half models need an even value.
    ratio_bound: largest allowed size ratio between neighbouring elements.
    half: model only y >= focus_y (symmetry plane through the focus).
    outer: "rect" or "circle".
    """

    focus: tuple
    tip_size: float
    core: int = 12
    ratio_bound: float = 1.5
    half: bool = False
    outer: str = "rect"
    fill: float = 0.6

    def __post_init__(self):
        if self.tip_size <= 0:
            raise ValueError("tip_size must be positive")
        if self.ratio_bound <= 1.0:
            raise ValueError("ratio_bound must exceed 1")


def generate_structured_mesh(width, height, density=(1, 1), order=1, grading: GradingSpec | None = None, origin=(0.0, 0.0)) -> Mesh:
    """Rectangle [x0, x0+width] x [y0, y0+height].

    Without ``grading`` ``density`` is (nx, ny) uniform elements. With a
    :class:`GradingSpec` the mesh is focused on ``grading.focus``; for a half
    model the focus must lie on the bottom edge.
    """
    if width <= 0 or height <= 0:
        raise ValueError("mesh dimensions must be positive")
    if order not in (1, 2):
        raise ValueError("element order must be 1 or 2")
    x0, y0 = map(float, origin)
    if grading is None:
        nx, ny = (density, density) if np.isscalar(density) else density
        if nx < 1 or ny < 1:
            raise ValueError("need at least one element per direction")
        mesh = _uniform(x0, y0, width, height, int(nx), int(ny))
    else:
        mesh = _focused(grading, (x0, y0, x0 + width, y0 + height), circle_radius=None)
        _check_ratio(mesh, grading)
    mesh = _with_order(mesh, order)
    return _tag_rect_sets(mesh, (x0, y0, x0 + width, y0 + height), grading)


def generate_disc_mesh(radius, grading: GradingSpec, order=1) -> Mesh:
    """Disc (or upper half-disc when ``grading.half``) of given radius centred on the focus."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    mesh = _focused(grading, None, circle_radius=float(radius))
    _check_ratio(mesh, grading)
    mesh = _with_order(mesh, order)
    fx, fy = grading.focus
    tol = 1e-9 * radius
    r = np.hypot(mesh.nodes[:, 0] - fx, mesh.nodes[:, 1] - fy)
    sets = {"remote": np.flatnonzero(np.abs(r - radius) < tol)}
    if grading.half:
        base = np.abs(mesh.nodes[:, 1] - fy) < tol
        sets["ligament"] = np.flatnonzero(base & (mesh.nodes[:, 0] >= fx - tol))
        sets["crack_face"] = np.flatnonzero(base & (mesh.nodes[:, 0] < fx - tol))
        sets["tip"] = np.flatnonzero(base & (np.abs(mesh.nodes[:, 0] - fx) < tol))
    return Mesh(mesh.nodes, mesh.elements, mesh.order, sets)


def _check_ratio(mesh: Mesh, g: GradingSpec) -> None:
    ratio = mesh.max_adjacent_size_ratio()
    if ratio > g.ratio_bound * (1 + 1e-9):
        raise ValueError(f"graded mesh has neighbour size ratio {ratio:.3f} above the bound {g.ratio_bound}")


def _uniform(x0, y0, w, h, nx, ny) -> Mesh:
    xs = np.linspace(x0, x0 + w, nx + 1)
    ys = np.linspace(y0, y0 + h, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh(nodes, elements, 1, {})


def _grid_block(xs, ys, offset=0):
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(nodes.shape[0]).reshape(ny + 1, nx + 1) + offset
    el = np.column_stack(
        [idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel(), idx[1:, :-1].ravel()]
    )
    return nodes, idx, el


def _perimeter(idx, half):
    """Core boundary node ids, counterclockwise.

    Full: closed loop from the bottom-left corner (last node not repeated).
    Half: open U from the bottom-left corner up, across and down.
    """
    if half:
        left = idx[:, 0]
        top = idx[-1, 1:]
        right = idx[-2::-1, -1]
        return np.concatenate([left, top, right])
    bottom = idx[0, :]
    right = idx[1:, -1]
    top = idx[-1, -2::-1]
    left = idx[-2:0:-1, 0]
    return np.concatenate([bottom, right, top, left])


def _side_params(c, half):
    """Side id and fractional position along the side for each perimeter node."""
    if half:
        hc = c // 2
        side = np.concatenate([np.zeros(hc + 1), np.ones(c), np.full(hc, 2)]).astype(int)
        t = np.concatenate([np.arange(hc + 1) / hc, np.arange(1, c + 1) / c, np.arange(1, hc + 1) / hc])
        return side, t
    side = np.concatenate([np.zeros(c + 1), np.ones(c), np.full(c, 2), np.full(c - 1, 3)]).astype(int)
    t = np.concatenate([np.arange(c + 1) / c, np.arange(1, c + 1) / c, np.arange(1, c + 1) / c, np.arange(1, c) / c])
    return side, t


def _outer_points(side, t, box, half, focus):
    x0, y0, x1, y1 = box
    fy = focus[1]
    if half:
        corners = [((x0, fy), (x0, y1)), ((x0, y1), (x1, y1)), ((x1, y1), (x1, fy))]
    else:
        corners = [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))]
    out = np.empty((len(side), 2))
    for s, (a, b) in enumerate(corners):
        m = side == s
        a, b = np.array(a), np.array(b)
        out[m] = a + t[m, None] * (b - a)
    return out


def _focused(g: GradingSpec, box, circle_radius, square=None) -> Mesh:
    if circle_radius is None and square is None:
        # rings end on a box spanning the width; if the focus is too far off
        # centre for that, on a square box with graded columns at the sides
        try:
            mesh = _focused(g, box, None, square=False)
            if mesh.max_adjacent_size_ratio() <= g.ratio_bound:
                return mesh
        except ValueError:
            pass
        return _focused(g, box, None, square=True)
    c = int(g.core)
    if g.half and c % 2:
        raise ValueError("half models need an even core element count")
    if c < 3:
        raise ValueError("core must have at least 3 elements per side")
    q = 1.0 / (1.0 - 2.0 / c)
    if q > g.ratio_bound:
        raise ValueError(
            f"core={c} gives ring growth ratio {q:.3f} above the bound {g.ratio_bound}; use core >= "
            f"{int(np.ceil(2.0 / (1.0 - 1.0 / g.ratio_bound)))}"
        )
    fx, fy = map(float, g.focus)
    h = float(g.tip_size)
    a0 = 0.5 * c * h
    xs = fx + h * (np.arange(c + 1) - 0.5 * c)
    ys = fy + h * np.arange(c // 2 + 1) if g.half else fy + h * (np.arange(c + 1) - 0.5 * c)
    core_nodes, idx, core_el = _grid_block(xs, ys)
    per = _perimeter(idx, g.half)
    P0 = core_nodes[per]
    centre = np.array([fx, fy])

    if circle_radius is None:
        x0, y0, x1, y1 = box
        if not (x0 < fx < x1 and y0 <= fy < y1):
            raise ValueError("focus must lie inside the domain")
        if g.half and abs(fy - y0) > 1e-12 * (y1 - y0):
            raise ValueError("half model needs the focus on the bottom edge")
        attempts = [min(fx - x0, x1 - fx) if square else max(fx - x0, x1 - fx)]
    else:
        attempts = [None]
    side, t = _side_params(c, g.half)
    rings, inner_box = None, None
    for reach in attempts:
        if reach is None:
            d_min = circle_radius
        else:
            inner_box = (
                max(x0, fx - reach),
                y0 if g.half else max(y0, fy - reach),
                min(x1, fx + reach),
                min(y1, fy + reach),
            )
            ds = [fx - inner_box[0], inner_box[2] - fx, inner_box[3] - fy] + ([] if g.half else [fy - inner_box[1]])
            d_min = min(ds)
        rings = _ring_sequence(g, P0, centre, a0, q, h, d_min, side, t, inner_box, circle_radius)
        if rings is not None:
            break
    if rings is None:
        raise ValueError("cannot grade towards the outer boundary within the size-ratio bound")

    nodes = [core_nodes]
    elements = [core_el]
    n_per = len(per)
    inner = per
    offset = core_nodes.shape[0]
    closed = not g.half
    for ring in rings:
        ids = offset + np.arange(n_per)
        nodes.append(ring)
        j = np.arange(n_per if closed else n_per - 1)
        jn = (j + 1) % n_per
        elements.append(np.column_stack([inner[j], ids[j], ids[jn], inner[jn]]))
        inner = ids
        offset += n_per
    if inner_box is not None:
        span = max(x1 - x0, y1 - y0)
        # boundary of the meshed region so far: node ids and coordinates
        front_ids, front_xy = inner.copy(), rings[-1].copy()
        for axis, v_in, v_out in ((0, inner_box[2], x1), (0, inner_box[0], x0), (1, inner_box[3], y1), (1, inner_box[1], y0)):
            if abs(v_out - v_in) <= 1e-12 * span:
                continue
            on = np.flatnonzero(np.abs(front_xy[:, axis] - v_in) < 1e-9 * span)
            on = on[np.argsort(front_xy[on, 1 - axis])]
            start = front_xy[on]
            outer = start.copy()
            outer[:, axis] = v_out
            gap = np.full(len(on), abs(v_out - v_in))
            step = _normal_extent(np.vstack(nodes), np.vstack(elements), front_ids[on])
            layers = _transition(start, outer, gap, step, g.ratio_bound)
            if layers is None:
                raise ValueError("cannot grade towards the outer boundary within the size-ratio bound")
            prev = front_ids[on]
            for layer in layers:
                ids = offset + np.arange(len(on))
                nodes.append(layer)
                elements.append(np.column_stack([prev[:-1], prev[1:], ids[1:], ids[:-1]]))
                prev = ids
                offset += len(on)
            # the extruded block's nodes join the front (its side rows feed the next blocks)
            block_ids = offset - len(on) * len(layers) + np.arange(len(on) * len(layers))
            front_ids = np.concatenate([front_ids, block_ids])
            front_xy = np.vstack([front_xy] + layers)
    mesh = Mesh(np.vstack(nodes), np.vstack(elements), 1, {})
    return _orient(mesh)


def _normal_extent(nodes, elements, chain):
    """Per chain node, the mean extent (area / edge length) of the elements behind the chain's edges."""
    owner = {}
    for e, el in enumerate(elements):
        for k in range(4):
            owner[frozenset((el[k], el[(k + 1) % 4]))] = e
    seg = []
    for a, b in zip(chain[:-1], chain[1:]):
        c = nodes[elements[owner[frozenset((a, b))]]]
        x, y = c[:, 0], c[:, 1]
        area = 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
        seg.append(area / np.linalg.norm(nodes[b] - nodes[a]))
    seg = np.array(seg)
    ext = np.empty(len(chain))
    ext[0], ext[-1] = seg[0], seg[-1]
    ext[1:-1] = 0.5 * (seg[:-1] + seg[1:])
    return ext


def _ring_sequence(g, P0, centre, a0, q, h, d_min, side, t, inner_box, circle_radius):
    """Geometric rings from the core plus transition rings onto the outer contour, or None."""
    for fill in (g.fill, 0.5, 0.4, 0.3, 0.2):
        K = max(0, int(np.floor(np.log(fill * d_min / a0) / np.log(q))))
        rings = [centre + q**k * (P0 - centre) for k in range(1, K + 1)]
        last = rings[-1] if rings else P0
        prev = rings[-2] if len(rings) > 1 else P0 if rings else None
        if circle_radius is not None:
            rel = last - centre
            outer = centre + circle_radius * rel / np.linalg.norm(rel, axis=1)[:, None]
        else:
            outer = _outer_points(side, t, inner_box, g.half, g.focus)
        gap = np.linalg.norm(outer - last, axis=1)
        step_last = np.linalg.norm(last - prev, axis=1) if prev is not None else np.full(len(last), h)
        trans = _transition(last, outer, gap, step_last, g.ratio_bound)
        if trans is not None:
            return rings + trans
    return None


def _transition(start, outer, gap, step_last, bound):
    """Per-node geometric progressions from ``start`` to ``outer`` with a common ring count.

    Node i continues its radial spacing ``step_last[i]`` with a ratio rho_i so
    that sum_{k=1..M} step_last rho^k = gap; M is the smallest count keeping
    every rho_i within [1/bound, bound].
    """
    if np.any(gap <= 0):
        return None
    target = gap / step_last
    for M in range(1, 400):
        k = np.arange(1, M + 1)
        lo_sum = np.sum((1.0 / bound) ** k)
        hi_sum = np.sum(bound**k)
        if np.any(target > hi_sum):
            continue
        if np.any(target < lo_sum):
            return None
        lo = np.full_like(target, 1.0 / bound)
        hi = np.full_like(target, bound)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            s = np.sum(mid[:, None] ** k, axis=1)
            lo = np.where(s < target, mid, lo)
            hi = np.where(s >= target, mid, hi)
        rho = 0.5 * (lo + hi)
        steps = step_last[:, None] * rho[:, None] ** k
        frac = np.cumsum(steps, axis=1) / gap[:, None]
        frac[:, -1] = 1.0
        return [start + frac[:, i][:, None] * (outer - start) for i in range(M)]
    return None


def _orient(mesh: Mesh) -> Mesh:
    el = mesh.elements.copy()
    neg = mesh.areas < 0
    el[neg] = el[neg][:, ::-1]
    return Mesh(mesh.nodes, el, mesh.order, mesh.node_sets)


def _with_order(mesh: Mesh, order: int) -> Mesh:
    if order == 1:
        return mesh
    el = mesh.elements
    edges = np.stack([el[:, [0, 1]], el[:, [1, 2]], el[:, [2, 3]], el[:, [3, 0]]], axis=1).reshape(-1, 2)
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    mid_ids = mesh.n_nodes + inv.reshape(-1, 4)
    return Mesh(np.vstack([mesh.nodes, mids]), np.hstack([el, mid_ids]), 2, mesh.node_sets)


def _tag_rect_sets(mesh: Mesh, box, grading) -> Mesh:
    x0, y0, x1, y1 = box
    tol = 1e-10 * max(x1 - x0, y1 - y0)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    sets = {
        "left": np.flatnonzero(np.abs(x - x0) < tol),
        "right": np.flatnonzero(np.abs(x - x1) < tol),
        "bottom": np.flatnonzero(np.abs(y - y0) < tol),
        "top": np.flatnonzero(np.abs(y - y1) < tol),
    }
    if grading is not None and grading.half:
        fx = grading.focus[0]
        base = sets["bottom"]
        sets["ligament"] = base[x[base] >= fx - tol]
        sets["crack_face"] = base[x[base] < fx - tol]
        sets["tip"] = base[np.abs(x[base] - fx) < tol]
    return Mesh(mesh.nodes, mesh.elements, mesh.order, sets)


def write_mesh(mesh: Mesh, path) -> None:
    """Native plain-text mesh format."""
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements} order {mesh.order}"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.nodes.tolist())]
    lines += [f"{i} " + " ".join(map(str, conn)) for i, conn in enumerate(mesh.elements.tolist())]
    for name, ids in mesh.node_sets.items():
        lines.append(f"set {name}: " + " ".join(map(str, np.asarray(ids).tolist())))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if head[0] != "nodes" or head[2] != "elements" or head[4] != "order":
        raise ValueError(f"bad mesh header: {text[0]!r}")
    n, m, order = int(head[1]), int(head[3]), int(head[5])
    nodes = np.array([[float(v) for v in line.split()[1:3]] for line in text[1 : 1 + n]])
    elements = np.array([[int(v) for v in line.split()[1:]] for line in text[1 + n : 1 + n + m]], dtype=int)
    sets = {}
    for line in text[1 + n + m :]:
        if not line.strip():
            continue
        name, _, ids = line.partition(":")
        if not name.startswith("set "):
            raise ValueError(f"unexpected line in mesh file: {line!r}")
        sets[name[4:].strip()] = np.array([int(v) for v in ids.split()], dtype=int)
    return Mesh(nodes, elements.reshape(m, -1), order, sets)
