"""Crack enrichment: node classification, Heaviside and tip functions,
blending, and element partitioning for quadrature.

The enriched displacement is

    u = sum N_I u_I + sum_{I in Nc} N_I (H - H_I) a_I
        + w * sum_{K in Nf} N_K sum_a (F_a - F_a(x_K)) b_Ka

with the shifted basis (enrichment vanishes at nodes) on by default and
w = sum_{K in Nf} N_K the linear blending ramp.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .crack import CrackGeometry, polar_at_tip, signed_distance, tangential_coordinate
from .mesh import Mesh
from .shapes import physical_gradients

R_MIN = 1e-9  # mm; tip functions are evaluated at r >= R_MIN
GRAZING_FRACTION = 1e-4


@dataclass(frozen=True)
class EnrichmentConfig:
    strategy: str = "topological"
    r_e: float = 5e-4
    lam: float = 2.0 / 3.0
    blending: str = "corrected"
    tri_order: int = 5
    tip_subdiv_levels: int = 2
    shifted: bool = True

    def __post_init__(self):
        if self.strategy not in ("none", "topological", "geometrical"):
            raise ValueError(f"unknown enrichment strategy {self.strategy!r}")
        if self.blending not in ("corrected", "uncorrected"):
            raise ValueError(f"unknown blending {self.blending!r}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if self.strategy == "geometrical" and not self.r_e > 0:
            raise ValueError("geometrical enrichment needs r_e > 0")
        if self.tri_order not in TRIANGLE_RULES:
            raise ValueError(f"unsupported triangle rule order {self.tri_order}")
        if self.tip_subdiv_levels < 0:
            raise ValueError("tip_subdiv_levels must be >= 0")


@dataclass(frozen=True)
class EnrichedDofMap:
    """Enriched node sets and global DOF numbering.

    Standard DOFs come first (2 per node), then 2 per Heaviside node, then
    8 per tip node (4 functions x 2 components).
    """

    n_nodes: int
    heaviside_nodes: np.ndarray
    tip_nodes: np.ndarray
    tip_element: int = -1
    node_sign: np.ndarray = field(default=None, repr=False)
    node_tip_values: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        h = np.unique(np.asarray(self.heaviside_nodes, dtype=int))
        t = np.unique(np.asarray(self.tip_nodes, dtype=int))
        if np.intersect1d(h, t).size:
            raise ValueError("a node cannot be both Heaviside- and tip-enriched")
        object.__setattr__(self, "heaviside_nodes", h)
        object.__setattr__(self, "tip_nodes", t)
        hidx = np.full(self.n_nodes, -1)
        hidx[h] = np.arange(len(h))
        tidx = np.full(self.n_nodes, -1)
        tidx[t] = np.arange(len(t))
        object.__setattr__(self, "_hidx", hidx)
        object.__setattr__(self, "_tidx", tidx)

    @classmethod
    def empty(cls, n_nodes: int) -> "EnrichedDofMap":
        return cls(n_nodes, np.zeros(0, int), np.zeros(0, int))

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes + 2 * len(self.heaviside_nodes) + 8 * len(self.tip_nodes)

    @property
    def tip_weight(self) -> np.ndarray:
        """Nodal coefficients of the blending ramp (1 on tip nodes)."""
        w = np.zeros(self.n_nodes)
        w[self.tip_nodes] = 1.0
        return w

    def heaviside_index(self, nodes) -> np.ndarray:
        return self._hidx[nodes]

    def tip_index(self, nodes) -> np.ndarray:
        return self._tidx[nodes]

    def heaviside_dofs(self, node: int) -> np.ndarray:
        k = self._hidx[node]
        if k < 0:
            raise KeyError(f"node {node} is not Heaviside-enriched")
        return 2 * self.n_nodes + 2 * k + np.arange(2)

    def tip_dofs(self, node: int) -> np.ndarray:
        """(4, 2) global DOFs: function index by displacement component."""
        k = self._tidx[node]
        if k < 0:
            raise KeyError(f"node {node} is not tip-enriched")
        base = 2 * self.n_nodes + 2 * len(self.heaviside_nodes) + 8 * k
        return base + np.arange(8).reshape(4, 2)


def heaviside(phi):
    """+1 above the crack (phi > 0), -1 below. phi = 0 maps to +1."""
    return np.where(np.asarray(phi) >= 0, 1.0, -1.0)


def tip_functions(r, theta, lam: float):
    """(..., 4) crack-tip functions r^lam {sin(t/2), cos(t/2), sin(t/2) sin t, cos(t/2) sin t}."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("tip functions need r > 0")
    t = np.asarray(theta, dtype=float)
    rl = r**lam
    s2, c2, st = np.sin(t / 2), np.cos(t / 2), np.sin(t)
    return np.stack([rl * s2, rl * c2, rl * s2 * st, rl * c2 * st], axis=-1)


def tip_function_gradients(r, theta, lam: float, tangent=(1.0, 0.0)):
    """(..., 4, 2) Cartesian gradients of :func:`tip_functions`.

    Derivatives are taken in the crack-tip frame and rotated to global axes
    using the tip ``tangent``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("tip functions need r > 0")
    t = np.asarray(theta, dtype=float)
    rl = r**lam
    s2, c2, st, ct = np.sin(t / 2), np.cos(t / 2), np.sin(t), np.cos(t)
    dr = (lam * r ** (lam - 1))[..., None] * np.stack([s2, c2, s2 * st, c2 * st], axis=-1)
    dt = rl[..., None] * np.stack(
        [0.5 * c2, -0.5 * s2, 0.5 * c2 * st + s2 * ct, -0.5 * s2 * st + c2 * ct], axis=-1
    )
    cos_t, sin_t = ct[..., None], st[..., None]
    inv_r = 1.0 / r[..., None]
    gx = cos_t * dr - sin_t * inv_r * dt
    gy = sin_t * dr + cos_t * inv_r * dt
    tx, ty = tangent
    # local (x', y') = (t, n) frame with n = (-ty, tx)
    return np.stack([gx * tx - gy * ty, gx * ty + gy * tx], axis=-1)


def _node_level_sets(mesh: Mesh, crack: CrackGeometry):
    return signed_distance(mesh.nodes, crack), tangential_coordinate(mesh.nodes, crack)


def _split_polygon(poly: np.ndarray, phi: np.ndarray):
    """Split a convex polygon along phi = 0 (phi linear along edges)."""
    pos, neg = [], []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        a, b, fa, fb = poly[i], poly[j], phi[i], phi[j]
        if fa >= 0:
            pos.append(a)
        if fa <= 0:
            neg.append(a)
        if fa * fb < 0:
            x = a + fa / (fa - fb) * (b - a)
            pos.append(x)
            neg.append(x)
    return [np.array(p) for p in (pos, neg) if len(p) >= 3]


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _element_is_cut(phi_c, psi_c, size) -> bool:
    return phi_c.min() < 0 < phi_c.max() and psi_c.max() <= 1e-12 * size


def classify_nodes(mesh: Mesh, crack: CrackGeometry, config: EnrichmentConfig) -> EnrichedDofMap:
    """Heaviside (Nc) and tip (Nf) node sets for ``config.strategy``.

    Nf is the tip element's nodes (topological) or those plus every node
    within ``r_e`` of the tip (geometrical). Nc holds nodes whose support is
    split by the crack behind the tip, minus Nf and grazing cuts.
    """
    if config.strategy == "none":
        return EnrichedDofMap.empty(mesh.n_nodes)
    tip_el = mesh.find_element(crack.tip)
    if tip_el < 0:
        raise ValueError("crack tip lies outside the mesh")
    tip_nodes = set(mesh.elements[tip_el].tolist())
    if config.strategy == "geometrical":
        d = np.hypot(*(mesh.nodes - crack.tip).T)
        tip_nodes |= set(np.flatnonzero(d <= config.r_e).tolist())
    tip_nodes = np.array(sorted(tip_nodes), dtype=int)

    phi_n, psi_n = _node_level_sets(mesh, crack)
    el = mesh.elements
    size = mesh.element_size
    # support-wise extrema of the level sets
    ph_min = np.full(mesh.n_nodes, np.inf)
    ph_max = np.full(mesh.n_nodes, -np.inf)
    ps_max = np.full(mesh.n_nodes, -np.inf)
    scale = np.zeros(mesh.n_nodes)
    for k in range(el.shape[1]):
        np.minimum.at(ph_min, el[:, k], phi_n[el].min(axis=1))
        np.maximum.at(ph_max, el[:, k], phi_n[el].max(axis=1))
        np.maximum.at(ps_max, el[:, k], psi_n[el].max(axis=1))
        np.maximum.at(scale, el[:, k], size)
    cand = np.flatnonzero((ph_min < 0) & (ph_max > 0) & (ps_max <= 1e-12 * scale))
    cand = np.setdiff1d(cand, tip_nodes)

    # drop grazing cuts: smaller side below GRAZING_FRACTION of the support area
    area_pos = np.zeros(mesh.n_nodes)
    area_tot = np.zeros(mesh.n_nodes)
    corners = mesh.corners
    touched = np.flatnonzero(np.isin(el, cand).any(axis=1))
    for e in touched:
        c = corners[e]
        ph = phi_n[el[e, :4]]
        a = abs(_polygon_area(c))
        if ph.min() >= 0:
            ap = a
        elif ph.max() <= 0:
            ap = 0.0
        else:
            ap = abs(_polygon_area(_split_polygon(c, ph)[0]))
        area_pos[el[e]] += ap
        area_tot[el[e]] += a
    frac = np.minimum(area_pos[cand], area_tot[cand] - area_pos[cand]) / area_tot[cand]
    heav = cand[frac >= GRAZING_FRACTION]
    if heav.size == 0:
        warnings.warn("crack does not cut any element support; no Heaviside enrichment", stacklevel=2)

    node_sign = heaviside(phi_n)
    r, th = polar_at_tip(mesh.nodes, crack)
    tip_vals = tip_functions(np.maximum(r, R_MIN), th, config.lam)
    return EnrichedDofMap(mesh.n_nodes, heav, tip_nodes, tip_el, node_sign, tip_vals)


def blending_weight(points, dofmap: EnrichedDofMap, mesh: Mesh) -> np.ndarray:
    """w(x) = sum of standard shape functions of tip-enriched nodes."""
    from .shapes import inverse_map, shape_functions

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    coef = dofmap.tip_weight
    out = np.zeros(len(pts))
    for i, p in enumerate(pts):
        e = mesh.find_element(p)
        if e < 0:
            raise ValueError(f"point {p} lies outside the mesh")
        nat = inverse_map(mesh.corners[e], p[None])[0]
        N = shape_functions(mesh.order, nat[0], nat[1])[0]
        out[i] = N @ coef[mesh.elements[e]]
    return out


# barycentric coordinates and weights (normalised to sum 1) of symmetric rules
_A4, _B4 = 0.445948490915965, 0.091576213509771
_A5, _B5 = (6 - np.sqrt(15)) / 21, (6 + np.sqrt(15)) / 21


def _orbit(a):
    return [[1 - 2 * a, a, a], [a, 1 - 2 * a, a], [a, a, 1 - 2 * a]]


TRIANGLE_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array(_orbit(1 / 6)), np.full(3, 1 / 3)),
    3: (np.array(_orbit(_A4) + _orbit(_B4)), np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)),
    4: (np.array(_orbit(_A4) + _orbit(_B4)), np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)),
    5: (
        np.array([[1 / 3, 1 / 3, 1 / 3]] + _orbit(_A5) + _orbit(_B5)),
        np.array([9 / 40] + [(155 - np.sqrt(15)) / 1200] * 3 + [(155 + np.sqrt(15)) / 1200] * 3),
    ),
}


def _tri_area(tri) -> float:
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def triangle_quadrature(tri, order: int = 5, levels: int = 0, ratio: float = 0.5):
    """Points (k, 2) and weights (k,) of a symmetric rule on a triangle.

    With ``levels > 0`` the triangle is split geometrically towards its
    first vertex: the sub-triangle at that vertex is scaled by ``ratio`` and
    split again, the remaining trapezoid gets two triangles.
    """
    if order not in TRIANGLE_RULES:
        raise ValueError(f"unsupported triangle rule order {order}")
    tri = np.asarray(tri, dtype=float)
    if levels <= 0:
        bary, w = TRIANGLE_RULES[order]
        return bary @ tri, w * _tri_area(tri)
    a, b, c = tri
    b2, c2 = a + ratio * (b - a), a + ratio * (c - a)
    parts = [triangle_quadrature((a, b2, c2), order, levels - 1, ratio)]
    parts += [triangle_quadrature(t, order) for t in ((b2, b, c), (b2, c, c2))]
    return np.vstack([p for p, _ in parts]), np.concatenate([w for _, w in parts])


def _fan(poly: np.ndarray, apex: np.ndarray, area: float):
    """Triangles (apex, v_i, v_i+1) over the polygon boundary, dropping slivers."""
    tris = [np.array([apex, poly[i], poly[(i + 1) % len(poly)]]) for i in range(len(poly))]
    return [t for t in tris if _tri_area(t) > 1e-12 * area]


def _inside_convex(poly: np.ndarray, p: np.ndarray, tol: float) -> bool:
    d = np.roll(poly, -1, axis=0) - poly
    cross = d[:, 0] * (p[1] - poly[:, 1]) - d[:, 1] * (p[0] - poly[:, 0])
    return bool(np.all(cross >= -tol))


def _nearest_on_polygon(poly: np.ndarray, p: np.ndarray) -> np.ndarray:
    a = poly
    d = np.roll(poly, -1, axis=0) - poly
    s = np.clip(np.einsum("ki,ki->k", p - a, d) / np.einsum("ki,ki->k", d, d), 0.0, 1.0)
    foot = a + s[:, None] * d
    return foot[np.argmin(np.hypot(*(foot - p).T))]


def _with_point(poly: np.ndarray, p: np.ndarray, tol: float) -> np.ndarray:
    """Insert boundary point ``p`` into the polygon vertex list (if not already a vertex)."""
    if np.min(np.hypot(*(poly - p).T)) <= tol:
        return poly
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        ab = b - a
        cross = ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0])
        s = np.dot(p - a, ab) / np.dot(ab, ab)
        if abs(cross) <= tol * np.hypot(*ab) and 0 < s < 1:
            return np.insert(poly, i + 1, p, axis=0)
    return poly


def partition_element(corners, crack: CrackGeometry):
    """Triangles (k, 3, 2) tiling a quadrilateral with edges along the crack.

    Tip elements get a fan about the tip, cut elements are split along the
    crack and each side fanned from its centroid; anything else is split
    along the 0-2 diagonal.
    """
    c = np.asarray(corners, dtype=float)
    area = abs(_polygon_area(c))
    tol = 1e-12 * np.sqrt(area)
    phi = signed_distance(c, crack)
    psi = tangential_coordinate(c, crack)
    tip = crack.tip
    if _inside_convex(c, tip, tol * np.sqrt(area)):
        poly = c
        for entry in _crack_entries(c, phi, psi):
            poly = _with_point(poly, entry, tol)
        tris = _fan(poly, tip, area)
    elif _element_is_cut(phi, psi, np.sqrt(area)):
        tris = []
        for part in _split_polygon(c, phi):
            tris += _fan(part, part.mean(axis=0), area)
    else:
        tris = [c[[0, 1, 2]], c[[0, 2, 3]]]
    return np.array(tris)


def _crack_entries(c, phi, psi):
    pts = []
    for i in range(len(c)):
        j = (i + 1) % len(c)
        if phi[i] * phi[j] < 0:
            s = phi[i] / (phi[i] - phi[j])
            if psi[i] + s * (psi[j] - psi[i]) < 0:
                pts.append(c[i] + s * (c[j] - c[i]))
    return pts


def element_quadrature(mesh: Mesh, e: int, crack: CrackGeometry, dofmap: EnrichedDofMap, config: EnrichmentConfig):
    """Physical quadrature points and weights for an enriched element, or None.

    None means the element needs no special treatment (standard Gauss rule).
    Elements touching a tip-enriched node are fanned about their point
    nearest the tip and refined geometrically towards it.
    """
    conn = mesh.elements[e]
    c = mesh.corners[e]
    area = abs(_polygon_area(c))
    tol = 1e-12 * np.sqrt(area)
    phi = signed_distance(c, crack)
    psi = tangential_coordinate(c, crack)
    in_tip = (dofmap.tip_index(conn) >= 0).any()
    in_heav = (dofmap.heaviside_index(conn) >= 0).any()
    tip = crack.tip
    tris, levels = [], 0
    if in_tip:
        levels = config.tip_subdiv_levels
        if _inside_convex(c, tip, tol * np.sqrt(area)):
            poly = c
            for entry in _crack_entries(c, phi, psi):
                poly = _with_point(poly, entry, tol)
            parts = [(poly, tip)]
        else:
            polys = _split_polygon(c, phi) if _element_is_cut(phi, psi, np.sqrt(area)) else [c]
            parts = []
            for poly in polys:
                apex = _nearest_on_polygon(poly, tip)
                parts.append((_with_point(poly, apex, tol), apex))
        for poly, apex in parts:
            tris += _fan(poly, apex, area)
    elif in_heav and _element_is_cut(phi, psi, np.sqrt(area)):
        for part in _split_polygon(c, phi):
            tris += _fan(part, part.mean(axis=0), area)
    else:
        return None
    pts, wts = zip(*(triangle_quadrature(t, config.tri_order, levels) for t in tris))
    return np.vstack(pts), np.concatenate(wts)


def element_basis(mesh: Mesh, e: int, nat: np.ndarray, xy: np.ndarray, crack, dofmap: EnrichedDofMap, config: EnrichmentConfig):
    """Enriched scalar basis of element ``e`` at quadrature points.

    nat, xy: (q, 2) natural and physical coordinates.
    Returns (N, dN, values, grads, dofs): standard N (q, n_en) and dN
    (q, n_en, 2); all basis functions (q, nf) with gradients (q, nf, 2); and
    (nf, 2) global DOF pairs.
    """
    conn = mesh.elements[e]
    coords = mesh.nodes[conn]
    N, dN, _ = physical_gradients(mesh.order, coords, nat[:, 0], nat[:, 1])
    vals, grads = [N], [dN]
    dofs = [np.column_stack([2 * conn, 2 * conn + 1])]

    hloc = np.flatnonzero(dofmap.heaviside_index(conn) >= 0)
    if hloc.size:
        H = heaviside(signed_distance(xy, crack))[:, None]
        HI = dofmap.node_sign[conn[hloc]][None, :] if config.shifted else 0.0
        vals.append(N[:, hloc] * (H - HI))
        grads.append(dN[:, hloc] * (H - HI)[..., None])
        dofs += [dofmap.heaviside_dofs(a)[None] for a in conn[hloc]]

    tloc = np.flatnonzero(dofmap.tip_index(conn) >= 0)
    if tloc.size:
        r, th = polar_at_tip(xy, crack)
        r = np.maximum(r, R_MIN)
        F = tip_functions(r, th, config.lam)  # (q, 4)
        dF = tip_function_gradients(r, th, config.lam, crack.tangent)  # (q, 4, 2)
        if config.blending == "corrected":
            w = N[:, tloc].sum(axis=1)
            dw = dN[:, tloc].sum(axis=1)
        else:
            w = np.ones(len(xy))
            dw = np.zeros((len(xy), 2))
        for a in tloc:
            node = conn[a]
            FK = dofmap.node_tip_values[node] if config.shifted else np.zeros(4)
            dFs = F - FK  # (q, 4)
            Na, dNa = N[:, a], dN[:, a]
            vals.append((w * Na)[:, None] * dFs)
            g = (dw * Na[:, None] + w[:, None] * dNa)[:, None, :] * dFs[..., None] + (w * Na)[:, None, None] * dF
            grads.append(g)
            dofs.append(dofmap.tip_dofs(node))
    return N, dN, np.concatenate(vals, axis=1), np.concatenate(grads, axis=1), np.vstack(dofs)
