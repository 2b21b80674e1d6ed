"""Global discretisation, assembly and incremental Newton-Raphson solution.

Every quadrature point carries a displacement-gradient operator
G[q, i, j, :] with du_i/dx_j = G[q, i, j] . u_e, built once from either the
standard shape functions or the enriched basis. Elements with the same
number of DOFs share one vectorised group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .crack import CrackGeometry
from .gradients import PlasticGradientOperator, effective_gradient_from_mandel
from .material import SQ2, GaussPointState, MaterialParams, stress_update
from .mesh import Mesh
from .shapes import gauss_legendre_2d, inverse_map, physical_gradients
from .xfem import EnrichedDofMap, EnrichmentConfig, classify_nodes, element_basis, element_quadrature

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Newton failure after exhausting step bisection.

    ``result`` holds the archive up to the last committed increment.
    """

    def __init__(self, message, increment=None, load_factor=None, result=None):
        super().__init__(message)
        self.increment = increment
        self.load_factor = load_factor
        self.result = result


@dataclass(frozen=True)
class LoadSchedule:
    """Proportional displacement control: load factor goes 0 -> 1 over the fractions."""

    magnitude: float = 1.0
    increments: int = 100
    fractions: tuple | None = None

    def __post_init__(self):
        if self.increments < 1:
            raise ValueError("need at least one increment")
        fr = self.fractions
        if fr is None:
            fr = tuple([1.0 / self.increments] * self.increments)
        fr = tuple(float(f) for f in fr)
        if len(fr) != self.increments:
            raise ValueError("fractions must have one entry per increment")
        if any(f <= 0 for f in fr):
            raise ValueError("loading must be monotone (positive fractions)")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError("fractions must sum to 1")
        object.__setattr__(self, "fractions", fr)

    @property
    def factors(self) -> np.ndarray:
        """Cumulative load factor at the end of each increment."""
        f = np.cumsum(self.fractions)
        f[-1] = 1.0
        return f


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-6
    max_iter: int = 25
    abs_floor: float = 1e-12
    max_bisections: int = 4
    divergence_window: int = 3
    line_search: int = 4  # residual-norm backtracking halvings per iteration (0 disables)

    def __post_init__(self):
        if not 0 < self.tol <= 1e-2:
            raise ValueError("tolerance must lie in (0, 1e-2]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class DirichletBC:
    """Prescribed DOFs and their values at load factor 1."""

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dofs, dtype=int)
        v = np.asarray(self.values, dtype=float)
        if d.shape != v.shape:
            raise ValueError("dofs and values must match")
        uniq, idx = np.unique(d, return_index=True)
        if len(uniq) != len(d):
            d, v = uniq, v[idx]
        object.__setattr__(self, "dofs", d)
        object.__setattr__(self, "values", v)

    @classmethod
    def combine(cls, *parts: "DirichletBC") -> "DirichletBC":
        return cls(np.concatenate([p.dofs for p in parts]), np.concatenate([p.values for p in parts]))


def build_dof_map(mesh: Mesh, crack: CrackGeometry | None = None, config: EnrichmentConfig | None = None) -> EnrichedDofMap:
    """Global numbering: node DOFs 2i, 2i+1 followed by enrichment DOFs."""
    if crack is None or config is None or config.strategy == "none":
        return EnrichedDofMap.empty(mesh.n_nodes)
    return classify_nodes(mesh, crack, config)


def gradient_to_strain(G: np.ndarray) -> np.ndarray:
    """(..., 2, 2, nd) displacement-gradient operator -> (..., 4, nd) Mandel strain operator."""
    B = np.zeros(G.shape[:-3] + (4, G.shape[-1]))
    B[..., 0, :] = G[..., 0, 0, :]
    B[..., 1, :] = G[..., 1, 1, :]
    B[..., 3, :] = (G[..., 0, 1, :] + G[..., 1, 0, :]) / SQ2
    return B


def standard_gradient_operator(dN: np.ndarray) -> np.ndarray:
    """(..., n_en, 2) shape-function gradients -> (..., 2, 2, 2 n_en) with DOF order (u0, v0, u1, ...)."""
    n_en = dN.shape[-2]
    G = np.zeros(dN.shape[:-2] + (2, 2, 2 * n_en))
    for i in range(2):
        G[..., i, :, i::2] = np.swapaxes(dN, -1, -2)
    return G


@dataclass
class QuadratureGroup:
    elements: np.ndarray  # (n_el,) global element ids
    dofs: np.ndarray  # (n_el, nd)
    starts: np.ndarray  # (n_el,) first quadrature point of each element (group-local)
    qp_el: np.ndarray  # (n_q,) group-local element index
    G: np.ndarray  # (n_q, 2, 2, nd)
    B: np.ndarray  # (n_q, 4, nd)
    w: np.ndarray  # (n_q,)
    offset: int = 0  # position of the group's first point in the global point list


@dataclass
class Discretization:
    mesh: Mesh
    dofmap: EnrichedDofMap
    crack: CrackGeometry | None
    config: EnrichmentConfig | None
    groups: list
    qp_element: np.ndarray
    qp_xy: np.ndarray
    qp_weight: np.ndarray
    qp_dN: np.ndarray
    _pattern: tuple = field(default=None, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    @property
    def n_qp(self) -> int:
        return len(self.qp_element)

    def displacement_gradient(self, u: np.ndarray) -> np.ndarray:
        """(n_qp, 2, 2) du_i/dx_j at every quadrature point."""
        out = np.empty((self.n_qp, 2, 2))
        for g in self.groups:
            ue = u[g.dofs][g.qp_el]
            out[g.offset : g.offset + len(g.w)] = np.einsum("qijd,qd->qij", g.G, ue)
        return out

    def strain(self, u: np.ndarray) -> np.ndarray:
        out = np.empty((self.n_qp, 4))
        for g in self.groups:
            out[g.offset : g.offset + len(g.w)] = np.einsum("qkd,qd->qk", g.B, u[g.dofs][g.qp_el])
        return out

    def pattern(self):
        """Unique CSR pattern of the global matrix and the scatter map of element entries."""
        if self._pattern is None:
            n = self.n_dofs
            keys = np.concatenate(
                [(g.dofs[:, :, None].astype(np.int64) * n + g.dofs[:, None, :]).ravel() for g in self.groups]
            )
            uk, inv = np.unique(keys, return_inverse=True)
            rows, cols = uk // n, uk % n
            indptr = np.searchsorted(rows, np.arange(n + 1))
            self._pattern = (rows, cols, indptr, inv)
        return self._pattern


def mean_dilatation(B: np.ndarray, w: np.ndarray, starts: np.ndarray, qp_el: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """B-bar: replace the volumetric strain of selected elements by its element average.

    The dilatation ε11 + ε22 + ε33 is averaged with the quadrature weights and
    redistributed equally over the three normal components (plane strain
    then carries ε33 = (mean - local) / 3).
    """
    bvol = B[:, 0] + B[:, 1] + B[:, 2]
    vol = np.add.reduceat(w, starts)
    avg = np.add.reduceat(bvol * w[:, None], starts, axis=0) / vol[:, None]
    corr = (avg[qp_el] - bvol) * selected[qp_el][:, None] / 3.0
    out = B.copy()
    out[:, :3] += corr[:, None, :]
    return out


def build_discretization(mesh: Mesh, crack: CrackGeometry | None = None, config: EnrichmentConfig | None = None, dofmap: EnrichedDofMap | None = None, reduced_quadratic: bool = True, bbar: bool = True) -> Discretization:
    """Quadrature and kinematic operators for every element.

    Unenriched quadratic elements use 2x2 reduced Gauss integration, linear
    elements 2x2 full integration. Enriched elements that are neither cut
    nor in the tip support use full Gauss integration (3x3 for quadratic);
    cut and tip-support elements are triangulated. With ``bbar`` linear and
    enriched elements use the mean-dilatation strain operator against
    volumetric locking under plastic incompressibility.
    """
    if dofmap is None:
        dofmap = build_dof_map(mesh, crack, config)
    enriched = np.zeros(mesh.n_nodes, dtype=bool)
    enriched[dofmap.heaviside_nodes] = True
    enriched[dofmap.tip_nodes] = True
    special = np.flatnonzero(enriched[mesh.elements].any(axis=1))
    plain = np.setdiff1d(np.arange(mesh.n_elements), special)

    n_en = mesh.elements.shape[1]
    records = []  # (element, dofs (nd,), xy, w, dN_std, G)
    if len(plain):
        ng = 2 if (mesh.order == 1 or reduced_quadratic) else 3
        pts, wg = gauss_legendre_2d(ng)
        coords = mesh.nodes[mesh.elements[plain]]
        N, dN, detJ = physical_gradients(mesh.order, coords, pts[None, :, 0], pts[None, :, 1])
        if np.any(detJ <= 0):
            raise ValueError("non-positive Jacobian in the undeformed mesh")
        conn = mesh.elements[plain]
        dofs = np.empty((len(plain), 2 * n_en), dtype=int)
        dofs[:, 0::2] = 2 * conn
        dofs[:, 1::2] = 2 * conn + 1
        nq = len(wg)
        G = standard_gradient_operator(dN).reshape(-1, 2, 2, 2 * n_en)
        plain_block = dict(
            elements=plain,
            dofs=dofs,
            xy=np.einsum("eqa,eai->eqi", N, coords).reshape(-1, 2),
            w=(wg[None] * detJ).ravel(),
            dN=dN.reshape(-1, n_en, 2),
            G=G,
            nq=np.full(len(plain), nq),
        )
    else:
        plain_block = None

    for e in special:
        quad = element_quadrature(mesh, e, crack, dofmap, config) if crack is not None else None
        coords = mesh.nodes[mesh.elements[e]]
        if quad is None:
            pts, wg = gauss_legendre_2d(2 if mesh.order == 1 else 3)
            N, dN, detJ = physical_gradients(mesh.order, coords, pts[:, 0], pts[:, 1])
            xy = N @ coords
            w = wg * detJ
            nat = pts
        else:
            xy, w = quad
            nat = inverse_map(mesh.corners[e], xy)
        _, dN, vals, grads, pairs = element_basis(mesh, e, nat, xy, crack, dofmap, config)
        nd = 2 * pairs.shape[0]
        G = np.zeros((len(w), 2, 2, nd))
        for i in range(2):
            G[:, i, :, i::2] = np.swapaxes(grads, 1, 2)
        records.append((e, pairs.ravel(), xy, w, dN, G))

    # group by element DOF count, keeping a deterministic order
    by_nd: dict[int, list] = {}
    if plain_block is not None:
        by_nd.setdefault(2 * n_en, [])
    for rec in records:
        by_nd.setdefault(len(rec[1]), []).append(rec)

    groups, qe, qxy, qw, qdN = [], [], [], [], []
    offset = 0
    for nd in sorted(by_nd):
        els, dofs, xy, w, dN, G, nq = [], [], [], [], [], [], []
        if plain_block is not None and nd == 2 * n_en:
            els.append(plain_block["elements"])
            dofs.append(plain_block["dofs"])
            xy.append(plain_block["xy"])
            w.append(plain_block["w"])
            dN.append(plain_block["dN"])
            G.append(plain_block["G"])
            nq.append(plain_block["nq"])
        for e, d, x, ww, dn, g in by_nd[nd]:
            els.append([e])
            dofs.append(d[None])
            xy.append(x)
            w.append(ww)
            dN.append(dn)
            G.append(g)
            nq.append([len(ww)])
        els = np.concatenate(els)
        nq = np.concatenate(nq)
        starts = np.concatenate([[0], np.cumsum(nq)[:-1]])
        G = np.concatenate(G)
        w = np.concatenate(w)
        qp_el = np.repeat(np.arange(len(els)), nq)
        B = gradient_to_strain(G)
        if bbar:
            selected = np.isin(els, special) | (mesh.order == 1)
            if selected.any():
                B = mean_dilatation(B, w, starts, qp_el, selected)
        grp = QuadratureGroup(
            elements=els,
            dofs=np.concatenate(dofs),
            starts=starts,
            qp_el=qp_el,
            G=G,
            B=B,
            w=w,
            offset=offset,
        )
        groups.append(grp)
        qe.append(np.repeat(els, nq))
        qxy.append(np.concatenate(xy))
        qw.append(grp.w)
        qdN.append(np.concatenate(dN))
        offset += len(grp.w)
    if np.any(np.concatenate(qw) <= 0):
        raise ValueError("non-positive quadrature weight")
    return Discretization(
        mesh, dofmap, crack, config, groups, np.concatenate(qe), np.concatenate(qxy), np.concatenate(qw), np.concatenate(qdN)
    )


def element_force_and_stiffness(G: np.ndarray, w: np.ndarray, u_e: np.ndarray, state: GaussPointState, material: MaterialParams, du_e: np.ndarray | None = None, bbar: bool = False):
    """Internal force and consistent stiffness of one element.

    G: (q, 2, 2, nd) gradient operator, w: (q,) weights, u_e: total element
    DOFs at the start of the step, du_e: step increment (default: zero).
    Returns (f_int (nd,), K_e (nd, nd), new state).
    """
    B = gradient_to_strain(G)
    if bbar:
        B = mean_dilatation(B, w, np.array([0]), np.zeros(len(w), dtype=int), np.array([True]))
    du_e = np.zeros_like(u_e) if du_e is None else du_e
    d_eps = B @ du_e
    new, C = stress_update(d_eps, state, material)
    f = np.einsum("qkd,qk,q->d", B, new.stress, w)
    K = np.einsum("qki,qkl,qlj,q->ij", B, C, B, w, optimize=True)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(K))):
        raise FloatingPointError("non-finite element force or stiffness")
    return f, K, new


def assemble(disc: Discretization, du: np.ndarray, state: GaussPointState, material: MaterialParams, stiffness: bool = True):
    """Global internal force and tangent for a trial increment ``du`` from the committed ``state``.

    Returns (f_int, K (CSR or None), trial state).
    """
    d_eps = disc.strain(du)
    new, C = stress_update(d_eps, state, material)
    f = np.zeros(disc.n_dofs)
    Ke_all = []
    for g in disc.groups:
        sl = slice(g.offset, g.offset + len(g.w))
        fq = np.einsum("qkd,qk->qd", g.B, new.stress[sl]) * g.w[:, None]
        fe = np.add.reduceat(fq, g.starts, axis=0)
        f += np.bincount(g.dofs.ravel(), weights=fe.ravel(), minlength=disc.n_dofs)
        if stiffness:
            Kq = np.matmul(np.swapaxes(g.B, 1, 2) * g.w[:, None, None], np.matmul(C[sl], g.B))
            Ke_all.append(np.add.reduceat(Kq, g.starts, axis=0).ravel())
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("non-finite internal force")
    K = None
    if stiffness:
        rows, cols, indptr, inv = disc.pattern()
        data = np.bincount(inv, weights=np.concatenate(Ke_all), minlength=len(rows))
        K = sp.csr_matrix((data, cols, indptr), shape=(disc.n_dofs, disc.n_dofs))
    return f, K, new


@dataclass
class Problem:
    """Everything one incremental analysis needs."""

    disc: Discretization
    material: MaterialParams
    bc: DirichletBC
    schedule: LoadSchedule = field(default_factory=LoadSchedule)
    settings: SolverSettings = field(default_factory=SolverSettings)
    half_model: bool = False


@dataclass
class Snapshot:
    increment: int
    load_factor: float
    u: np.ndarray
    state: GaussPointState


@dataclass
class CaseResult:
    """Archive of one analysis: final fields, chosen snapshots, histories and the convergence log."""

    problem: Problem
    u: np.ndarray
    state: GaussPointState
    load_factors: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    history: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    @property
    def disc(self) -> Discretization:
        return self.problem.disc

    @property
    def mesh(self) -> Mesh:
        return self.problem.disc.mesh

    reactions: np.ndarray | None = None  # internal force at the last committed state

    def nodal_displacement(self, u: np.ndarray | None = None) -> np.ndarray:
        """(n_nodes, 2) standard nodal DOFs; with the shifted basis these are the nodal displacements."""
        u = self.u if u is None else u
        return u[: 2 * self.mesh.n_nodes].reshape(-1, 2)


class _Factor:
    def __init__(self, K_ff, free_dofs):
        try:
            self.lu = splu(K_ff.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            diag = np.abs(K_ff.diagonal())
            worst = int(np.argmin(diag))
            raise np.linalg.LinAlgError(
                f"singular tangent ({exc}); smallest pivot candidate at global DOF {int(free_dofs[worst])}"
            ) from exc

    def solve(self, b):
        return self.lu.solve(b)


class _Increment:
    """Newton iterations for one load step from a committed state."""

    def __init__(self, problem: Problem, free: np.ndarray, fixed: np.ndarray):
        self.p = problem
        self.free = free
        self.fixed = fixed
        self.scale_max = 0.0  # largest internal-force norm seen; sets the absolute floor

    def run(self, u_n, state_n, du_c, du_guess, tag, log_lines):
        p, free, fixed = self.p, self.free, self.fixed
        s = p.settings
        du = np.zeros_like(u_n) if du_guess is None else du_guess.copy()
        du[fixed] = du_c
        iters = 0
        if du_guess is None:
            # linearised predictor with the committed tangent
            f, K, _ = assemble(p.disc, np.zeros_like(u_n), state_n, p.material)
            K_ff = K[free][:, free]
            K_fc = K[free][:, fixed]
            rhs = -(f[free] + K_fc @ du_c)
            du[free] = _Factor(K_ff, free).solve(rhs)
            iters = 1
        history = []
        f, K, trial = assemble(p.disc, du, state_n, p.material)
        while True:
            R = f[free]
            scale = np.linalg.norm(f)
            res = np.linalg.norm(R)
            rel = res / scale if scale > 0 else 0.0
            log_lines.append(f"{tag} {iters} {rel:.6e}")
            history.append(res)
            if not np.isfinite(res):
                return None, iters
            self.scale_max = max(self.scale_max, scale)
            if res <= s.tol * scale or res <= s.abs_floor * self.scale_max:
                return (du, trial, f), iters
            w = s.divergence_window
            if len(history) > w and all(history[-k] > history[-k - 1] for k in range(1, w + 1)):
                return None, iters
            if iters >= s.max_iter:
                return None, iters
            try:
                delta = _Factor(K[free][:, free], free).solve(-R)
            except np.linalg.LinAlgError:
                return None, iters
            alpha = 1.0
            for k in range(s.line_search + 1):
                du_try = du.copy()
                du_try[free] += alpha * delta
                f, K, trial = assemble(p.disc, du_try, state_n, p.material)
                res_try = np.linalg.norm(f[free])
                if np.isfinite(res_try) and res_try < res:
                    break
                alpha *= 0.5
            du = du_try
            iters += 1


def newton_increment(problem: Problem, u_n, state_n, du_c, du_guess=None, tag="1", log_lines=None):
    """Solve one displacement-controlled step; returns (du, new_state, f_int, iterations) or None on failure."""
    free, fixed = _partition(problem)
    out, iters = _Increment(problem, free, fixed).run(u_n, state_n, du_c, du_guess, tag, log_lines if log_lines is not None else [])
    if out is None:
        return None
    du, trial, f = out
    return du, trial, f, iters


def _partition(problem: Problem):
    fixed = problem.bc.dofs
    mask = np.ones(problem.disc.n_dofs, dtype=bool)
    mask[fixed] = False
    return np.flatnonzero(mask), fixed


def run_case(problem: Problem, monitor=None, snapshot_increments=(), keep_last: bool = True) -> CaseResult:
    """Incremental displacement-controlled analysis with lagged gradient update.

    ``monitor(result, increment, load_factor, u, state)`` may return a dict that
    is appended to ``result.history`` after each committed increment.
    Failed steps are bisected up to ``settings.max_bisections`` times before
    a :class:`SolverError` carrying the partial archive is raised.
    """
    disc = problem.disc
    free, fixed = _partition(problem)
    stepper = _Increment(problem, free, fixed)
    gradient_op = None
    if problem.material.l > 0 and not problem.material.elastic:
        gradient_op = PlasticGradientOperator(disc.mesh, disc.qp_element, disc.qp_xy, disc.qp_dN)
    grad_total = np.zeros((disc.n_qp, 4, 2))

    u = np.zeros(disc.n_dofs)
    state = GaussPointState.zeros(disc.n_qp)
    result = CaseResult(problem, u, state)
    result.reactions = np.zeros(disc.n_dofs)
    values = problem.bc.values
    lam_prev = 0.0
    last_du, last_dlam = None, None
    factors = problem.schedule.factors
    snap = set(snapshot_increments)

    for inc, lam_target in enumerate(factors, start=1):
        pending = [(lam_prev, lam_target, 0)]
        while pending:
            a, b, depth = pending.pop(0)
            guess = None if last_du is None else last_du * ((b - a) / last_dlam)
            tag = f"{inc}" if depth == 0 else f"{inc}.{depth}"
            out, iters = stepper.run(u, state, (b - a) * values, guess, tag, result.log)
            if out is None:
                if depth >= problem.settings.max_bisections:
                    result.u, result.state = u, state
                    raise SolverError(
                        f"Newton failed at increment {inc} (load factor {b:.6g}) after {depth} bisections",
                        increment=inc,
                        load_factor=b,
                        result=result,
                    )
                mid = 0.5 * (a + b)
                pending[:0] = [(a, mid, depth + 1), (mid, b, depth + 1)]
                log.info("bisecting increment %d at depth %d", inc, depth + 1)
                continue
            du, new, f = out
            if gradient_op is not None:
                grad_total += gradient_op.gradients(new.plastic_strain - state.plastic_strain)
                new.eta_p = effective_gradient_from_mandel(grad_total)
            u = u + du
            state = new
            result.reactions = f
            last_du, last_dlam = du, b - a
            result.iterations.append(iters)
        lam_prev = lam_target
        result.load_factors.append(float(lam_target))
        result.u, result.state = u, state
        if monitor is not None:
            row = monitor(result, inc, float(lam_target), u, state)
            if row:
                result.history.append(row)
        if inc in snap or (keep_last and inc == len(factors)):
            result.snapshots[inc] = Snapshot(inc, float(lam_target), u.copy(), state.copy())
    return result
