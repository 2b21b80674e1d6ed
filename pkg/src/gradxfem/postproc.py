"""Post-processing: line profiles, J-integral, crack opening, element distortion, file output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import Delaunay

from .crack import signed_distance
from .material import SQ2, von_mises
from .shapes import inverse_map
from .solver import CaseResult, Discretization
from .xfem import element_basis

PROFILE_HEADER = ["r_mm", "r_over_l", "sigma22_over_sy", "sigmae_over_sy"]
HISTORY_HEADER = ["increment", "remote_strain", "J_N_per_mm", "delta_mm", "aspect_ratio", "taper_x"]


@dataclass
class LineProfile:
    """Fields sampled along a ray from the crack tip at angle ``theta`` (rad)."""

    r: np.ndarray
    theta: float
    values: dict
    fallback: np.ndarray = field(default=None)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        if np.any(np.diff(self.r) <= 0):
            raise ValueError("profile radii must be strictly increasing")
        for k, v in self.values.items():
            v = np.asarray(v, dtype=float)
            if v.shape != self.r.shape or not np.all(np.isfinite(v)):
                raise ValueError(f"profile field {k!r} must be finite and match the radii")
            self.values[k] = v
        if self.fallback is None:
            self.fallback = np.zeros(self.r.shape, dtype=bool)

    def __len__(self):
        return len(self.r)


@dataclass(frozen=True)
class DistortionReport:
    e2: float
    f3: float
    f4: float
    aspect: float
    taper: float
    degenerate: bool = False


def stress_fields(stress: np.ndarray) -> dict:
    """Named in-plane components and the von Mises stress from Mandel stresses."""
    return {
        "sigma11": stress[:, 0],
        "sigma22": stress[:, 1],
        "sigma33": stress[:, 2],
        "sigma12": stress[:, 3] / SQ2,
        "sigma_e": von_mises(stress),
    }


class PointInterpolator:
    """Delaunay-based linear interpolation of quadrature-point data.

    With ``mirror_y`` the points are reflected about the horizontal line
    y = mirror_y so that samples on a symmetry plane lie inside the hull.
    """

    def __init__(self, xy: np.ndarray, mirror_y: float | None = None):
        self.n = len(xy)
        if self.n < 3:
            raise ValueError("need at least 3 points to interpolate")
        self.mirror_y = mirror_y
        pts = xy
        if mirror_y is not None:
            pts = np.vstack([xy, np.column_stack([xy[:, 0], 2 * mirror_y - xy[:, 1]])])
        self.points = pts
        self.tri = Delaunay(pts)

    def __call__(self, values: np.ndarray, samples: np.ndarray, odd: bool = False):
        """Interpolated values and a mask of samples that fell back to the nearest point."""
        v = np.asarray(values, dtype=float)
        if self.mirror_y is not None:
            v = np.concatenate([v, -v if odd else v])
        out = LinearNDInterpolator(self.tri, v)(samples)
        miss = ~np.isfinite(out)
        if miss.any():
            out[miss] = NearestNDInterpolator(self.points, v)(samples[miss])
        return out, miss


def _archive_fields(result: CaseResult, u=None, state=None):
    if result is None or result.disc.n_qp == 0:
        raise ValueError("empty result archive")
    return (result.u if u is None else u), (result.state if state is None else state)


def extract_line(result: CaseResult, theta: float, radii, state=None, interpolator: PointInterpolator | None = None) -> LineProfile:
    """sigma22 and sigma_e along the ray at ``theta`` from the crack tip (crack frame).

    Values are in MPa; half models are mirrored about the crack plane.
    """
    _, state = _archive_fields(result, None, state)
    crack = result.disc.crack
    if crack is None:
        raise ValueError("result has no crack geometry")
    radii = np.asarray(radii, dtype=float)
    direction = np.cos(theta) * crack.tangent + np.sin(theta) * crack.normal
    samples = crack.tip + radii[:, None] * direction
    if interpolator is None:
        interpolator = PointInterpolator(
            result.disc.qp_xy, mirror_y=crack.tip[1] if result.problem.half_model else None
        )
    f = stress_fields(state.stress)
    vals, fb = {}, np.zeros(len(radii), dtype=bool)
    for name in ("sigma22", "sigma_e", "sigma11", "sigma12"):
        vals[name], miss = interpolator(f[name], samples, odd=(name == "sigma12"))
        fb |= miss
    return LineProfile(radii, float(theta), vals, fb)


def boundary_nodes(mesh) -> np.ndarray:
    """Nodes on edges owned by a single element."""
    el = mesh.elements[:, :4]
    edges = np.sort(np.stack([el, np.roll(el, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def j_integral(result: CaseResult, domains, u=None, state=None) -> np.ndarray:
    """Domain-form J for each (r_in, r_out) annulus around the tip (N/mm).

    q is 1 inside r_in, 0 outside r_out and linear in r between. Half models
    are doubled. The strain energy density is the accumulated stress work.
    """
    u, state = _archive_fields(result, u, state)
    disc = result.disc
    mesh = disc.mesh
    crack = disc.crack
    if crack is None:
        raise ValueError("result has no crack geometry")
    tip, t = crack.tip, crack.tangent
    rn = np.hypot(*(mesh.nodes - tip).T)
    bnd = boundary_nodes(mesh)
    # nodes on the crack line (faces, ligament) may sit inside the domain
    on_line = np.abs(signed_distance(mesh.nodes[bnd], crack)) <= 1e-9 * rn.max()
    r_edge = rn[bnd[~on_line]].min()

    grad_u = disc.displacement_gradient(u)
    s = state.stress
    sig = np.empty((len(s), 2, 2))
    sig[:, 0, 0], sig[:, 1, 1] = s[:, 0], s[:, 1]
    sig[:, 0, 1] = sig[:, 1, 0] = s[:, 3] / SQ2
    du_dx1 = grad_u @ t  # (q, 2)
    conn = mesh.elements[disc.qp_element]
    out = []
    for r_in, r_out in np.atleast_2d(domains):
        if not 0 < r_in < r_out:
            raise ValueError("J domain needs 0 < r_in < r_out")
        if r_out >= r_edge:
            raise ValueError(f"J domain r_out={r_out} reaches the external boundary (nearest at {r_edge:.4g})")
        q = np.clip((r_out - rn) / (r_out - r_in), 0.0, 1.0)
        dq = np.einsum("qa,qai->qi", q[conn], disc.qp_dN)
        integrand = np.einsum("qij,qi,qj->q", sig, du_dx1, dq) - state.energy * (dq @ t)
        J = float(np.sum(integrand * disc.qp_weight))
        out.append(2.0 * J if result.problem.half_model else J)
    return np.array(out)


def evaluate_displacement(disc: Discretization, u: np.ndarray, points) -> np.ndarray:
    """Enriched displacement at arbitrary points inside the mesh."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((len(pts), 2))
    for k, p in enumerate(pts):
        e = disc.mesh.find_element(p)
        if e < 0:
            raise ValueError(f"point {p} lies outside the mesh")
        nat = inverse_map(disc.mesh.corners[e], p[None])
        _, _, vals, _, pairs = element_basis(disc.mesh, e, nat, p[None], disc.crack, disc.dofmap, disc.config)
        out[k] = vals[0] @ u[pairs]
    return out


def crack_opening_displacement(result: CaseResult, u=None) -> float:
    """Normal opening of the crack faces at the mouth (mm).

    Half models double the normal displacement of the mouth node; full
    models take the jump between points just above and below the mouth,
    which for cut elements equals 2 sum N_J a_J.
    """
    u, _ = _archive_fields(result, u, None)
    disc = result.disc
    crack = disc.crack
    if crack is None:
        raise ValueError("no crack: opening displacement undefined")
    n = crack.normal
    mouth = crack.mouth
    h = 1e-9 * float(np.sqrt(disc.mesh.areas.max()))
    inward = crack.points[1] - mouth
    inward = inward / np.hypot(*inward)
    if result.problem.half_model:
        p = mouth + h * inward
        return float(2.0 * evaluate_displacement(disc, u, p[None])[0] @ n)
    pts = np.array([mouth + h * inward + h * n, mouth + h * inward - h * n])
    up, dn = evaluate_displacement(disc, u, pts)
    return float((up - dn) @ n)


def distortion_metrics(corners) -> DistortionReport:
    """Shape parameters of a quadrilateral from its corners (counterclockwise, bottom-left first).

    Coordinates are taken relative to the corner centroid.
    """
    c = np.asarray(corners, dtype=float)
    if c.shape != (4, 2):
        raise ValueError("need 4 corner coordinates")
    c = c - c.mean(axis=0)
    x, y = c[:, 0], c[:, 1]
    e2 = 0.25 * (-x[0] + x[1] + x[2] - x[3])
    f3 = 0.25 * (-y[0] - y[1] + y[2] + y[3])
    f4 = 0.25 * (y[0] - y[1] + y[2] - y[3])
    if e2 == 0 or f3 == 0:
        return DistortionReport(e2, f3, f4, np.inf, np.inf if f3 == 0 else f4 / f3, True)
    return DistortionReport(e2, f3, f4, max(e2 / f3, f3 / e2), f4 / f3)


def element_distortion(result: CaseResult, element: int, u=None) -> DistortionReport:
    """Distortion of the deformed element (corner coordinates x + u)."""
    u, _ = _archive_fields(result, u, None)
    mesh = result.mesh
    corners = mesh.elements[element, :4]
    disp = u[: 2 * mesh.n_nodes].reshape(-1, 2)[corners]
    start = _bottom_left_first(mesh.nodes[corners])
    return distortion_metrics((mesh.nodes[corners] + disp)[start])


def _bottom_left_first(c: np.ndarray) -> np.ndarray:
    """Roll counterclockwise corner order so the bottom-left corner comes first."""
    k = int(np.argmin(c[:, 0] + c[:, 1]))
    return np.roll(np.arange(4), -k)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_profile_csv(profile: LineProfile, path, l: float, sigma_y: float) -> Path:
    path = Path(path)
    l_ref = l if l > 0 else 1.0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_HEADER)
        for i, r in enumerate(profile.r):
            w.writerow(
                [
                    _fmt(r),
                    _fmt(r / l_ref),
                    _fmt(profile.values["sigma22"][i] / sigma_y),
                    _fmt(profile.values["sigma_e"][i] / sigma_y),
                ]
            )
    return path


def write_rows_csv(rows, path, header) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])
    return path


def write_vtk(result: CaseResult, path, u=None, state=None) -> Path:
    """Legacy ASCII unstructured grid with nodal displacement and element-averaged fields."""
    u, state = _archive_fields(result, u, state)
    mesh = result.mesh
    disc = result.disc
    path = Path(path)
    n_en = mesh.elements.shape[1]
    cell_type = 9 if mesh.order == 1 else 23
    disp = u[: 2 * mesh.n_nodes].reshape(-1, 2)
    w = disc.qp_weight
    vol = np.bincount(disc.qp_element, weights=w, minlength=mesh.n_elements)

    def cell_mean(v):
        return np.bincount(disc.qp_element, weights=v * w, minlength=mesh.n_elements) / vol

    f = stress_fields(state.stress)
    cells = {
        "sigma11": cell_mean(f["sigma11"]),
        "sigma22": cell_mean(f["sigma22"]),
        "sigma33": cell_mean(f["sigma33"]),
        "sigma12": cell_mean(f["sigma12"]),
        "sigma_e": cell_mean(f["sigma_e"]),
        "eps_p": cell_mean(state.eps_p),
        "eta_p": cell_mean(state.eta_p),
    }
    lines = ["# vtk DataFile Version 2.0", "gradxfem field snapshot", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist()]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (n_en + 1)}")
    lines += [f"{n_en} " + " ".join(map(str, conn)) for conn in mesh.elements.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(cell_type)] * mesh.n_elements
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append("VECTORS displacement double")
    lines += [f"{a!r} {b!r} 0.0" for a, b in disp.tolist()]
    lines.append(f"CELL_DATA {mesh.n_elements}")
    for name, vals in cells.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(v) for v in vals.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_counts(path) -> tuple:
    """(n_points, n_cells) declared in a legacy VTK file."""
    n_pts = n_cells = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("POINTS "):
            n_pts = int(line.split()[1])
        elif line.startswith("CELLS "):
            n_cells = int(line.split()[1])
    if n_pts is None or n_cells is None:
        raise ValueError(f"{path} is not a legacy unstructured-grid VTK file")
    return n_pts, n_cells


def write_outputs(result: CaseResult, requests, out_dir) -> list:
    """Write the requested outputs and return the written paths.

    Each request is a tuple: ("profile", LineProfile, l, sigma_y),
    ("history", rows), ("vtk", increment) or ("log",).
    """
    out_dir = Path(out_dir)
    written = []
    if not requests:
        return written
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    for req in requests:
        kind = req[0]
        if kind == "profile":
            _, profile, l, sy = req[:4]
            name = req[4] if len(req) > 4 else "profile_sigma22.csv"
            written.append(write_profile_csv(profile, out_dir / name, l, sy))
        elif kind == "history":
            written.append(write_rows_csv(req[1], out_dir / "history.csv", HISTORY_HEADER))
        elif kind == "vtk":
            inc = req[1]
            snap = result.snapshots.get(inc)
            if snap is None:
                raise KeyError(f"no snapshot stored for increment {inc}")
            written.append(write_vtk(result, out_dir / f"field_inc{inc}.vtk", snap.u, snap.state))
        elif kind == "log":
            p = out_dir / "convergence.log"
            p.write_text("".join(line + "\n" for line in result.log))
            written.append(p)
        else:
            raise ValueError(f"unknown output request {kind!r}")
    return written
