"""Benchmark definitions: mode-I boundary layer, edge-cracked plate, material point."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PLATE_MATERIAL, VALIDATION_L, CaseConfig, ConfigError
from .crack import CrackGeometry
from .material import GaussPointState, MaterialParams, stress_update
from .mesh import GradingSpec, Mesh, generate_disc_mesh, generate_structured_mesh
from .postproc import (
    HISTORY_HEADER,
    LineProfile,
    crack_opening_displacement,
    element_distortion,
    extract_line,
    j_integral,
    write_outputs,
    write_rows_csv,
)
from .solver import CaseResult, DirichletBC, LoadSchedule, Problem, build_discretization, run_case

log = logging.getLogger(__name__)


def kfield_displacement(r, theta, K_I, E, nu):
    """Plane-strain mode-I crack-tip displacements (u, v)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    t = np.asarray(theta, dtype=float)
    amp = K_I * (1 + nu) / E * np.sqrt(r / (2 * np.pi)) * (3 - 4 * nu - np.cos(t))
    return amp * np.cos(t / 2), amp * np.sin(t / 2)


def length_scale(cfg: CaseConfig) -> float:
    """Normalising length for r/l: the material length, or the case default when l = 0."""
    if cfg.material.l > 0:
        return cfg.material.l
    return VALIDATION_L if cfg.kind == "boundary_layer" else PLATE_MATERIAL.l


@dataclass
class CaseSetup:
    problem: Problem
    crack: CrackGeometry
    tracked_element: int
    j_domains: np.ndarray


@dataclass
class BenchmarkOutput:
    config: CaseConfig
    result: CaseResult
    profile: LineProfile | None = None
    history: list = field(default_factory=list)
    files: list = field(default_factory=list)


def _tracked_element(mesh: Mesh, crack: CrackGeometry, half: bool, h: float) -> int:
    """Element at the tip for distortion tracking (above the ligament for half models)."""
    p = crack.tip + (1e-3 * h * (crack.tangent + crack.normal) if half else 0.0)
    e = mesh.find_element(p)
    if e < 0:
        raise ValueError("crack tip lies outside the mesh")
    return e


def plate_mesh(cfg: CaseConfig) -> Mesh:
    g, m = cfg.geometry, cfg.mesh
    a, h = g.crack_length, m.tip_size
    if g.half:
        spec = GradingSpec(focus=(a, 0.0), tip_size=h, core=m.core, ratio_bound=m.ratio_bound, half=True)
        return generate_structured_mesh(g.width, g.height / 2, order=m.order, grading=spec)
    spec = GradingSpec(focus=(a + g.tip_offset * h, 0.0), tip_size=h, core=m.core, ratio_bound=m.ratio_bound)
    return generate_structured_mesh(g.width, g.height, order=m.order, grading=spec, origin=(0.0, -g.height / 2))


def build_plate(cfg: CaseConfig) -> CaseSetup:
    """Edge-cracked plate under prescribed end displacement U (full or half model)."""
    g = cfg.geometry
    if g.half and cfg.enrichment.strategy != "none":
        raise ConfigError("enrichment: enriched plate runs need the full model (geometry.half = false)")
    try:
        mesh = plate_mesh(cfg)
    except ValueError as exc:
        raise ConfigError(f"mesh: {exc}") from exc
    crack = CrackGeometry.straight((0.0, 0.0), (g.crack_length, 0.0))
    disc = build_discretization(mesh, crack, cfg.enrichment, bbar=cfg.mesh.bbar)
    U = cfg.load.U
    top = mesh.node_set("top")
    right = mesh.node_set("right")
    parts = [DirichletBC(2 * top + 1, np.full(len(top), U))]
    if g.half:
        lig = mesh.node_set("ligament")
        parts.append(DirichletBC(2 * lig + 1, np.zeros(len(lig))))
    else:
        bottom = mesh.node_set("bottom")
        parts.append(DirichletBC(2 * bottom + 1, np.full(len(bottom), -U)))
    # single horizontal restraint on the right edge at the crack plane (nearest node)
    pin = right[np.argmin(np.abs(mesh.nodes[right, 1]))]
    parts.append(DirichletBC([2 * pin], [0.0]))
    problem = Problem(
        disc,
        cfg.material,
        DirichletBC.combine(*parts),
        LoadSchedule(U, cfg.load.increments),
        cfg.solver,
        half_model=g.half,
    )
    domains = np.array([[0.25, 0.5], [0.5, 1.0], [1.0, 2.0]])
    tracked = _tracked_element(mesh, crack, g.half, cfg.mesh.tip_size)
    return CaseSetup(problem, crack, tracked, domains)


def build_boundary_layer(cfg: CaseConfig) -> CaseSetup:
    """Disc of radius R around the tip loaded by the K-field on its rim.

    The crack runs along the negative x axis to the tip at the origin. Half
    models carry v = 0 on the ligament.
    """
    g, m = cfg.geometry, cfg.mesh
    R = cfg.outer_radius
    if R <= 0:
        raise ConfigError("geometry.R: outer radius must be positive (set R or a material length)")
    if g.half and cfg.enrichment.strategy != "none":
        raise ConfigError("enrichment: enriched boundary-layer runs need the full disc (geometry.half = false)")
    try:
        spec = GradingSpec(focus=(0.0, 0.0), tip_size=m.tip_size, core=m.core, ratio_bound=m.ratio_bound, half=g.half)
        mesh = generate_disc_mesh(R, spec, order=m.order)
    except ValueError as exc:
        raise ConfigError(f"mesh: {exc}") from exc
    crack = CrackGeometry.straight((-R, 0.0), (0.0, 0.0))
    disc = build_discretization(mesh, crack, cfg.enrichment, bbar=cfg.mesh.bbar)
    remote = mesh.node_set("remote")
    x, y = mesh.nodes[remote].T
    ux, uy = kfield_displacement(np.hypot(x, y), np.arctan2(y, x), cfg.k_applied, cfg.material.E, cfg.material.nu)
    parts = [DirichletBC(np.concatenate([2 * remote, 2 * remote + 1]), np.concatenate([ux, uy]))]
    if g.half:
        lig = mesh.node_set("ligament")
        parts.append(DirichletBC(2 * lig + 1, np.zeros(len(lig))))
    problem = Problem(
        disc,
        cfg.material,
        DirichletBC.combine(*parts),
        LoadSchedule(cfg.k_applied, cfg.load.increments),
        cfg.solver,
        half_model=g.half,
    )
    domains = R * np.array([[0.05, 0.1], [0.1, 0.2], [0.2, 0.4]])
    tracked = _tracked_element(mesh, crack, g.half, m.tip_size)
    return CaseSetup(problem, crack, tracked, domains)


def plate_monitor(setup: CaseSetup, cfg: CaseConfig):
    """Per-increment history row: remote strain, J (mean over domains), opening, distortion."""
    H = cfg.geometry.height

    def monitor(result, inc, lam, u, state):
        J = j_integral(result, setup.j_domains, u, state)
        d = element_distortion(result, setup.tracked_element, u)
        return {
            "increment": inc,
            "remote_strain": 2.0 * cfg.load.U * lam / H,
            "J_N_per_mm": float(J.mean()),
            "delta_mm": crack_opening_displacement(result, u),
            "aspect_ratio": d.aspect,
            "taper_x": d.taper,
            "J_domains": J,
            "e2": d.e2,
            "f3": d.f3,
            "f4": d.f4,
        }

    return monitor


def boundary_layer_monitor(setup: CaseSetup, cfg: CaseConfig):
    def monitor(result, inc, lam, u, state):
        J = j_integral(result, setup.j_domains, u, state)
        return {"increment": inc, "load_factor": lam, "K_I": lam * cfg.k_applied, "J_N_per_mm": float(J.mean()), "J_domains": J}

    return monitor


def _radii(cfg: CaseConfig) -> np.ndarray:
    o = cfg.output
    return length_scale(cfg) * np.logspace(np.log10(o.r_min_over_l), np.log10(o.r_max_over_l), o.samples)


def _snapshots(cfg: CaseConfig):
    k = cfg.output.vtk_every
    n = cfg.load.increments
    return tuple(range(k, n + 1, k)) if k > 0 else ()


def _finish(cfg, setup, result, history_rows, out_dir, plot_fn):
    profile = extract_line(result, np.deg2rad(cfg.output.theta_deg), _radii(cfg))
    files = []
    if out_dir is not None:
        requests = [("profile", profile, length_scale(cfg), cfg.material.sigma_y), ("log",)]
        requests += [("vtk", inc) for inc in sorted(result.snapshots)]
        files = write_outputs(result, requests, out_dir)
        if history_rows and "remote_strain" in history_rows[0]:
            files.append(write_rows_csv(history_rows, Path(out_dir) / "history.csv", HISTORY_HEADER))
        elif history_rows:
            files.append(
                write_rows_csv(history_rows, Path(out_dir) / "history.csv", ["increment", "load_factor", "K_I", "J_N_per_mm"])
            )
        if cfg.output.plots:
            files += plot_fn(cfg, profile, history_rows, out_dir)
    return BenchmarkOutput(cfg, result, profile, history_rows, files)


def run_plate(cfg: CaseConfig, out_dir=None, setup: CaseSetup | None = None) -> BenchmarkOutput:
    """Plate benchmark: profile ahead of the tip, J / opening / distortion history."""
    from .plotting import plate_figures

    setup = setup or build_plate(cfg)
    result = run_case(setup.problem, monitor=plate_monitor(setup, cfg), snapshot_increments=_snapshots(cfg))
    return _finish(cfg, setup, result, result.history, out_dir, plate_figures)


def run_boundary_layer(cfg: CaseConfig, out_dir=None, setup: CaseSetup | None = None) -> BenchmarkOutput:
    """Boundary-layer benchmark: sigma_e / sigma_y versus r / l at the configured angle."""
    from .plotting import boundary_layer_figures

    setup = setup or build_boundary_layer(cfg)
    result = run_case(setup.problem, monitor=boundary_layer_monitor(setup, cfg), snapshot_increments=_snapshots(cfg))
    return _finish(cfg, setup, result, result.history, out_dir, boundary_layer_figures)


def strain_path(mode: str, max_strain: float, steps: int) -> np.ndarray:
    """Axial strain targets for the material-point driver."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if mode == "uniaxial":
        return np.linspace(0.0, max_strain, steps + 1)[1:]
    if mode == "cyclic":
        q = steps // 4 or 1
        legs = [np.linspace(0, max_strain, q + 1)[1:], np.linspace(max_strain, -max_strain, 2 * q + 1)[1:], np.linspace(-max_strain, 0, q + 1)[1:]]
        return np.concatenate(legs)
    raise ValueError(f"unknown strain path {mode!r}")


def run_material_point(params: MaterialParams, path, eta_p: float = 0.0, out_dir=None, tol: float = 1e-10):
    """Uniaxial-stress driver: axial strain imposed, lateral strains solved so sigma_22 = sigma_33 = 0.

    Returns rows of (strain, stress, eps_p); writes ``material_point.csv`` when
    ``out_dir`` is given.
    """
    state = GaussPointState.zeros(1)
    state.eta_p[:] = eta_p
    lateral = np.zeros(2)
    rows = []
    prev = prev_step = 0.0
    for target in np.asarray(path, dtype=float):
        d_axial = target - prev
        x = lateral * (d_axial / prev_step if prev_step else 0.0)
        for _ in range(50):
            d = np.array([[d_axial, x[0], x[1], 0.0]])
            new, C = stress_update(d, state, params)
            r = new.stress[0, 1:3]
            if np.max(np.abs(r)) <= tol * max(abs(new.stress[0, 0]), params.sigma_y):
                break
            x -= np.linalg.solve(C[0, 1:3, 1:3], r)
        else:
            raise RuntimeError("material-point lateral equilibrium did not converge")
        lateral, prev_step = x, d_axial
        state = new
        prev = target
        rows.append({"strain": float(target), "stress": float(state.stress[0, 0]), "eps_p": float(state.eps_p[0])})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(rows, out / "material_point.csv", ["strain", "stress", "eps_p"])
    return rows
