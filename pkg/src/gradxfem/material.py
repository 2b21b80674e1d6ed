"""Conventional mechanism-based strain gradient (CMSG) plasticity.

Stresses and strains are carried as 4-component Mandel vectors
``[11, 22, 33, sqrt(2)*12]`` so that tensor contractions are plain dot
products and plane strain keeps the out-of-plane stress explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SQ2 = np.sqrt(2.0)
_I = np.array([1.0, 1.0, 1.0, 0.0])
_IXI = np.outer(_I, _I)
_PDEV = np.eye(4) - _IXI / 3.0
ELASTIC_CUTOFF = 1e-14


@dataclass(frozen=True)
class MaterialParams:
    """Elastic constants, power-law hardening and gradient parameters (MPa, mm)."""

    E: float
    nu: float
    sigma_y: float
    n: float
    l: float = 0.0
    m: float = 20.0
    elastic: bool = False

    def __post_init__(self):
        if not (self.E > 0 and 0 < self.nu < 0.5 and self.sigma_y > 0):
            raise ValueError("require E > 0, 0 < nu < 0.5, sigma_y > 0")
        if self.n < 1 or self.l < 0 or self.m < 5:
            raise ValueError("require n >= 1, l >= 0, m >= 5")
        if not self.E > self.sigma_y:
            raise ValueError("require E > sigma_y")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def bulk(self) -> float:
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))

    @property
    def sigma_ref(self) -> float:
        return self.sigma_y * (self.E / self.sigma_y) ** (1.0 / self.n)

    def elastic_matrix(self) -> np.ndarray:
        return self.bulk * _IXI + 2.0 * self.mu * _PDEV


@dataclass(frozen=True)
class TaylorParams:
    """Taylor dislocation model constants; only feed :func:`intrinsic_length`."""

    alpha: float = 0.5
    b: float = 2.5e-7
    M: float = 3.06
    r_bar: float = 1.90

    def __post_init__(self):
        if not (0.3 <= self.alpha <= 0.5) or self.b <= 0:
            raise ValueError("alpha must lie in [0.3, 0.5] and b > 0")


def j2_mode(params: MaterialParams) -> MaterialParams:
    """Same material with the gradient contribution switched off."""
    return replace(params, l=0.0)


def intrinsic_length(taylor: TaylorParams, mu: float, sigma_ref: float, rounded: bool = False) -> float:
    """Material length l = M^2 r_bar alpha^2 (mu/sigma_ref)^2 b.

    With ``rounded=True`` the prefactor M^2 r_bar is replaced by 18.
    """
    if mu <= 0 or sigma_ref <= 0:
        raise ValueError("mu and sigma_ref must be positive")
    pref = 18.0 if rounded else taylor.M**2 * taylor.r_bar
    return pref * taylor.alpha**2 * (mu / sigma_ref) ** 2 * taylor.b


def ssd_density(eps_p, params: MaterialParams, taylor: TaylorParams):
    """Statistically stored dislocation density recovered from the uniaxial curve."""
    return (params.sigma_ref * hardening_f(eps_p, params) / (taylor.M * taylor.alpha * params.mu * taylor.b)) ** 2


def taylor_flow_stress(rho_s, eta_p, params: MaterialParams, taylor: TaylorParams):
    """sigma_flow = M alpha mu b sqrt(rho_S + r_bar eta^p / b)."""
    return taylor.M * taylor.alpha * params.mu * taylor.b * np.sqrt(rho_s + taylor.r_bar * np.asarray(eta_p) / taylor.b)


def hardening_f(eps_p, params: MaterialParams):
    return (np.asarray(eps_p, dtype=float) + params.sigma_y / params.E) ** (1.0 / params.n)


def flow_stress(eps_p, eta_p, params: MaterialParams):
    f = hardening_f(eps_p, params)
    return params.sigma_ref * np.sqrt(f * f + params.l * np.asarray(eta_p, dtype=float))


def flow_stress_slope(eps_p, eta_p, params: MaterialParams):
    """d sigma_flow / d eps_p at fixed eta_p."""
    f = hardening_f(eps_p, params)
    df = f / (params.n * (np.asarray(eps_p, dtype=float) + params.sigma_y / params.E))
    return params.sigma_ref**2 * f * df / flow_stress(eps_p, eta_p, params)


def deviator(v: np.ndarray) -> np.ndarray:
    return v - (v[..., :3].sum(axis=-1) / 3.0)[..., None] * _I


def von_mises(stress: np.ndarray) -> np.ndarray:
    s = deviator(stress)
    return np.sqrt(1.5 * np.sum(s * s, axis=-1))


def mandel_to_tensor(v: np.ndarray) -> np.ndarray:
    """(..., 4) Mandel vectors to (..., 3, 3) symmetric tensors."""
    t = np.zeros(v.shape[:-1] + (3, 3))
    t[..., 0, 0] = v[..., 0]
    t[..., 1, 1] = v[..., 1]
    t[..., 2, 2] = v[..., 2]
    t[..., 0, 1] = t[..., 1, 0] = v[..., 3] / SQ2
    return t


@dataclass
class GaussPointState:
    """History at a batch of quadrature points (leading axis = point)."""

    stress: np.ndarray
    strain: np.ndarray
    plastic_strain: np.ndarray
    eps_p: np.ndarray
    eta_p: np.ndarray
    energy: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.energy is None:
            self.energy = np.zeros_like(self.eps_p)

    @classmethod
    def zeros(cls, n: int) -> "GaussPointState":
        return cls(np.zeros((n, 4)), np.zeros((n, 4)), np.zeros((n, 4)), np.zeros(n), np.zeros(n))

    def __len__(self):
        return self.eps_p.shape[0]

    def copy(self) -> "GaussPointState":
        return GaussPointState(
            self.stress.copy(),
            self.strain.copy(),
            self.plastic_strain.copy(),
            self.eps_p.copy(),
            self.eta_p.copy(),
            self.energy.copy(),
        )

    def take(self, idx) -> "GaussPointState":
        return GaussPointState(
            self.stress[idx], self.strain[idx], self.plastic_strain[idx], self.eps_p[idx], self.eta_p[idx], self.energy[idx]
        )


def _solve_plastic_increment(q, se_tr, p_n, eta, params: MaterialParams, tol=1e-13, max_iter=100):
    """Backward-Euler root of dp = q * ((se_tr - 3 mu dp) / sigma_flow(p_n + dp))**m.

    Solved in y = ln(dp) with a bracketed Newton iteration; the residual
    G(y) = y - ln q - m ln(se_tr - 3 mu e^y) + m ln sigma_flow(p_n + e^y)
    is strictly increasing, so the root is unique.
    """
    mu3 = 3.0 * params.mu
    m = params.m
    lnq = np.log(q)
    x_max = se_tr / mu3

    def G(y):
        x = np.exp(y)
        return y - lnq - m * np.log(se_tr - mu3 * x) + m * np.log(flow_stress(p_n + x, eta, params))

    def dG(y):
        x = np.exp(y)
        sf = flow_stress(p_n + x, eta, params)
        return 1.0 + x * (mu3 * m / (se_tr - mu3 * x) + m * flow_stress_slope(p_n + x, eta, params) / sf)

    y_top = np.log(x_max) + np.log1p(-1e-14)
    # G(y) >= y - y_elastic, so y_hi is an upper bracket (G -> +inf at y_top)
    y_hi = np.minimum(lnq + m * np.log(se_tr / flow_stress(p_n, eta, params)), y_top)
    # steady flow has sigma_e ~ sigma_flow, i.e. dp ~ q: start there
    y = np.minimum(lnq, y_hi)
    g = G(y)
    y_lo = np.where(g < 0, y, y - 1.0)
    y_hi = np.where(g < 0, y_hi, y)
    g_lo = np.where(g < 0, g, G(y_lo))
    step = 1.0
    for _ in range(200):
        bad = g_lo > 0
        if not bad.any():
            break
        step *= 2.0
        y_hi = np.where(bad, y_lo, y_hi)
        y_lo = np.where(bad, y_lo - step, y_lo)
        g_lo = np.where(bad, G(y_lo), g_lo)
    y = np.clip(y, y_lo, y_hi)
    done = np.zeros(y.shape, dtype=bool)
    for _ in range(max_iter):
        g = G(y)
        y_lo = np.where(g < 0, y, y_lo)
        y_hi = np.where(g >= 0, y, y_hi)
        y_new = y - g / dG(y)
        outside = (y_new < y_lo) | (y_new > y_hi) | ~np.isfinite(y_new)
        y_new = np.where(outside, 0.5 * (y_lo + y_hi), y_new)
        dy = np.abs(y_new - y)
        y = np.where(done, y, y_new)
        done |= (dy < tol) | (y_hi - y_lo < tol) | (g == 0)
        if done.all():
            break
    return np.exp(y)


def stress_update(d_strain, state: GaussPointState, params: MaterialParams):
    """Integrate the CMSG viscoplastic law over one strain increment.

    The effective plastic strain rate is eps_dot * (sigma_e / sigma_flow)**m
    with eps_dot the effective deviatoric rate of the increment itself, so
    the update is rate independent. ``state.eta_p`` is held fixed.

    Returns the new state and the consistent tangent (n, 4, 4).
    """
    d_strain = np.asarray(d_strain, dtype=float)
    if not np.all(np.isfinite(d_strain)):
        raise FloatingPointError("non-finite strain increment")
    mu, K = params.mu, params.bulk
    n = d_strain.shape[0]

    de = deviator(d_strain)
    q = np.sqrt(2.0 / 3.0 * np.sum(de * de, axis=1))
    sig_tr = state.stress + K * d_strain[:, :3].sum(axis=1)[:, None] * _I + 2.0 * mu * de
    s_tr = deviator(sig_tr)
    se_tr = np.sqrt(1.5 * np.sum(s_tr * s_tr, axis=1))

    tangent = np.broadcast_to(params.elastic_matrix(), (n, 4, 4)).copy()
    dp = np.zeros(n)
    active = (q > 0) & (se_tr > 0) if not params.elastic else np.zeros(n, dtype=bool)
    if active.any():
        # overstress power below 1e-14: the plastic increment is far below round-off
        ratio = np.zeros(n)
        ratio[active] = se_tr[active] / flow_stress(state.eps_p[active], state.eta_p[active], params)
        with np.errstate(under="ignore"):
            active &= ratio**params.m > ELASTIC_CUTOFF
    stress = sig_tr.copy()
    d_plastic = np.zeros((n, 4))
    if active.any():
        a = np.flatnonzero(active)
        qa, sea, pa, eta = q[a], se_tr[a], state.eps_p[a], state.eta_p[a]
        dpa = _solve_plastic_increment(qa, sea, pa, eta, params)
        dp[a] = dpa
        Nflow = 1.5 * s_tr[a] / sea[:, None]
        se = sea - 3.0 * mu * dpa
        theta = 1.0 - 3.0 * mu * dpa / sea
        stress[a] = sig_tr[a] - 2.0 * mu * dpa[:, None] * Nflow
        d_plastic[a] = dpa[:, None] * Nflow

        sf = flow_stress(pa + dpa, eta, params)
        hs = flow_stress_slope(pa + dpa, eta, params)
        gprime = 1.0 + params.m * dpa * (3.0 * mu / se + hs / sf)
        A = ((dpa / qa**2)[:, None] * (2.0 / 3.0) * de[a] + (params.m * dpa / se * 2.0 * mu)[:, None] * Nflow) / gprime[:, None]
        Ct = (
            K * _IXI
            + 2.0 * mu * theta[:, None, None] * _PDEV
            + (4.0 * mu * mu * dpa / sea)[:, None, None] * np.einsum("pi,pj->pij", Nflow, Nflow)
            - 2.0 * mu * np.einsum("pi,pj->pij", Nflow, A)
        )
        tangent[a] = Ct

    energy = state.energy + 0.5 * np.sum((state.stress + stress) * d_strain, axis=1)
    new = GaussPointState(
        stress=stress,
        strain=state.strain + d_strain,
        plastic_strain=state.plastic_strain + d_plastic,
        eps_p=state.eps_p + dp,
        eta_p=state.eta_p.copy(),
        energy=energy,
    )
    return new, tangent
