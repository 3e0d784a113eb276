"""
Waiting — stationary densities built from a LoadSolution.

  loads_density        joint density of the c remaining loads when all servers are busy
  virtual_density      density of the virtual waiting time on (0, τ)
  wait_decomposition   atom at 0, mass on (0, τ), mass at or beyond τ
  kt_density           the same density as p·v̂·exp[(cμ·e·γ + T)(τ − v)]·e
  proposition_bridge   p and the per-root coefficient match between the two forms

Plus the full virtual-wait CDF (with its exponential tail beyond τ), the
mean virtual wait, the busy-server distribution and the phase-resolved
basis functions, and the density-grid CSV used by the CLI.
"""
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.integrate import quad
from scipy.special import comb

from core.config import DEFAULT_GRID, DEFAULT_TOLERANCES, QUAD_EPSABS, Tolerances
from core.errors import NumericalError
from core.load_solver import LoadSolution, SpectralData
from core.numerics import exp_moment_ratio, exp_ratio, matrix_exp
from core.phase_type import QueueModel

CSV_HEADER = ("v", "f_spectral", "f_matrix_exp")


def _to_real(values, scale, tol: Tolerances, what: str, clamp: bool = True) -> np.ndarray:
    """
    Drop the imaginary residue of a density and clamp roundoff negatives.

    `scale` is the sum of term magnitudes, so the checks stay relative when
    the terms cancel.

    Raises:
        NumericalError: non-finite values, an imaginary residue above
            tol_real, or a negative value below −tol_negative
    """
    values = np.asarray(values, dtype=complex)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{what}: non-finite value")
    scale = np.maximum(np.asarray(scale, dtype=float), 1.0)
    imag = np.abs(values.imag)
    if np.any(imag > tol.tol_real * scale):
        worst = float((imag / scale).max())
        raise NumericalError(f"{what}: imaginary residue {worst:.3e} exceeds {tol.tol_real:.1e}")
    real = values.real.copy()
    if clamp:
        low = real < -tol.tol_negative * scale
        if np.any(low):
            raise NumericalError(f"{what}: negative value {real[low].min():.3e}")
        real[real < 0] = 0.0
    return real


def _rise(rates, length) -> np.ndarray:
    """∫_0^L e^{r·s} ds = L·(e^{rL} − 1)/(rL) for every L in `length` and r in `rates`."""
    length = np.asarray(length, dtype=float).reshape(-1)
    return length[:, None] * exp_ratio(-np.outer(length, rates))


# ──────────────────────────────────────────────
# Virtual waiting time
# ──────────────────────────────────────────────
@dataclass(frozen=True)
class VirtualWaitDistribution:
    """
    Law of V = min_i V_i: an atom at 0, the density
    f(v) = Σ_k b_k·c·e^{cη_k(τ−v)} on (0, τ), and mass `tail` on [τ, ∞)
    spread as tail·cμ·e^{−cμ(v−τ)}.

    Coefficients are anchored at τ, so no exponent exceeds cη_kτ for the
    roots with Re η_k > 0.
    """
    atom0: float
    coeff: np.ndarray
    rates: np.ndarray
    tail: float
    tau: float
    c: int
    mu: float

    @property
    def continuous(self) -> float:
        return float(1.0 - self.atom0 - self.tail)

    def density(self, v, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
        """f(v) for v in (0, τ)."""
        v = np.asarray(v, dtype=float)
        terms = self.coeff[None, :] * self.c * np.exp(np.outer(self.tau - v.reshape(-1), self.rates))
        out = _to_real(terms.sum(axis=1), np.abs(terms).sum(axis=1), tol, "virtual density")
        return out.reshape(v.shape)

    def cdf(self, v, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
        """P(V ≤ v) on the whole real line."""
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1)
        out = np.zeros_like(flat)
        inside = (flat >= 0) & (flat < self.tau)
        if np.any(inside):
            x = flat[inside]
            # ∫_0^x e^{r(τ−u)} du = ∫_0^τ e^{rs} ds − ∫_0^{τ−x} e^{rs} ds
            full = _rise(self.rates, self.tau)
            rest = _rise(self.rates, self.tau - x)
            weight = self.coeff[None, :] * self.c
            terms = weight * (full - rest)
            scale = (np.abs(weight) * (np.abs(full) + np.abs(rest))).sum(axis=1)
            out[inside] = self.atom0 + _to_real(terms.sum(axis=1), scale, tol, "virtual cdf",
                                                clamp=False)
        beyond = flat >= self.tau
        out[beyond] = 1.0 - self.tail * np.exp(-self.c * self.mu * (flat[beyond] - self.tau))
        return out.reshape(v.shape)

    def ccdf(self, v, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
        return 1.0 - self.cdf(v, tol)

    def conditional_cdf(self, v, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
        """P(V ≤ v | 0 < V < τ) for v in [0, τ]."""
        v = np.clip(np.asarray(v, dtype=float), 0.0, self.tau)
        return (self.cdf(v, tol) - self.atom0) / self.continuous

    def mean(self) -> float:
        """E[V] = ∫_0^τ v f(v) dv + tail·(τ + 1/(cμ))."""
        # ∫_0^τ v·e^{r(τ−v)} dv = τ²·∫_0^1 (1 − t)·e^{rτt} dt
        x = -self.rates * self.tau
        inner = np.sum(self.coeff * self.c * self.tau**2 * (exp_ratio(x) - exp_moment_ratio(x)))
        return float(inner.real + self.tail * (self.tau + 1.0 / (self.c * self.mu)))


def wait_decomposition(sol: LoadSolution, tol: Tolerances = DEFAULT_TOLERANCES
                       ) -> tuple[float, float, float]:
    """
    (atom0, continuous, tail) with b_k = δ_k·e^{−cη_kτ}·y_c^k·e and
      atom0      = Σ_k δ_k Σ_{i<c} C(c,i)·y_i^k·e
      continuous = Σ_k b_k·(e^{cη_kτ} − 1)/η_k
      tail       = Σ_k b_k/μ
    """
    model = sol.model
    c, mu, tau = model.c, model.mu, model.tau
    level_sums = sol.Y.sum(axis=2)
    binom = np.array([comb(c, i, exact=True) for i in range(c)], dtype=float)
    b = sol.boundary_mass
    atom_terms = sol.delta * (binom @ level_sums[:c])
    cont_terms = b * c * _rise(c * sol.spectral.eta, tau)[0]
    tail_terms = b / mu
    parts = []
    for name, terms in (("atom", atom_terms), ("continuous mass", cont_terms),
                        ("tail mass", tail_terms)):
        parts.append(float(_to_real(terms.sum(), np.abs(terms).sum(), tol, name, clamp=False)))
    atom0, continuous, tail = parts
    for name, value in zip(("atom0", "continuous", "tail"), parts):
        if value < -tol.tol_negative or value > 1 + tol.tol_negative:
            raise NumericalError(f"{name} = {value:.6g} is not a probability")
    return atom0, continuous, tail


def virtual_wait_distribution(sol: LoadSolution,
                              tol: Tolerances = DEFAULT_TOLERANCES) -> VirtualWaitDistribution:
    atom0, _, tail = wait_decomposition(sol, tol)
    model = sol.model
    return VirtualWaitDistribution(
        atom0=min(max(atom0, 0.0), 1.0),
        coeff=sol.boundary_mass.copy(),
        rates=model.c * sol.spectral.eta,
        tail=min(max(tail, 0.0), 1.0),
        tau=model.tau, c=model.c, mu=model.mu)


def virtual_density(sol: LoadSolution, v, tol: Tolerances = DEFAULT_TOLERANCES):
    """
    Virtual waiting-time density Σ_k b_k·c·e^{cη_k(τ−v)} on the open interval (0, τ).

    Raises:
        ValueError: any v outside (0, τ)
    """
    arr = np.asarray(v, dtype=float)
    if np.any(arr <= 0) or np.any(arr >= sol.model.tau):
        raise ValueError(f"virtual_density needs 0 < v < tau = {sol.model.tau}")
    model = sol.model
    terms = (sol.boundary_mass[None, :] * model.c
             * np.exp(np.outer(model.tau - arr.reshape(-1), model.c * sol.spectral.eta)))
    out = _to_real(terms.sum(axis=1), np.abs(terms).sum(axis=1), tol, "virtual density")
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def continuous_mass_quadrature(sol: LoadSolution, tol: Tolerances = DEFAULT_TOLERANCES
                               ) -> tuple[float, float]:
    """Adaptive quadrature of f over (0, τ); returns (integral, error estimate)."""
    tau = sol.model.tau
    value, err = quad(lambda x: virtual_density(sol, x, tol), 0.0, tau,
                      epsabs=QUAD_EPSABS, epsrel=0.0, limit=200)
    return value, err


def mean_virtual_wait(sol: LoadSolution, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    return virtual_wait_distribution(sol, tol).mean()


# ──────────────────────────────────────────────
# Remaining loads
# ──────────────────────────────────────────────
def _check_loads(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"expected {n} load coordinates, got {v.shape[0]}")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("load coordinates must be positive and finite")
    return v


def loads_density(sol: LoadSolution, v, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """
    Joint density of (V_1, …, V_c) with all servers busy:
    μ^{c−1}·exp(−μΣv + cμ·s)·Σ_k b_k·exp(cη_k(τ − s)), s = τ ∧ min v.
    """
    model = sol.model
    c, mu = model.c, model.mu
    v = _check_loads(v, c)
    s = min(v.min(), model.tau)
    # −μΣv + cμs ≤ 0 and τ − s ≥ 0, combined per term before exponentiating
    expo = -mu * v.sum() + c * mu * s + c * sol.spectral.eta * (model.tau - s)
    terms = mu ** (c - 1) * sol.boundary_mass * np.exp(expo)
    return float(_to_real(terms.sum(), np.abs(terms).sum(), tol, "loads density"))


def basis_function(sol: LoadSolution, k: int, v, boundary: bool = False) -> np.ndarray:
    """
    Phase row vector of root k's stationary basis function with len(v) busy servers:
      no busy server       y_0^k
      0 < i < c            μ^i·y_i^k·e^{−μΣv}
      all c busy           μ^{c−1}·y_c^k·e^{−μΣv + c(μ−η_k)(τ ∧ min v)}

    With `boundary`, the all-busy vector is multiplied by e^{−cη_kτ} so it
    pairs with δ'_k instead of δ_k.
    """
    model = sol.model
    c, mu = model.c, model.mu
    v = np.asarray(v, dtype=float).reshape(-1)
    i = v.shape[0]
    if i > c:
        raise ValueError(f"at most {c} busy servers, got {i} loads")
    if i == 0:
        return sol.Y[0, k].copy()
    v = _check_loads(v, i)
    if i < c:
        return mu ** i * sol.Y[i, k] * np.exp(-mu * v.sum())
    s = min(v.min(), model.tau)
    eta_k = sol.spectral.eta[k]
    shift = c * eta_k * (model.tau - s) if boundary else -c * eta_k * s
    return mu ** (c - 1) * sol.Y[c, k] * np.exp(-mu * v.sum() + c * mu * s + shift)


def phase_load_density(sol: LoadSolution, v, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Σ_k δ_k·basis_function(k, v): the load density split by arrival phase."""
    busy = np.asarray(v, dtype=float).reshape(-1).shape[0] == sol.model.c
    coeff = sol.delta_tau if busy else sol.delta
    terms = np.array([coeff[k] * basis_function(sol, k, v, boundary=busy)
                      for k in range(sol.spectral.m)])
    return _to_real(terms.sum(axis=0), np.abs(terms).sum(axis=0), tol, "phase load density",
                    clamp=False)


def busy_servers(sol: LoadSolution, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """P(i servers busy), i = 0..c; the last entry is continuous + tail."""
    c = sol.model.c
    level_sums = sol.Y.sum(axis=2)
    out = np.zeros(c + 1)
    for i in range(c):
        terms = sol.delta * comb(c, i, exact=True) * level_sums[i]
        out[i] = _to_real(terms.sum(), np.abs(terms).sum(), tol, f"level {i} mass", clamp=False)
    _, continuous, tail = wait_decomposition(sol, tol)
    out[c] = continuous + tail
    return out


# ──────────────────────────────────────────────
# Matrix-exponential form
# ──────────────────────────────────────────────
@dataclass(frozen=True)
class KTRepresentation:
    """v̂ = γ(cμI − T)⁻¹ / γ(cμI − T)⁻¹e and the constant p."""
    v_hat: np.ndarray
    p: float

    def __post_init__(self):
        if abs(self.v_hat.sum() - 1.0) > 1e-12:
            raise NumericalError(f"v_hat does not sum to 1 ({self.v_hat.sum():.15g})")
        if not self.p > 0:
            raise NumericalError(f"p must be positive, got {self.p}")


def kt_direction(model: QueueModel) -> np.ndarray:
    ph = model.ph
    row = scipy.linalg.solve((model.c * model.mu * np.eye(ph.m) - ph.T).T, ph.gamma)
    return row / row.sum()


def kt_representation(model: QueueModel, p: float) -> KTRepresentation:
    return KTRepresentation(v_hat=kt_direction(model), p=float(p))


def kt_density(model: QueueModel, rep: KTRepresentation, v):
    """p·v̂·exp[(cμ·e·γ + T)(τ − v)]·e for v in (0, τ)."""
    arr = np.asarray(v, dtype=float)
    if np.any(arr <= 0) or np.any(arr >= model.tau):
        raise ValueError(f"kt_density needs 0 < v < tau = {model.tau}")
    ph = model.ph
    A = model.c * model.mu * np.outer(np.ones(ph.m), ph.gamma) + ph.T
    ones = np.ones(ph.m)
    out = np.array([rep.p * rep.v_hat @ matrix_exp(A * (model.tau - x)) @ ones
                    for x in arr.reshape(-1)])
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def proposition_bridge(model: QueueModel, sol: LoadSolution, s: SpectralData,
                       tol: Tolerances = DEFAULT_TOLERANCES, strict: bool = True
                       ) -> tuple[float, dict]:
    """
    p = c·Σ_k b_k with b_k = δ_k·e^{−cη_kτ}·y_c^k·e, then check
    b_k = p·(v̂F)_k·(F⁻¹e)_k / c for every root.

    Returns:
        (p, {"residual": max relative gap, "per_root": [...], "status": ...})

    Raises:
        NumericalError: residual above tol_bridge while strict
    """
    c = model.c
    b = sol.boundary_mass
    terms = c * b
    p = float(_to_real(terms.sum(), np.abs(terms).sum(), tol, "normalizing constant p",
                       clamp=False))
    v_hat = kt_direction(model)
    rhs = p * (v_hat @ s.F) * (s.Finv @ np.ones(s.m)) / c
    scale = np.abs(b).max() or 1.0
    per_root = np.abs(b - rhs) / scale
    residual = float(per_root.max()) if np.all(np.isfinite(per_root)) else float("inf")
    status = "pass" if residual <= tol.tol_bridge else "fail"
    report = {"p": p, "residual": residual, "per_root": per_root.tolist(), "status": status}
    if status == "fail":
        msg = f"coefficient bridge residual {residual:.3e} exceeds {tol.tol_bridge:.1e}"
        if strict:
            raise NumericalError(msg)
        print(f"WARNING: {msg}", file=sys.stderr, flush=True)
    return p, report


# ──────────────────────────────────────────────
# Density grid
# ──────────────────────────────────────────────
def density_grid(tau: float, n: int = DEFAULT_GRID) -> np.ndarray:
    """n interior points of (0, τ), evenly spaced."""
    if n < 2:
        raise ValueError(f"grid size must be >= 2, got {n}")
    return np.linspace(0.0, tau, n + 2)[1:-1]


def density_table(sol: LoadSolution, n: int = DEFAULT_GRID, tol: Tolerances = DEFAULT_TOLERANCES,
                  strict: bool = True) -> dict:
    """
    Both density forms on the grid plus the representation gap
    max|f − g| / max f.
    """
    model = sol.model
    v = density_grid(model.tau, n)
    p, bridge = proposition_bridge(model, sol, sol.spectral, tol, strict=strict)
    f = virtual_density(sol, v, tol)
    g = kt_density(model, kt_representation(model, p), v)
    peak = f.max() if f.max() > 0 else 1.0
    gap = float(np.abs(f - g).max() / peak)
    status = "pass" if gap <= tol.tol_bridge else "fail"
    if status == "fail":
        msg = f"representation gap {gap:.3e} exceeds {tol.tol_bridge:.1e}"
        if strict:
            raise NumericalError(msg)
        print(f"WARNING: {msg}", file=sys.stderr, flush=True)
    return {"v": v, "f_spectral": f, "f_matrix_exp": g, "p": p,
            "bridge": bridge, "representation_gap": gap, "status": status}


def write_density_csv(path, v, f_spectral, f_matrix_exp) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in zip(v, f_spectral, f_matrix_exp):
            writer.writerow([f"{x:.17g}" for x in row])
    return path


def read_density_csv(path) -> dict:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected density header {header}")
        rows = np.array([[float(x) for x in row] for row in reader if row])
    return {name: rows[:, j] for j, name in enumerate(CSV_HEADER)}
