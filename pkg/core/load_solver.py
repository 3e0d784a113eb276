"""
LoadSolver — stationary joint density of the remaining server loads.

Pipeline for a QueueModel:
  1. compute_spectral   roots η_k of (cμ·e·γ + T)/c, spectrum κ_ℓ of T + t·γ,
                        matrices B, D, E, F, F⁻¹
  2. check_assumptions  distinct roots, no root on the spectrum of T/c,
                        irreducible T + t·γ with distinct eigenvalues
  3. compute_R / solve_y  per root: R_k, then the level vectors y_0^k … y_c^k
  4. solve_delta_direct / solve_delta_phi  the mixing coefficients δ by the
                        stacked QR system and by the boundary nullvector φ

The two δ routes are always both computed; the QR route is authoritative and
their gap is reported. Every rank condition and algebraic identity the
construction relies on is evaluated into the diagnostics report.
"""
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import comb

from core.config import (DEFAULT_TOLERANCES, Tolerances, margin_status, residual_status,
                         worst_status)
from core.errors import AssumptionViolation, NumericalError
from core.numerics import (eig_general, exp_ratio, left_nullvector, qr_solve_stacked,
                           rank_is_m_minus_1, relative_gap, singular_report, solve_left,
                           sort_order, sort_spectrum)
from core.phase_type import QueueModel, model_to_dict

CLAUSE_DISTINCT = "Assumption 1 i (distinct roots)"
CLAUSE_OFF_T = "Assumption 1 i (roots off spectrum of T/c)"
CLAUSE_IRREDUCIBLE = "Assumption 1 ii (irreducible)"
CLAUSE_KAPPA = "Assumption 1 ii (distinct eigenvalues)"
CLAUSE_KAPPA_STABLE = "Assumption 1 ii (negative spectrum)"
MARGIN_CLAUSES = (CLAUSE_DISTINCT, CLAUSE_OFF_T, CLAUSE_KAPPA, CLAUSE_KAPPA_STABLE)

C1_READING = "x0 read as y0"


@dataclass(frozen=True)
class SpectralData:
    """Roots η, generator spectrum κ and the matrices built from them."""
    eta: np.ndarray
    kappa: np.ndarray
    B: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    Finv: np.ndarray
    kappa_zero_residual: float = 0.0

    @property
    def m(self) -> int:
        return self.eta.shape[0]


@dataclass
class LoadSolution:
    """
    Solved model: R_k, level vectors Y[i, k] = y_i^k, coefficients δ.

    delta_tau holds δ'_k = δ_k·e^{−cη_kτ}, the coefficients read at the
    patience boundary. Busy-level quantities are evaluated from δ' so that
    long patience never forms e^{c|η|τ}.
    """
    model: QueueModel
    spectral: SpectralData
    R: np.ndarray
    Y: np.ndarray
    delta: np.ndarray
    delta_phi: np.ndarray = None
    delta_tau: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.delta_tau is None:
            z = self.model.c * self.spectral.eta * self.model.tau
            with np.errstate(over="ignore", invalid="ignore"):
                self.delta_tau = self.delta * np.exp(-z)

    @property
    def boundary_mass(self) -> np.ndarray:
        """b_k = δ'_k·(y_c^k·e); the busy-level density is Σ_k b_k·c·e^{cη_k(τ−v)}."""
        return self.delta_tau * self.Y[self.model.c].sum(axis=1)


def _item(name: str, value, status: str, limit=None, **extra) -> dict:
    item = {"name": name, "value": value, "status": status}
    if limit is not None:
        item["limit"] = limit
    item.update(extra)
    return item


def _generator(model: QueueModel) -> np.ndarray:
    """T + t·γ, the generator of the phase process between arrivals."""
    ph = model.ph
    return ph.T + np.outer(ph.exit, ph.gamma)


def _root_matrix(model: QueueModel) -> np.ndarray:
    """cμ·e·γ + T, whose eigenvalues are c·η_k."""
    ph = model.ph
    return model.c * model.mu * np.outer(np.ones(ph.m), ph.gamma) + ph.T


# ──────────────────────────────────────────────
# 1. Spectral data
# ──────────────────────────────────────────────
def compute_spectral(model: QueueModel, tol: Tolerances = DEFAULT_TOLERANCES,
                     strict: bool = True, verbose: bool = False) -> SpectralData:
    """
    Compute η, κ and the matrices B, D, E, F, F⁻¹.

    Args:
        model: validated queue model
        tol: tolerance bundle
        strict: raise AssumptionViolation when check_assumptions fails
        verbose: print DEBUG progress lines

    Raises:
        AssumptionViolation: a clause fails and strict is set
        NumericalError: eigen-decomposition failure or no zero eigenvalue of T + t·γ
    """
    c, mu, tau = model.c, model.mu, model.tau
    roots = sort_spectrum(eig_general(_root_matrix(model), tol.tol_eig))
    eta = roots.values / c
    F = roots.right_vectors
    if verbose:
        print(f"DEBUG: roots eta = {np.array2string(eta, precision=6)}", flush=True)

    gen = _generator(model)
    gen_spec = eig_general(gen, tol.tol_eig)
    scale = max(np.linalg.norm(gen, 2), np.finfo(float).tiny)
    zero_idx = int(np.argmin(np.abs(gen_spec.values)))
    kappa_zero_residual = float(abs(gen_spec.values[zero_idx]) / scale)
    if kappa_zero_residual > tol.tol_kappa_zero:
        raise NumericalError(f"T + t·γ has no numerically zero eigenvalue "
                             f"(smallest |κ|/‖·‖ = {kappa_zero_residual:.3e})")
    rest = np.array([i for i in range(gen_spec.values.shape[0]) if i != zero_idx], dtype=int)
    rest = rest[sort_order(gen_spec.values[rest])]
    order = np.concatenate([[zero_idx], rest]).astype(int)
    kappa = gen_spec.values[order].copy()
    kappa[0] = 0.0
    B = gen_spec.left_vectors[order, :]
    if verbose:
        print(f"DEBUG: kappa = {np.array2string(kappa, precision=6)}", flush=True)

    D = np.diag(1.0 / (c * mu - kappa))
    # entries overflow for long patience; the δ solve works with δ·E instead
    with np.errstate(over="ignore"):
        E = np.diag(np.exp(-tau * c * eta))
    try:
        Finv = scipy.linalg.inv(F)
    except (np.linalg.LinAlgError, ValueError):
        Finv = np.full_like(F, np.nan)

    s = SpectralData(eta=eta, kappa=kappa, B=B, D=D, E=E, F=F, Finv=Finv,
                     kappa_zero_residual=kappa_zero_residual)

    report = check_assumptions(model, s, tol)
    failed = [it["name"] for it in report["items"] if it["status"] == "fail"]
    if failed and strict:
        for name in failed:
            print(f"ERROR: {name} failed", file=sys.stderr, flush=True)
        raise AssumptionViolation(failed, report)
    for it in report["items"]:
        if it["status"] == "warn":
            print(f"WARNING: {it['name']} near violation (margin {it['value']:.3e})",
                  file=sys.stderr, flush=True)
    return s


def check_assumptions(model: QueueModel, s: SpectralData,
                      tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """
    Margins of the spectral assumptions and the root/exit relation.

    Margins are relative distances: ≤ margin_fail fails, ≤ margin_warn warns.
    Clauses that are vacuous for m = 1 report a margin of None and pass.

    Returns:
        {"items": [...], "status": "pass" | "warn" | "fail"}
    """
    c = model.c
    ph = model.ph
    m = ph.m
    items = []

    eta = s.eta
    eta_scale = np.abs(eta).max() or 1.0
    if m > 1:
        gaps = np.abs(eta[:, None] - eta[None, :]) + np.diag(np.full(m, np.inf))
        distinct = float(gaps.min() / eta_scale)
    else:
        distinct = None
    items.append(_item(CLAUSE_DISTINCT, distinct, margin_status(distinct, tol)))

    t_over_c = scipy.linalg.eigvals(ph.T) / c
    off_scale = max(eta_scale, np.abs(t_over_c).max())
    off_t = float(np.abs(eta[:, None] - t_over_c[None, :]).min() / off_scale)
    items.append(_item(CLAUSE_OFF_T, off_t, margin_status(off_t, tol)))

    gen = _generator(model)
    adjacency = (gen > 0) & ~np.eye(m, dtype=bool)
    n_components, _ = connected_components(csr_matrix(adjacency.astype(float)),
                                           directed=True, connection="strong")
    items.append(_item(CLAUSE_IRREDUCIBLE, int(n_components),
                       "pass" if n_components == 1 else "fail"))

    kappa = s.kappa
    if m > 1:
        k_scale = np.abs(kappa).max() or 1.0
        gaps = np.abs(kappa[:, None] - kappa[None, :]) + np.diag(np.full(m, np.inf))
        k_distinct = float(gaps.min() / k_scale)
        # Re κ_ℓ < 0 for ℓ ≥ 2, as a margin
        k_stable = float(-kappa[1:].real.max() / k_scale)
    else:
        k_distinct = None
        k_stable = None
    items.append(_item(CLAUSE_KAPPA, k_distinct, margin_status(k_distinct, tol)))
    items.append(_item(CLAUSE_KAPPA_STABLE, k_stable, margin_status(k_stable, tol)))

    items.append(_item("zero generator eigenvalue", s.kappa_zero_residual,
                       "pass" if s.kappa_zero_residual <= tol.tol_kappa_zero else "fail",
                       limit=tol.tol_kappa_zero))

    rel = root_exit_residual(model, s)
    items.append(_item("root/exit relation", rel,
                       "pass" if rel <= tol.tol_identity else "fail", limit=tol.tol_identity))

    return {"items": _downgrade(items), "status": worst_status(it["status"] for it in items)}


def _downgrade(items: list[dict]) -> list[dict]:
    """With an assumption margin in the warn band, residual failures only warn."""
    degraded = any(it["status"] == "warn" for it in items if it["name"] in MARGIN_CLAUSES)
    if degraded:
        for it in items:
            if it["name"] not in MARGIN_CLAUSES and it["name"] != CLAUSE_IRREDUCIBLE \
                    and it["status"] == "fail":
                it["status"] = "warn"
                it["downgraded"] = True
    return items


def root_exit_residual(model: QueueModel, s: SpectralData) -> float:
    """max_k |(μ − η_k)/μ − γ(cη_k I − T)⁻¹ t|; inf when cη_k I − T is singular."""
    ph = model.ph
    worst = 0.0
    for eta_k in s.eta:
        A = model.c * eta_k * np.eye(ph.m) - ph.T
        try:
            x = scipy.linalg.solve(A, ph.exit.astype(complex))
        except (np.linalg.LinAlgError, ValueError):
            return float("inf")
        lhs = (model.mu - eta_k) / model.mu
        worst = max(worst, float(abs(lhs - ph.gamma @ x)))
    return worst


# ──────────────────────────────────────────────
# 2. R_k and the level vectors
# ──────────────────────────────────────────────
def compute_R(model: QueueModel, s: SpectralData, k: int) -> np.ndarray:
    """R_k = t·γ·(cη_k I − T)⁻¹, a rank-one m×m matrix."""
    ph = model.ph
    A = model.c * s.eta[k] * np.eye(ph.m) - ph.T
    try:
        row = solve_left(ph.gamma.astype(complex), A)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"cη_{k + 1}·I − T is singular: {e}") from e
    return np.outer(ph.exit, row)


def top_level_matrix(model: QueueModel, R_k: np.ndarray) -> np.ndarray:
    """(c−1)μI − (c−1)μ·e·γ − T − cμR_k, whose left nullvector is y_{c−1}^k."""
    ph = model.ph
    c, mu = model.c, model.mu
    m = ph.m
    return ((c - 1) * mu * (np.eye(m) - np.outer(np.ones(m), ph.gamma))
            - ph.T - c * mu * R_k)


def _top_scale(model: QueueModel, R_k: np.ndarray) -> float:
    return max(np.linalg.norm(model.ph.T, 2), (model.c - 1) * model.mu,
               model.c * model.mu * np.linalg.norm(R_k, 2))


def solve_y(model: QueueModel, s: SpectralData, tol: Tolerances = DEFAULT_TOLERANCES,
            R: np.ndarray = None) -> np.ndarray:
    """
    Level vectors for every root.

    Returns:
        complex array Y of shape (c+1, m, m) with Y[i, k] = y_i^k

    Raises:
        NumericalError: the top-level matrix does not have nullity one, or a
            lower-level matrix iμ(I − e·γ) − T is singular
    """
    ph = model.ph
    c, mu = model.c, model.mu
    m = ph.m
    if R is None:
        R = np.array([compute_R(model, s, k) for k in range(m)])
    Y = np.zeros((c + 1, m, m), dtype=complex)
    eye = np.eye(m)
    e_gamma = np.outer(np.ones(m), ph.gamma)
    for k in range(m):
        M = top_level_matrix(model, R[k])
        try:
            top = left_nullvector(M, tol.tol_zero, scale=_top_scale(model, R[k]))
        except NumericalError as e:
            raise NumericalError(f"level vector y_{c - 1} for root {k + 1}: {e}") from e
        Y[c - 1, k] = top
        # c = 1 reads y_1 = cμ·x_0·R with x_0 = y_0 = y_{c-1}
        Y[c, k] = c * mu * top @ R[k]
        for i in range(c - 2, 0, -1):
            A = i * mu * (eye - e_gamma) - ph.T
            try:
                Y[i, k] = (c - i) * mu * solve_left(Y[i + 1, k], A)
            except (np.linalg.LinAlgError, ValueError) as e:
                raise NumericalError(f"level matrix {i}μ(I − eγ) − T singular "
                                     f"for root {k + 1}") from e
        if c > 1:
            Y[0, k] = -c * mu * solve_left(Y[1, k], ph.T.astype(complex))
    return Y


# ──────────────────────────────────────────────
# 3. Mixing coefficients δ
# ──────────────────────────────────────────────
def resolvent(s: SpectralData) -> np.ndarray:
    """B⁻¹·D·B, which equals (cμI − T − t·γ)⁻¹ for any row scaling of B."""
    return scipy.linalg.solve(s.B, s.D @ s.B)


def boundary_matrix(model: QueueModel, s: SpectralData) -> np.ndarray:
    """N = cμ·t·γ·B⁻¹DB − (c−1)μI + (c−1)μ·e·γ + T; N·e = 0."""
    ph = model.ph
    c, mu = model.c, model.mu
    m = ph.m
    return (c * mu * np.outer(ph.exit, ph.gamma) @ resolvent(s)
            - (c - 1) * mu * (np.eye(m) - np.outer(np.ones(m), ph.gamma)) + ph.T)


def continuous_factor(model: QueueModel, eta, x: float) -> np.ndarray:
    """(1 − e^{−cηx})/η, finite as η → 0."""
    c = model.c
    return c * x * exp_ratio(c * np.asarray(eta) * x)


def _lower_level_sums(model: QueueModel, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Σ_{i<c} C(c,i)·y_i^k·e, y_c^k·e) per root."""
    c = model.c
    level_sums = Y.sum(axis=2)                       # (c+1, m)
    binom = np.array([comb(c, i, exact=True) for i in range(c)], dtype=float)
    return binom @ level_sums[:c], level_sums[c]


def normalization_weights(model: QueueModel, s: SpectralData, Y: np.ndarray) -> np.ndarray:
    """
    w_k such that the total probability mass is Σ δ_k w_k:
    Σ_{i<c} C(c,i) y_i^k e + y_c^k e [e^{−cη_kτ}/μ + (1 − e^{−cη_kτ})/η_k].
    """
    mu, tau = model.mu, model.tau
    lower, top = _lower_level_sums(model, Y)
    decay = np.exp(-model.c * s.eta * tau)
    return lower + top * (decay / mu + continuous_factor(model, s.eta, tau))


def boundary_weights(model: QueueModel, s: SpectralData, Y: np.ndarray) -> np.ndarray:
    """
    w'_k = w_k·e^{cη_kτ}, so the total mass is Σ δ'_k w'_k:
    Σ_{i<c} C(c,i) y_i^k e·e^{cη_kτ} + y_c^k e [1/μ + (e^{cη_kτ} − 1)/η_k].

    Raises:
        NumericalError: e^{cη_kτ} leaves the double range
    """
    c, mu, tau = model.c, model.mu, model.tau
    lower, top = _lower_level_sums(model, Y)
    z = c * s.eta * tau
    with np.errstate(over="ignore", invalid="ignore"):
        w = lower * np.exp(z) + top * (1.0 / mu + c * tau * exp_ratio(-z))
    if not np.all(np.isfinite(w)):
        raise NumericalError(f"mass weights overflow at tau = {tau} "
                             f"(largest c·η·τ = {float(z.real.max()):.1f})")
    return w


def _from_boundary(model: QueueModel, s: SpectralData, delta_tau: np.ndarray) -> np.ndarray:
    """δ = δ'·e^{cητ}; entries for roots with Re η < 0 may underflow to zero."""
    with np.errstate(over="ignore", invalid="ignore"):
        delta = delta_tau * np.exp(model.c * s.eta * model.tau)
    if not np.all(np.isfinite(delta)):
        raise NumericalError(f"δ overflows at tau = {model.tau}")
    return delta


def _balance_residual(delta: np.ndarray, H: np.ndarray) -> float:
    nh = np.linalg.norm(H, 2)
    nd = np.linalg.norm(delta)
    if nh == 0 or nd == 0:
        return 0.0
    return float(np.linalg.norm(delta @ H) / (nd * nh))


def _unit_mass(delta_tau: np.ndarray, w: np.ndarray) -> np.ndarray:
    mass = delta_tau @ w
    if mass == 0 or not np.isfinite(mass):
        raise NumericalError(f"cannot normalize δ: total mass {mass}")
    return delta_tau / mass


def solve_delta_direct(model: QueueModel, s: SpectralData, Y: np.ndarray,
                       tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[np.ndarray, dict]:
    """
    δ from δ·E·Y_{c−1}·N = 0 plus unit total mass, solved in δ' = δ·E by
    pivoted QR on the stacked system [ (Y_{c−1}·N)ᵀ ; ω ] with right-hand
    side e_{m+1}.

    ω_k is the mass weight w'_k rescaled by e^{−max(Re cη_kτ, 0)}, so every
    column of the stacked matrix stays O(1) however long the patience; the
    QR solution fixes the direction of δ' and δ'·w' = 1 fixes its scale.

    Returns:
        (delta, {"balance": relative row residual, "normalization": |δ'·w' − 1|,
                 "delta_tau": δ'})
    """
    m = s.m
    H = Y[model.c - 1] @ boundary_matrix(model, s)
    w = boundary_weights(model, s, Y)
    z = model.c * s.eta * model.tau
    omega = w * np.exp(-np.maximum(z.real, 0.0))
    A = np.vstack([H.T, omega[None, :]])
    b = np.zeros(m + 1, dtype=complex)
    b[m] = 1.0
    delta_tau = _unit_mass(qr_solve_stacked(A, b, tol.tol_zero), w)
    return _from_boundary(model, s, delta_tau), {
        "balance": _balance_residual(delta_tau, H),
        "normalization": float(abs(delta_tau @ w - 1.0)),
        "delta_tau": delta_tau}


def solve_delta_phi(model: QueueModel, s: SpectralData, Y: np.ndarray,
                    tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[np.ndarray, dict]:
    """
    δ through the real left nullvector φ of N.

    With phi_order "EY", φ = δ·E·Y_{c−1} = δ'·Y_{c−1}; with "YE",
    φ = δ·Y_{c−1}·E and δ = φ·E⁻¹·Y_{c−1}⁻¹. δ' is then scaled to unit mass.

    Raises:
        NumericalError: φ has an imaginary residue above tol_real, or
            Y_{c−1} is numerically singular
    """
    N = boundary_matrix(model, s)
    scale = max(np.linalg.norm(model.ph.T, 2), model.c * model.mu)
    phi = left_nullvector(N, tol.tol_zero, scale=scale)
    imag = float(np.abs(phi.imag).max() / np.abs(phi).max())
    if imag > tol.tol_real:
        raise NumericalError(f"boundary nullvector φ is not real (imaginary residue {imag:.3e})")
    phi = phi.real.astype(complex)

    Yc1 = Y[model.c - 1]
    rep = singular_report(Yc1)
    if rep["ratios"][-1] <= tol.tol_zero:
        raise NumericalError(f"Y_(c-1) is ill-conditioned (σ_min/σ_max = {rep['ratios'][-1]:.3e})")

    if tol.phi_order == "EY":
        delta_tau = solve_left(phi, Yc1)
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            growth = np.exp(model.c * s.eta * model.tau)
        if not np.all(np.isfinite(growth)):
            raise NumericalError(f"YE reading overflows at tau = {model.tau}")
        delta_tau = solve_left(phi * growth, Yc1) / growth

    w = boundary_weights(model, s, Y)
    delta_tau = _unit_mass(delta_tau, w)
    return _from_boundary(model, s, delta_tau), {
        "phi_imag": imag,
        "balance": _balance_residual(delta_tau, Yc1 @ N),
        "normalization": float(abs(delta_tau @ w - 1.0)),
        "delta_tau": delta_tau}


# ──────────────────────────────────────────────
# 4. Full solve with diagnostics
# ──────────────────────────────────────────────
def conjugate_pairing_residual(eta: np.ndarray, delta: np.ndarray, tol: float = 1e-9) -> float:
    """Largest |δ_l − conj(δ_k)| over η_l = conj(η_k), relative to max|δ|."""
    scale = np.abs(delta).max() or 1.0
    eta_scale = np.abs(eta).max() or 1.0
    worst = 0.0
    for k, eta_k in enumerate(eta):
        l = int(np.argmin(np.abs(eta - np.conj(eta_k))))
        if abs(eta[l] - np.conj(eta_k)) > tol * eta_scale:
            continue
        worst = max(worst, float(abs(delta[l] - np.conj(delta[k])) / scale))
    return worst


def _identity_items(model: QueueModel, s: SpectralData, R: np.ndarray, Y: np.ndarray,
                    tol: Tolerances) -> list[dict]:
    ph = model.ph
    c, mu = model.c, model.mu
    m = ph.m
    t = ph.exit
    eye = np.eye(m)
    e_gamma = np.outer(np.ones(m), ph.gamma)
    r_exit = flow = rate = boundary = level = 0.0
    for k in range(m):
        eta_k = s.eta[k]
        yc, yc1 = Y[c, k], Y[c - 1, k]
        r_exit = max(r_exit, relative_gap(R[k] @ t, (mu - eta_k) / mu * t))
        # μ·y_c t = (μ − η)·cμ·y_{c−1} t, multiplied out to avoid dividing by μ − η
        flow = max(flow, relative_gap(mu * (yc @ t), (mu - eta_k) * c * mu * (yc1 @ t)))
        rate = max(rate, relative_gap(yc @ t, c * mu * yc1 @ R[k] @ t))
        boundary = max(boundary, relative_gap(yc @ (c * eta_k * eye - ph.T),
                                              c * mu * (yc1 @ t) * ph.gamma))
        level = max(level, relative_gap(yc, yc1 @ ((c - 1) * mu * (eye - e_gamma) - ph.T)))
    lim = tol.tol_residual
    return [
        _item("R_k exit eigenvector", r_exit, residual_status(r_exit, tol.tol_identity),
              limit=tol.tol_identity),
        _item("exit flow identity", flow, residual_status(flow, lim), limit=lim),
        _item("exit rate identity", rate, residual_status(rate, lim), limit=lim),
        _item("boundary flow identity", boundary, residual_status(boundary, lim), limit=lim),
        _item("level identity", level, residual_status(level, lim), limit=lim),
    ]


def _rank_status(ratio: float, tol: Tolerances, want_zero: bool) -> str:
    """Status of a singular-value ratio that should be zero (want_zero) or clearly nonzero."""
    if want_zero:
        if ratio <= tol.tol_zero:
            return "pass"
        return "warn" if ratio < tol.tol_nonzero else "fail"
    if ratio >= tol.tol_nonzero:
        return "pass"
    return "warn" if ratio > tol.tol_zero else "fail"


def _rank_items(model: QueueModel, s: SpectralData, R: np.ndarray, Y: np.ndarray,
                tol: Tolerances) -> list[dict]:
    items = []
    m = s.m
    worst_min, worst_second, ok_all = 0.0, None, True
    for k in range(m):
        ok, rep = rank_is_m_minus_1(top_level_matrix(model, R[k]), tol.tol_zero,
                                    tol.tol_nonzero, scale=_top_scale(model, R[k]))
        ok_all &= ok
        worst_min = max(worst_min, rep["min_ratio"])
        if rep["second_min_ratio"] is not None:
            worst_second = rep["second_min_ratio"] if worst_second is None \
                else min(worst_second, rep["second_min_ratio"])
    status = "pass" if ok_all else worst_status(
        [_rank_status(worst_min, tol, True)]
        + ([_rank_status(worst_second, tol, False)] if worst_second is not None else []))
    items.append(_item("top-level matrix nullity one", worst_min, status,
                       second_min_ratio=worst_second))

    N = boundary_matrix(model, s)
    scale = max(np.linalg.norm(model.ph.T, 2), model.c * model.mu)
    ok, rep = rank_is_m_minus_1(N, tol.tol_zero, tol.tol_nonzero, scale=scale)
    status = "pass" if ok else worst_status(
        [_rank_status(rep["min_ratio"], tol, True)]
        + ([_rank_status(rep["second_min_ratio"], tol, False)]
           if rep["second_min_ratio"] is not None else []))
    items.append(_item("boundary matrix nullity one", rep["min_ratio"], status,
                       second_min_ratio=rep["second_min_ratio"]))
    items.append(_item("boundary matrix row sums", float(np.abs(N.sum(axis=1)).max() / scale),
                       "pass" if np.abs(N.sum(axis=1)).max() / scale <= tol.tol_residual else "fail",
                       limit=tol.tol_residual))

    y_ratio = float(singular_report(Y[model.c - 1])["ratios"][-1])
    items.append(_item("Y_(c-1) full rank", y_ratio, _rank_status(y_ratio, tol, False)))

    gen = _generator(model)
    direct = scipy.linalg.inv(model.c * model.mu * np.eye(m) - gen)
    gap = relative_gap(resolvent(s), direct)
    items.append(_item("resolvent identity", gap, "pass" if gap <= tol.tol_identity else "fail",
                       limit=tol.tol_identity))
    return items


def solve(model: QueueModel, tol: Tolerances = DEFAULT_TOLERANCES, strict: bool = True,
          verbose: bool = False) -> LoadSolution:
    """
    Run the whole pipeline and attach a diagnostics report.

    Args:
        model: validated queue model
        tol: tolerance bundle (phi_order selects the φ product reading)
        strict: raise on assumption failures and on failed residual checks
        verbose: print DEBUG progress lines

    Returns:
        LoadSolution whose diagnostics hold {"items", "status", "c1_reading"}

    Raises:
        AssumptionViolation: a spectral assumption fails (strict)
        NumericalError: a rank, realness or residual check fails (strict), or
            LAPACK rejects an intermediate matrix
    """
    try:
        return _solve(model, tol, strict, verbose)
    except (np.linalg.LinAlgError, ValueError) as e:
        # the model itself was validated on construction
        raise NumericalError(f"linear algebra failure: {e}") from e


def _solve(model: QueueModel, tol: Tolerances, strict: bool, verbose: bool) -> LoadSolution:
    s = compute_spectral(model, tol, strict=strict, verbose=verbose)
    R = np.array([compute_R(model, s, k) for k in range(s.m)])
    Y = solve_y(model, s, tol, R=R)
    if not np.all(np.isfinite(Y)):
        raise NumericalError("level vectors y_i^k are not finite")
    delta, direct_res = solve_delta_direct(model, s, Y, tol)
    delta_tau = direct_res["delta_tau"]
    if verbose:
        print(f"DEBUG: delta = {np.array2string(delta, precision=6)}", flush=True)

    items = list(check_assumptions(model, s, tol)["items"])
    items += _rank_items(model, s, R, Y, tol)
    items += _identity_items(model, s, R, Y, tol)
    items.append(_item("balance residual", direct_res["balance"],
                       "pass" if direct_res["balance"] <= tol.tol_residual else "fail",
                       limit=tol.tol_residual))
    items.append(_item("normalization residual", direct_res["normalization"],
                       "pass" if direct_res["normalization"] <= tol.tol_identity else "fail",
                       limit=tol.tol_identity))

    try:
        delta_phi, phi_res = solve_delta_phi(model, s, Y, tol)
        # compared at the patience boundary, where neither route under- or overflows
        route = float(np.linalg.norm(delta_tau - phi_res["delta_tau"]) / np.linalg.norm(delta_tau))
        items.append(_item("phi imaginary residue", phi_res["phi_imag"],
                           "pass" if phi_res["phi_imag"] <= tol.tol_real else "fail",
                           limit=tol.tol_real))
        items.append(_item("route agreement", route,
                           "pass" if route <= tol.tol_route else "fail", limit=tol.tol_route,
                           phi_order=tol.phi_order))
    except NumericalError as e:
        delta_phi = None
        items.append(_item("route agreement", None, "fail", message=str(e),
                           phi_order=tol.phi_order))

    pairing = conjugate_pairing_residual(s.eta, delta_tau)
    items.append(_item("delta conjugate pairing", pairing,
                       "pass" if pairing <= tol.tol_residual else "fail",
                       limit=tol.tol_residual))

    items = _downgrade(items)
    diagnostics = {
        "items": items,
        "status": worst_status(it["status"] for it in items),
        "c1_reading": C1_READING if model.c == 1 else None,
        "phi_order": tol.phi_order,
    }
    sol = LoadSolution(model=model, spectral=s, R=R, Y=Y, delta=delta,
                       delta_phi=delta_phi, delta_tau=delta_tau, diagnostics=diagnostics)

    failed = [it for it in items if it["status"] == "fail"]
    for it in items:
        if it["status"] == "warn":
            print(f"WARNING: check '{it['name']}' = {_fmt(it['value'])}", file=sys.stderr, flush=True)
    if failed and strict:
        names = ", ".join(it["name"] for it in failed)
        print(f"ERROR: solution checks failed: {names}", file=sys.stderr, flush=True)
        raise NumericalError(f"solution checks failed: {names}")
    return sol


def diagnose(model: QueueModel, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """
    Non-raising report of every assumption margin and solution check, for
    the `check` command. Stages that cannot run are reported as failed items.
    """
    # a model that breaks the assumptions can feed singular or non-finite
    # matrices to LAPACK, which raises LinAlgError or ValueError
    pipeline_errors = (NumericalError, np.linalg.LinAlgError, ValueError)
    try:
        sol = solve(model, tol, strict=False)
    except pipeline_errors as e:
        try:
            items = check_assumptions(model, compute_spectral(model, tol, strict=False), tol)["items"]
        except pipeline_errors:
            items = []
        items.append(_item("solution pipeline", None, "fail", message=str(e)))
        return {"items": items, "status": "fail"}
    return {"items": sol.diagnostics["items"], "status": sol.diagnostics["status"],
            "c1_reading": sol.diagnostics["c1_reading"]}


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.3e}"
    return str(value)


# ──────────────────────────────────────────────
# Solution export
# ──────────────────────────────────────────────
def _pairs(z) -> list:
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        return [float(z.real), float(z.imag)]
    return [_pairs(x) for x in z]


def _unpairs(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def json_safe(value):
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def solution_to_dict(sol: LoadSolution) -> dict:
    return {
        "model": model_to_dict(sol.model),
        "eta": _pairs(sol.spectral.eta),
        "kappa": _pairs(sol.spectral.kappa),
        "delta": _pairs(sol.delta),
        "delta_phi": _pairs(sol.delta_phi) if sol.delta_phi is not None else None,
        "delta_tau": _pairs(sol.delta_tau),
        "y": _pairs(sol.Y),
        "diagnostics": json_safe(sol.diagnostics),
    }


def export_solution_json(sol: LoadSolution, path) -> Path:
    """Write the solution; complex numbers as [re, im] pairs, floats as shortest repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(solution_to_dict(sol), f, indent=2, allow_nan=False)
    return path


def read_solution_json(path) -> dict:
    """Read an exported solution back into complex arrays."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    out = dict(data)
    for key in ("eta", "kappa", "delta", "delta_tau", "y"):
        out[key] = _unpairs(data[key])
    if data.get("delta_phi") is not None:
        out["delta_phi"] = _unpairs(data["delta_phi"])
    return out
