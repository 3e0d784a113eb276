"""
PhaseType / QueueModel — the inter-arrival law and the PH/M/c+D queue.

A phase-type distribution is the absorption time of a finite Markov chain
started in phase j with probability γ_j and driven by the sub-generator T.
The exit-rate vector t = −T·e is derived at construction. The queue adds c
exponential servers with rate μ and a deterministic patience bound τ.

Also provides the model JSON loader and exact PH samplers for the simulator.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from core.config import PROB_SUM_TOL, RCOND_MIN, SIGN_SLACK
from core.errors import ModelError


def _clamp_small_negatives(values: np.ndarray, name: str) -> np.ndarray:
    """Clamp entries in [−SIGN_SLACK, 0) to 0; reject anything lower."""
    if np.any(values < -SIGN_SLACK):
        raise ModelError(f"negative entries not allowed (min {values.min():.3e})", field=name)
    return np.where(values < 0, 0.0, values)


@dataclass(frozen=True)
class PhaseType:
    """Validated phase-type distribution (γ, T) with exit vector t = −T·e."""
    gamma: np.ndarray
    T: np.ndarray
    exit: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @property
    def rates(self) -> np.ndarray:
        """Holding rates λ_j = −t_jj."""
        return -np.diag(self.T).copy()

    @property
    def jump_probs(self) -> np.ndarray:
        """β_jl = t_jl / λ_j for l ≠ j, zero diagonal."""
        beta = self.T / self.rates[:, None]
        np.fill_diagonal(beta, 0.0)
        return beta

    @property
    def exit_probs(self) -> np.ndarray:
        """α_j = 1 − Σ_l β_jl, the absorption probability on leaving phase j."""
        return self.exit / self.rates


@dataclass(frozen=True)
class QueueModel:
    """FCFS PH/M/c queue where customers who would wait τ or longer are lost."""
    ph: PhaseType
    c: int
    mu: float
    tau: float

    def __post_init__(self):
        if isinstance(self.c, bool) or int(self.c) != self.c or self.c < 1:
            raise ModelError(f"server count must be a positive integer, got {self.c!r}", field="c")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ModelError(f"service rate must be positive and finite, got {self.mu!r}", field="mu")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ModelError(f"impatience time must be positive and finite, got {self.tau!r}", field="tau")
        object.__setattr__(self, "c", int(self.c))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def m(self) -> int:
        return self.ph.m

    @property
    def arrival_rate(self) -> float:
        return 1.0 / ph_mean(self.ph)

    @property
    def offered_load(self) -> float:
        """ρ = λ / (cμ); may exceed 1 since impatience keeps the queue stable."""
        return self.arrival_rate / (self.c * self.mu)


# ──────────────────────────────────────────────
# Construction
# ──────────────────────────────────────────────
def make_phase_type(gamma, T) -> PhaseType:
    """
    Build and validate a phase-type distribution.

    Args:
        gamma: initial probability vector, length m
        T: m×m sub-generator (negative diagonal, nonnegative off-diagonal)

    Returns:
        PhaseType with exit = −T·e

    Raises:
        ModelError: dimension mismatch, bad probabilities, sign pattern, singular T
    """
    try:
        gamma = np.array(gamma, dtype=float).reshape(-1)
        T = np.atleast_2d(np.array(T, dtype=float))
    except (TypeError, ValueError) as e:
        raise ModelError(f"not numeric: {e}", field="gamma/T") from e

    m = gamma.shape[0]
    if m == 0:
        raise ModelError("at least one phase required", field="gamma")
    if T.ndim != 2 or T.shape != (m, m):
        raise ModelError(f"T must be {m}x{m} to match gamma, got shape {T.shape}", field="T")
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(T))):
        raise ModelError("entries must be finite", field="gamma/T")

    gamma = _clamp_small_negatives(gamma, "gamma")
    if abs(gamma.sum() - 1.0) > PROB_SUM_TOL:
        raise ModelError(f"entries must sum to 1 (sum = {gamma.sum():.15g})", field="gamma")

    diag = np.diag(T)
    if np.any(diag >= 0):
        j = int(np.argmax(diag >= 0))
        raise ModelError(f"diagonal must be strictly negative (T[{j},{j}] = {diag[j]:g}); "
                         f"positive diagonal is not a sub-generator", field="T")
    off = T - np.diag(diag)
    off = _clamp_small_negatives(off, "T")
    T = off + np.diag(diag)

    exit_vec = _clamp_small_negatives(-T.sum(axis=1), "T")
    if not np.any(exit_vec > 0):
        raise ModelError("no exit rate: absorption is impossible", field="T")

    rcond = 1.0 / np.linalg.cond(T, 1)
    if not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise ModelError(f"T is numerically singular (rcond = {rcond:.2e})", field="T")

    gamma.setflags(write=False)
    T.setflags(write=False)
    exit_vec.setflags(write=False)
    return PhaseType(gamma=gamma, T=T, exit=exit_vec)


def make_coxian(rates, continue_probs) -> PhaseType:
    """
    Coxian distribution: start in phase 1, in phase i hold Exp(rates_i) then
    continue to phase i+1 with probability continue_probs_i or absorb.
    """
    rates = np.array(rates, dtype=float).reshape(-1)
    probs = np.array(continue_probs, dtype=float).reshape(-1)
    m = rates.shape[0]
    if m == 0:
        raise ModelError("at least one rate required", field="rates")
    if probs.shape[0] != m - 1:
        raise ModelError(f"need {m - 1} continuation probabilities, got {probs.shape[0]}",
                         field="continue_probs")
    if np.any(~np.isfinite(rates)) or np.any(rates <= 0):
        raise ModelError("rates must be positive", field="rates")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
        raise ModelError("continuation probabilities must lie in [0, 1]", field="continue_probs")

    T = -np.diag(rates)
    for i in range(m - 1):
        T[i, i + 1] = rates[i] * probs[i]
    gamma = np.zeros(m)
    gamma[0] = 1.0
    return make_phase_type(gamma, T)


def make_model(gamma, T, c, mu, tau) -> QueueModel:
    return QueueModel(ph=make_phase_type(gamma, T), c=c, mu=mu, tau=tau)


def ph_mean(ph: PhaseType) -> float:
    """Mean γ·(−T)⁻¹·e, computed by solving instead of inverting."""
    x = scipy.linalg.solve(-ph.T, np.ones(ph.m))
    return float(ph.gamma @ x)


# ──────────────────────────────────────────────
# Sampling
# ──────────────────────────────────────────────
def _choose(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.shape[0] - 1)


def ph_sample(ph: PhaseType, rng: np.random.Generator) -> float:
    """
    Draw one absorption time by walking the chain.

    A uniform is consumed only when a choice is genuinely random, so an
    exponential(λ) returns −ln(u)/λ for the stream's first uniform u.
    """
    rates = ph.rates
    m = ph.m
    # row j: jump probabilities to each phase, then absorption in column m
    moves = np.hstack([ph.jump_probs, ph.exit_probs[:, None]])

    def pick(probs):
        nonzero = np.flatnonzero(probs > 0)
        if nonzero.shape[0] == 1:
            return int(nonzero[0])
        return _choose(probs, rng.random())

    total = 0.0
    phase = pick(ph.gamma)
    while phase < m:
        # random() draws from [0, 1); a zero draw maps to the largest finite sojourn
        u = max(rng.random(), np.finfo(float).tiny)
        total += -math.log(u) / rates[phase]
        phase = pick(moves[phase])
    return total


def ph_sample_batch(ph: PhaseType, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw `size` absorption times at once by advancing all chains in lockstep."""
    rates = ph.rates
    m = ph.m
    moves = np.hstack([ph.jump_probs, ph.exit_probs[:, None]])
    cum_moves = np.cumsum(moves, axis=1)
    cum_moves[:, -1] = 1.0
    cum_gamma = np.cumsum(ph.gamma)
    cum_gamma[-1] = 1.0

    out = np.zeros(size)
    phase = np.searchsorted(cum_gamma, rng.random(size), side="right")
    active = np.flatnonzero(phase < m)
    while active.shape[0]:
        p = phase[active]
        out[active] += rng.exponential(1.0, active.shape[0]) / rates[p]
        u = rng.random(active.shape[0])
        nxt = (u[:, None] >= cum_moves[p]).sum(axis=1)
        phase[active] = nxt
        active = active[nxt < m]
    return out


# ──────────────────────────────────────────────
# Model JSON
# ──────────────────────────────────────────────
MODEL_FIELDS = ("gamma", "T", "c", "mu", "tau")


def model_from_dict(data: dict) -> QueueModel:
    """Build a QueueModel from {"gamma", "T", "c", "mu", "tau"}."""
    if not isinstance(data, dict):
        raise ModelError("model must be a JSON object", field="<root>")
    for key in MODEL_FIELDS:
        if key not in data:
            raise ModelError("missing required field", field=key)
    unknown = sorted(set(data) - set(MODEL_FIELDS) - {"name", "description"})
    if unknown:
        raise ModelError(f"unknown fields {unknown}", field=unknown[0])

    gamma, T = data["gamma"], data["T"]
    if not isinstance(gamma, list) or not all(_is_number(x) for x in gamma):
        raise ModelError("must be a list of numbers", field="gamma")
    if (not isinstance(T, list) or not all(isinstance(row, list) for row in T)
            or not all(_is_number(x) for row in T for x in row)):
        raise ModelError("must be a list of lists of numbers", field="T")
    if any(len(row) != len(gamma) for row in T):
        raise ModelError(f"every row must have {len(gamma)} entries", field="T")
    if not isinstance(data["c"], int) or isinstance(data["c"], bool):
        raise ModelError("must be an integer", field="c")
    for key in ("mu", "tau"):
        if not _is_number(data[key]):
            raise ModelError("must be a number", field=key)

    ph = make_phase_type(gamma, T)
    return QueueModel(ph=ph, c=data["c"], mu=data["mu"], tau=data["tau"])


def model_to_dict(model: QueueModel) -> dict:
    return {
        "gamma": model.ph.gamma.tolist(),
        "T": model.ph.T.tolist(),
        "c": model.c,
        "mu": model.mu,
        "tau": model.tau,
    }


def load_model_json(path) -> QueueModel:
    """
    Read a model file.

    Raises:
        FileNotFoundError: path does not exist
        ModelError: JSON syntax error (with line/column) or field violation
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"malformed JSON: {e.msg}", field="<json>",
                         line=e.lineno, column=e.colno) from e
    return model_from_dict(data)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)
