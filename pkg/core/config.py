"""
Numerical tolerances and run defaults.

Every threshold used by the solver, the density evaluators and the simulator
lives here. Callers pass a Tolerances record; the CLI builds one from flags.
"""
from dataclasses import dataclass, replace

# ──────────────────────────────────────────────
# Model validation
# ──────────────────────────────────────────────
PROB_SUM_TOL = 1e-12       # |Σγ − 1| allowed
SIGN_SLACK = 1e-14         # negatives this small are clamped to 0
RCOND_MIN = 1e-13          # reciprocal condition of T below this rejects

# ──────────────────────────────────────────────
# Rank and residual checks
# ──────────────────────────────────────────────
TOL_ZERO = 1e-10           # σ_min/σ_max at or below → numerically zero
TOL_NONZERO = 1e-6         # σ_{m-1}/σ_max at or above → clearly nonzero
TOL_EIG = 1e-10            # eigenpair residual relative to ‖M‖
TOL_RESIDUAL = 1e-9        # balance-row residual and level identities
TOL_IDENTITY = 1e-10       # exit-vector eigen relation per root
TOL_BRIDGE = 1e-8          # coefficient bridge and representation gap
TOL_REAL = 1e-10           # imaginary residue of φ and densities
TOL_NEGATIVE = 1e-12       # densities in [−TOL_NEGATIVE, 0) clamp to 0
TOL_ROUTE = 1e-8           # relative gap between the two δ routes
TOL_KAPPA_ZERO = 1e-10     # |κ_1| relative to ‖T + tγ‖

# Assumption margins: ≤ fail → fail, ≤ warn → warn, otherwise pass
MARGIN_FAIL = 1e-8
MARGIN_WARN = 1e-6

SERIES_CUTOFF = 1e-3       # |cηx| below this uses the series for (1 − e^{−cηx})/η
QUAD_EPSABS = 1e-11

# φ route product order: "EY" → φ = δ·E·Y_{c-1}, "YE" → φ = δ·Y_{c-1}·E
PHI_ORDER = "EY"

# ──────────────────────────────────────────────
# Simulation and comparison
# ──────────────────────────────────────────────
DEFAULT_SEED = 20150601
DEFAULT_ARRIVALS = 10**6
DEFAULT_REPLICATIONS = 1
DEFAULT_WARMUP_FLOOR = 10**5
WARMUP_SERVICE_FACTOR = 50
DEFAULT_BATCHES = 50
MIN_MEASURED_ARRIVALS = 10**4
DEFAULT_GRID = 1000
TOL_KS = 0.005
TOL_Z = 4.0


@dataclass(frozen=True)
class Tolerances:
    """Bundle of thresholds passed through every pipeline stage."""
    tol_zero: float = TOL_ZERO
    tol_nonzero: float = TOL_NONZERO
    tol_eig: float = TOL_EIG
    tol_residual: float = TOL_RESIDUAL
    tol_identity: float = TOL_IDENTITY
    tol_bridge: float = TOL_BRIDGE
    tol_real: float = TOL_REAL
    tol_negative: float = TOL_NEGATIVE
    tol_route: float = TOL_ROUTE
    tol_kappa_zero: float = TOL_KAPPA_ZERO
    margin_fail: float = MARGIN_FAIL
    margin_warn: float = MARGIN_WARN
    tol_ks: float = TOL_KS
    tol_z: float = TOL_Z
    phi_order: str = PHI_ORDER

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if name == "phi_order":
                continue
            if not value >= 0:
                raise ValueError(f"Tolerance {name} must be >= 0, got {value}")
        if self.phi_order not in ("EY", "YE"):
            raise ValueError(f"phi_order must be 'EY' or 'YE', got {self.phi_order!r}")
        if self.margin_fail > self.margin_warn:
            raise ValueError("margin_fail must not exceed margin_warn")

    def with_overrides(self, **kwargs) -> "Tolerances":
        """Return a copy with the non-None keyword values replaced."""
        changes = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **changes)


DEFAULT_TOLERANCES = Tolerances()


def margin_status(margin, tol: Tolerances = DEFAULT_TOLERANCES) -> str:
    """Classify an assumption margin. None means the clause is vacuous."""
    if margin is None:
        return "pass"
    if margin <= tol.margin_fail:
        return "fail"
    if margin <= tol.margin_warn:
        return "warn"
    return "pass"


def residual_status(residual: float, limit: float) -> str:
    return "pass" if residual <= limit else "fail"


def worst_status(statuses) -> str:
    """Combine item statuses: any fail → fail, else any warn → warn."""
    statuses = list(statuses)
    if "fail" in statuses:
        return "fail"
    if "warn" in statuses:
        return "warn"
    return "pass"
