"""Dimensionless model parameters and interface kinetics.

All quantities are in the scaled units of the corrosion model: the cation
density ``P`` (charge +3), the electron density ``N`` (charge -1) and the
electric potential ``Psi`` on the unit interval.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

# Fixed charge numbers and cation mobility weight.
Z = {"P": 3, "N": -1}
EPS_P = 1.0

SPECIES = ("P", "N")
SIDES = (0, 1)

_KINETIC = ("m", "k", "a", "b")


class EvaluationOverflowError(ArithmeticError):
    """A boundary coefficient overflowed double precision."""


class HypothesisWarning(UserWarning):
    """The parameter set violates one of the stability hypotheses."""


@dataclass(frozen=True)
class ModelParams:
    """Immutable dimensionless parameter set.

    Kinetic data are stored per species ``p``/``n`` and side ``0``/``1``,
    e.g. ``k_p_0`` is the oxidation rate constant of the cations at x=0.
    """

    lambda_sq: float
    alpha0: float
    alpha1: float
    p_max: float
    n_max: float
    rho_hl: float
    v_applied: float
    dpsi0_pzc: float
    dpsi1_pzc: float
    epsilon: float = 0.0
    m_p_0: float = 0.0
    k_p_0: float = 0.0
    a_p_0: float = 0.5
    b_p_0: float = 0.5
    m_p_1: float = 0.0
    k_p_1: float = 0.0
    a_p_1: float = 0.5
    b_p_1: float = 0.5
    m_n_0: float = 0.0
    k_n_0: float = 0.0
    a_n_0: float = 0.5
    b_n_0: float = 0.5
    m_n_1: float = 0.0
    k_n_1: float = 0.0
    a_n_1: float = 0.5
    b_n_1: float = 0.5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"{f.name} must be a finite real, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        if self.lambda_sq <= 0:
            raise ValueError("lambda_sq must be positive")
        if self.alpha0 <= 0 or self.alpha1 <= 0:
            raise ValueError("alpha0 and alpha1 must be positive")
        if self.p_max <= 0 or self.n_max <= 0:
            raise ValueError("p_max and n_max must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        for sp in "pn":
            for side in "01":
                for c in "mk":
                    if getattr(self, f"{c}_{sp}_{side}") < 0:
                        raise ValueError(f"{c}_{sp}_{side} must be nonnegative")
                for c in "ab":
                    v = getattr(self, f"{c}_{sp}_{side}")
                    if not 0.0 <= v <= 1.0:
                        raise ValueError(f"{c}_{sp}_{side} must lie in [0, 1]")
        if not _compatible(self):
            raise ValueError(
                "charge compatibility 3*p_max - n_max + rho_hl = 0 violated "
                f"(residual {self.charge_residual:g})"
            )

    @property
    def charge_residual(self) -> float:
        return 3.0 * self.p_max - self.n_max + self.rho_hl

    def kinetic(self, species: str, side: int, name: str) -> float:
        """Kinetic constant ``name`` in {m, k, a, b} of a species at a side."""
        if name not in _KINETIC:
            raise KeyError(name)
        return getattr(self, f"{name}_{_sp(species)}_{int(side)}")

    def u_max(self, species: str) -> float:
        return self.p_max if _sp(species) == "p" else self.n_max

    def eps_u(self, species: str) -> float:
        return EPS_P if _sp(species) == "p" else self.epsilon

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _sp(species: str) -> str:
    s = str(species).lower()
    if s not in ("p", "n"):
        raise ValueError(f"unknown species {species!r}")
    return s


def _compatible(p: ModelParams) -> bool:
    scale = max(3.0 * p.p_max, p.n_max, abs(p.rho_hl))
    return abs(p.charge_residual) <= 1e-12 * scale


def _exp(x: float) -> float:
    try:
        v = math.exp(x)
    except OverflowError:
        raise EvaluationOverflowError(f"exp({x!r}) overflows") from None
    return v


def beta(params: ModelParams, species: str, side: int, x: float) -> float:
    """Coefficient of the density in the linear Butler-Volmer boundary law.

    ``beta(x) = m exp(-z b x) + k exp(z a x)`` with the constants of the
    given species and side.
    """
    z = Z[species.upper()]
    m = params.kinetic(species, side, "m")
    k = params.kinetic(species, side, "k")
    a = params.kinetic(species, side, "a")
    b = params.kinetic(species, side, "b")
    out = 0.0
    if m:
        out += m * _exp(-z * b * x)
    if k:
        out += k * _exp(z * a * x)
    if not math.isfinite(out):
        raise EvaluationOverflowError(f"beta_{species}^{side}({x!r}) overflows")
    return out


def gamma(params: ModelParams, species: str, side: int, x: float) -> float:
    """Source term of the Butler-Volmer boundary law.

    Side 0 uses the reduction branch ``m u_max exp(-z b x)``; side 1 the
    oxidation branch ``k u_max exp(z a x)``.
    """
    z = Z[species.upper()]
    umax = params.u_max(species)
    if side == 0:
        c = params.kinetic(species, 0, "m")
        e = -z * params.kinetic(species, 0, "b") * x
    else:
        c = params.kinetic(species, 1, "k")
        e = z * params.kinetic(species, 1, "a") * x
    if c == 0.0:
        return 0.0
    out = c * umax * _exp(e)
    if not math.isfinite(out):
        raise EvaluationOverflowError(f"gamma_{species}^{side}({x!r}) overflows")
    return out


@dataclass(frozen=True)
class HypothesisCheck:
    id: str
    satisfied: bool
    lhs: float
    rhs: float
    evaluable: bool = True
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[HypothesisCheck, ...] = field(default_factory=tuple)

    @property
    def strict_ok(self) -> bool:
        return all(e.satisfied for e in self.entries)

    def __getitem__(self, key: str) -> HypothesisCheck:
        for e in self.entries:
            if e.id == key:
                return e
        raise KeyError(key)

    def violated(self) -> list[HypothesisCheck]:
        return [e for e in self.entries if not e.satisfied]

    def format(self) -> str:
        lines = []
        for e in self.entries:
            status = "ok" if e.satisfied else ("n/a" if not e.evaluable else "VIOLATED")
            lines.append(f"{e.id:<22s} {status:<9s} lhs={e.lhs: .6g} rhs={e.rhs: .6g} {e.note}")
        lines.append(f"strict_ok = {self.strict_ok}")
        return "\n".join(lines)


def _pzc_bound(coef: float, alpha: float, t: float, rate: float):
    """(1 + log(alpha t rate)) / coef, or None when the log is undefined."""
    arg = alpha * t * rate
    if coef == 0.0 or arg <= 0.0:
        return None
    return (1.0 + math.log(arg)) / coef


def validate(params: ModelParams) -> ValidationReport:
    """Check the stability hypotheses of the scheme on a parameter set.

    The report is advisory: a violated inequality does not prevent a run.
    """
    p = params
    entries = []

    mk = [getattr(p, f"{c}_{s}_{i}") for c in "mk" for s in "pn" for i in "01"]
    entries.append(HypothesisCheck("kinetic_positive", min(mk) > 0, min(mk), 0.0,
                                   note="min over m,k must be > 0"))
    ab = [getattr(p, f"{c}_{s}_{i}") for c in "ab" for s in "pn" for i in "01"]
    entries.append(HypothesisCheck("transfer_in_unit", 0 <= min(ab) and max(ab) <= 1,
                                   min(ab), max(ab), note="lhs=min, rhs=max"))
    entries.append(HypothesisCheck("charge_compatibility", _compatible(p),
                                   p.charge_residual, 0.0))
    entries.append(HypothesisCheck("alpha_positive", min(p.alpha0, p.alpha1) > 0,
                                   min(p.alpha0, p.alpha1), 0.0))

    # (lower bound, upper bound) pairs for the two pzc voltage drops
    specs = [
        ("dpsi0_lower", "lower", p.dpsi0_pzc,
         _pzc_bound(3 * p.a_p_0, p.alpha0, p.a_p_0, p.k_p_0), -1.0),
        ("dpsi0_upper", "upper", p.dpsi0_pzc,
         _pzc_bound(p.a_n_0, p.alpha0, p.a_n_0, p.k_n_0), 1.0),
        ("dpsi1_lower", "lower", p.dpsi1_pzc,
         _pzc_bound(p.b_n_1, p.alpha1, p.b_n_1, p.m_n_1), -1.0),
        ("dpsi1_upper", "upper", p.dpsi1_pzc,
         _pzc_bound(3 * p.b_p_1, p.alpha1, p.b_p_1, p.m_p_1), 1.0),
    ]
    for hid, kind, value, bound, sign in specs:
        if bound is None:
            entries.append(HypothesisCheck(hid, False, math.nan, value, evaluable=False,
                                           note="log argument <= 0"))
            continue
        bound = sign * bound
        if kind == "lower":
            entries.append(HypothesisCheck(hid, bound <= value, bound, value))
        else:
            entries.append(HypothesisCheck(hid, value <= bound, value, bound))
    return ValidationReport(tuple(entries))


def warn_if_unstable(params: ModelParams) -> ValidationReport:
    report = validate(params)
    for e in report.violated():
        warnings.warn(f"hypothesis {e.id} not satisfied (lhs={e.lhs:g}, rhs={e.rhs:g})",
                      HypothesisWarning, stacklevel=2)
    return report


TABLE1 = ModelParams(
    lambda_sq=1.1e-3,
    alpha0=0.177,
    alpha1=0.089,
    p_max=2.0,
    n_max=1.0,
    rho_hl=-5.0,
    v_applied=0.5,
    dpsi0_pzc=-0.866,
    dpsi1_pzc=0.0,
    epsilon=0.0,
    m_p_0=0.0, k_p_0=1e8, a_p_0=0.5, b_p_0=0.5,
    m_p_1=1e8, k_p_1=1e11, a_p_1=0.5, b_p_1=0.5,
    m_n_0=1.45e-24, k_n_0=1e-18, a_n_0=0.5, b_n_0=0.5,
    m_n_1=26.8, k_n_1=26.8, a_n_1=0.5, b_n_1=0.5,
)

# Symmetric set satisfying every stability hypothesis.
STRICT = TABLE1.replace(
    alpha0=1.0, alpha1=1.0, v_applied=0.0, dpsi0_pzc=0.0, dpsi1_pzc=0.0,
    **{f"{c}_{s}_{i}": (1.0 if c in "mk" else 0.5)
       for c in "mkab" for s in "pn" for i in "01"},
)

PRESETS = {"table1": TABLE1, "strict": STRICT}


def preset(name: str) -> ModelParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
