"""Linear-quadratic mean-field model data and closed-form Hamiltonian machinery.

The model couples each agent to the population only through the first
moment y of the current measure.  Running cost, terminal cost and dynamics:

    f(x, y, v) = 1/2 [ x*Qx + v*Rv + (x - Sy)* Qbar (x - Sy) ]
    h(x, y)    = 1/2 [ x*QT x + (x - ST y)* QbarT (x - ST y) ]
    g(x, y, v) = Ax + Abar y + Bv

with scalar idiosyncratic noise coefficient sigma and common-noise
coefficient beta.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

SYM_TOL = 1e-12

_MATRIX_KEYS = ("A", "Abar", "B", "Q", "Qbar", "S", "R", "QT", "QbarT", "ST")


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class LQModelSpec:
    n: int
    d: int
    T: float
    A: np.ndarray
    Abar: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    Qbar: np.ndarray
    S: np.ndarray
    R: np.ndarray
    QT: np.ndarray
    QbarT: np.ndarray
    ST: np.ndarray
    sigma: float = 0.0
    beta: float = 0.0
    convex: bool = False

    def __post_init__(self):
        for name in _MATRIX_KEYS:
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))

    def Rinv_Bt(self) -> np.ndarray:
        """R^{-1} B*, via Cholesky."""
        c, low = cho_factor(self.R)
        return cho_solve((c, low), self.B.T)

    def BRB(self) -> np.ndarray:
        """B R^{-1} B*, the control-weight kernel of the Hamiltonian."""
        return self.B @ self.Rinv_Bt()


def _is_symmetric(M: np.ndarray) -> bool:
    return np.max(np.abs(M - M.T)) <= SYM_TOL if M.size else True


def _is_psd(M: np.ndarray) -> bool:
    return np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) >= -SYM_TOL


def validate(model: LQModelSpec) -> ValidationReport:
    """Check every model invariant; returns a report instead of raising."""
    v: list[str] = []
    n, d = model.n, model.d
    if n < 1 or d < 1:
        v.append("dimensions n, d must be positive")
        return ValidationReport(v)
    if model.T <= 0:
        v.append("horizon T must be positive")
    if model.sigma < 0 or model.beta < 0:
        v.append("noise coefficients sigma, beta must be nonnegative")

    shapes = {
        "A": (n, n), "Abar": (n, n), "B": (n, d), "Q": (n, n), "Qbar": (n, n),
        "S": (n, n), "R": (d, d), "QT": (n, n), "QbarT": (n, n), "ST": (n, n),
    }
    for name, shape in shapes.items():
        M = getattr(model, name)
        if M.shape != shape:
            v.append(f"dimension mismatch: {name} has shape {M.shape}, expected {shape}")
    if v:
        return ValidationReport(v)

    for name in ("Q", "Qbar", "R", "QT", "QbarT"):
        if not _is_symmetric(getattr(model, name)):
            v.append(f"{name} not symmetric (tolerance {SYM_TOL})")
    try:
        cho_factor(model.R)
    except np.linalg.LinAlgError:
        v.append("R not positive definite")
    except ValueError:
        v.append("R not positive definite")
    if model.convex:
        for name in ("Q", "Qbar", "QT", "QbarT"):
            if _is_symmetric(getattr(model, name)) and not _is_psd(getattr(model, name)):
                v.append(f"{name} not positive semi-definite (model flagged convex)")
    return ValidationReport(v)


def hamiltonian(x: np.ndarray, y: np.ndarray, q: np.ndarray, model: LQModelSpec) -> float:
    """H(x, y, q) = inf_v [ f(x,y,v) + q.g(x,y,v) ] in closed form."""
    x, y, q = (np.asarray(z, dtype=float).reshape(model.n) for z in (x, y, q))
    Qb, S = model.Qbar, model.S
    val = (0.5 * x @ (model.Q + Qb) @ x
           - x @ Qb @ S @ y
           + 0.5 * y @ S.T @ Qb @ S @ y
           - 0.5 * q @ model.BRB() @ q
           + q @ (model.A @ x + model.Abar @ y))
    return float(val)


def optimal_feedback(x: np.ndarray, y: np.ndarray, q: np.ndarray, model: LQModelSpec) -> np.ndarray:
    """Unique minimizer of v -> f(x,y,v) + q.g(x,y,v); linear in q."""
    q = np.asarray(q, dtype=float).reshape(model.n)
    return -model.Rinv_Bt() @ q


def drift_G(x: np.ndarray, y: np.ndarray, q: np.ndarray, model: LQModelSpec) -> np.ndarray:
    """Optimal drift G(x, y, q) = Ax + Abar y - B R^{-1} B* q = D_q H."""
    x, y, q = (np.asarray(z, dtype=float).reshape(model.n) for z in (x, y, q))
    return model.A @ x + model.Abar @ y - model.BRB() @ q


def running_cost(x: np.ndarray, y: np.ndarray, v: np.ndarray, model: LQModelSpec) -> float:
    x, y = (np.asarray(z, dtype=float).reshape(model.n) for z in (x, y))
    v = np.asarray(v, dtype=float).reshape(model.d)
    e = x - model.S @ y
    return float(0.5 * (x @ model.Q @ x + v @ model.R @ v + e @ model.Qbar @ e))


def terminal_cost(x: np.ndarray, y: np.ndarray, model: LQModelSpec) -> float:
    x, y = (np.asarray(z, dtype=float).reshape(model.n) for z in (x, y))
    e = x - model.ST @ y
    return float(0.5 * (x @ model.QT @ x + e @ model.QbarT @ e))


def dynamics(x: np.ndarray, y: np.ndarray, v: np.ndarray, model: LQModelSpec) -> np.ndarray:
    x, y = (np.asarray(z, dtype=float).reshape(model.n) for z in (x, y))
    v = np.asarray(v, dtype=float).reshape(model.d)
    return model.A @ x + model.Abar @ y + model.B @ v


def load_model(path: str) -> LQModelSpec:
    """Read a model from JSON.  Missing matrices default to zero; R is required."""
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


def model_from_dict(doc: dict) -> LQModelSpec:
    for key in ("n", "d", "T", "R"):
        if key not in doc:
            raise KeyError(f"model file missing required key '{key}'")
    n, d = int(doc["n"]), int(doc["d"])
    shapes = {
        "A": (n, n), "Abar": (n, n), "B": (n, d), "Q": (n, n), "Qbar": (n, n),
        "S": (n, n), "QT": (n, n), "QbarT": (n, n), "ST": (n, n),
    }
    mats = {}
    for name, shape in shapes.items():
        mats[name] = np.asarray(doc[name], dtype=float) if name in doc else np.zeros(shape)
    return LQModelSpec(
        n=n, d=d, T=float(doc["T"]),
        R=np.asarray(doc["R"], dtype=float),
        sigma=float(doc.get("sigma", 0.0)),
        beta=float(doc.get("beta", 0.0)),
        convex=bool(doc.get("convex", False)),
        **mats,
    )


def scalar_model(A=0.0, Abar=0.0, B=1.0, Q=0.0, Qbar=0.0, S=0.0, R=1.0,
                 QT=0.0, QbarT=0.0, ST=0.0, sigma=0.0, beta=0.0, T=1.0,
                 convex=False) -> LQModelSpec:
    """Convenience constructor for n = d = 1 models."""
    m = lambda z: np.array([[float(z)]])
    return LQModelSpec(n=1, d=1, T=T, A=m(A), Abar=m(Abar), B=m(B), Q=m(Q),
                       Qbar=m(Qbar), S=m(S), R=m(R), QT=m(QT), QbarT=m(QbarT),
                       ST=m(ST), sigma=sigma, beta=beta, convex=convex)
