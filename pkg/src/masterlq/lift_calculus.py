"""Functionals of 1D probability measures with closed-form derivatives.

Each built-in functional carries both representations of the same object:
F(m) on densities (evaluated by Gauss-Hermite quadrature against a
Gaussian reference measure) and F(X) on the Hilbert space of
square-integrable random variables (evaluated on particle ensembles),
together with closed forms for

    dF/dm (m)(xi),   d2F/dm2 (m)(xi, eta),
    DF(X) sample-wise,  D2F(X)(Y, Z) as a bilinear form,

and the mixed second measure derivative d2m F(m)(x, y) obtained by
differentiating the kernel in each slot.  The check_* routines verify the
identities tying these together:

    DF(X) = D_x dF/dm (m)(X)                              (gradient lift)
    sum_k D2F(e_k, e_k) = int dF/dm Lap(m) + int int d2F/dm2 Dm Dm
    sum_k D2F(e_k, e_k) - D2F(N, N) = int int d2F/dm2 Dm Dm
    d2m F(m)(x, y) = D_y D_x d2F/dm2 (x, y)
    third-order Taylor remainder in the measure argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


@dataclass(frozen=True)
class GaussianMeasure:
    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")

    def quad_points(self, order: int):
        """Nodes/weights so that E[f(X)] = sum w_i f(x_i)."""
        z, w = hermegauss(order)
        return self.mean + self.std * z, w / np.sqrt(2.0 * np.pi)

    # density derivative factors: Dm = dlog * m, Lap m = dlap * m
    def dlog(self, x):
        return -(x - self.mean) / self.std ** 2

    def dlap(self, x):
        u = (x - self.mean) / self.std ** 2
        return u * u - 1.0 / self.std ** 2


def _expect(m: GaussianMeasure, f, order: int) -> float:
    x, w = m.quad_points(order)
    return float(w @ f(x))


# ---------------------------------------------------------------------------
# test-function basis phi with closed-form derivatives

@dataclass(frozen=True)
class Phi:
    name: str
    f: callable
    d1: callable
    d2: callable


PHI_X = Phi("x", lambda x: x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
PHI_X2 = Phi("x^2", lambda x: x * x, lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0))
PHI_EXPQ = Phi(
    "exp(-x^2/2)",
    lambda x: np.exp(-0.5 * x * x),
    lambda x: -x * np.exp(-0.5 * x * x),
    lambda x: (x * x - 1.0) * np.exp(-0.5 * x * x),
)


class TestFunctional:
    """Base interface; see LinearFunctional etc. for the concrete algebra."""

    name: str

    def F_density(self, m: GaussianMeasure, order: int = 128) -> float:
        raise NotImplementedError

    def F_lifted(self, X: np.ndarray) -> float:
        raise NotImplementedError

    def dFdm(self, m: GaussianMeasure, xi, order: int = 128):
        raise NotImplementedError

    def d2Fdm2(self, m: GaussianMeasure, xi, eta, order: int = 128):
        raise NotImplementedError

    def DF_lifted(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def D2F_form(self, X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> float:
        raise NotImplementedError

    def d2m(self, m: GaussianMeasure, x, y, order: int = 128):
        """Mixed second measure derivative d2m F(m)(x, y)."""
        raise NotImplementedError

    # analytic Gaussian evaluations of the Hilbert-space second derivative
    def sum_D2F_ek(self, m: GaussianMeasure, order: int = 128) -> float:
        """sum_k D2F(X)(e_k, e_k) for X ~ m (n = 1: single term)."""
        raise NotImplementedError

    def D2F_indep_gauss(self, m: GaussianMeasure, order: int = 128) -> float:
        """D2F(X)(N, N) with N standard Gaussian independent of X ~ m."""
        raise NotImplementedError

    # Taylor building blocks on an empirical base ensemble
    def dm_emp(self, X0: np.ndarray, x):
        """partial_m F at the empirical measure of X0, evaluated at x."""
        raise NotImplementedError

    def d2m_emp(self, X0: np.ndarray, x, y):
        raise NotImplementedError

    def dx_dm_emp(self, X0: np.ndarray, x):
        """D_x partial_m F at the empirical measure of X0."""
        raise NotImplementedError


class LinearFunctional(TestFunctional):
    """F(m) = int phi dm."""

    def __init__(self, phi: Phi):
        self.phi = phi
        self.name = f"linear[{phi.name}]"

    def F_density(self, m, order=128):
        return _expect(m, self.phi.f, order)

    def F_lifted(self, X):
        return float(np.mean(self.phi.f(X)))

    def dFdm(self, m, xi, order=128):
        return self.phi.f(np.asarray(xi, dtype=float))

    def d2Fdm2(self, m, xi, eta, order=128):
        return np.zeros(np.broadcast(np.asarray(xi), np.asarray(eta)).shape)

    def DF_lifted(self, X):
        return self.phi.d1(X)

    def D2F_form(self, X, Y, Z):
        return float(np.mean(self.phi.d2(X) * Y * Z))

    def d2m(self, m, x, y, order=128):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def sum_D2F_ek(self, m, order=128):
        return _expect(m, self.phi.d2, order)

    def D2F_indep_gauss(self, m, order=128):
        return _expect(m, self.phi.d2, order)  # E[phi'' N^2] = E[phi'']

    def dm_emp(self, X0, x):
        return self.phi.d1(np.asarray(x, dtype=float))

    def d2m_emp(self, X0, x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def dx_dm_emp(self, X0, x):
        return self.phi.d2(np.asarray(x, dtype=float))


class SquaredMomentFunctional(TestFunctional):
    """F(m) = (int phi dm)^2."""

    def __init__(self, phi: Phi):
        self.phi = phi
        self.name = f"squared-moment[{phi.name}]"

    def F_density(self, m, order=128):
        return _expect(m, self.phi.f, order) ** 2

    def F_lifted(self, X):
        return float(np.mean(self.phi.f(X)) ** 2)

    def dFdm(self, m, xi, order=128):
        return 2.0 * _expect(m, self.phi.f, order) * self.phi.f(np.asarray(xi, dtype=float))

    def d2Fdm2(self, m, xi, eta, order=128):
        return 2.0 * (self.phi.f(np.asarray(xi, dtype=float)) * self.phi.f(np.asarray(eta, dtype=float)))

    def DF_lifted(self, X):
        return 2.0 * np.mean(self.phi.f(X)) * self.phi.d1(X)

    def D2F_form(self, X, Y, Z):
        return float(2.0 * np.mean(self.phi.d1(X) * Y) * np.mean(self.phi.d1(X) * Z)
                     + 2.0 * np.mean(self.phi.f(X)) * np.mean(self.phi.d2(X) * Y * Z))

    def d2m(self, m, x, y, order=128):
        return 2.0 * (self.phi.d1(np.asarray(x, dtype=float)) * self.phi.d1(np.asarray(y, dtype=float)))

    def sum_D2F_ek(self, m, order=128):
        e1 = _expect(m, self.phi.d1, order)
        return 2.0 * e1 * e1 + 2.0 * _expect(m, self.phi.f, order) * _expect(m, self.phi.d2, order)

    def D2F_indep_gauss(self, m, order=128):
        # E[phi'(X) N] = 0, E[phi''(X) N^2] = E[phi'']
        return 2.0 * _expect(m, self.phi.f, order) * _expect(m, self.phi.d2, order)

    def dm_emp(self, X0, x):
        return 2.0 * np.mean(self.phi.f(X0)) * self.phi.d1(np.asarray(x, dtype=float))

    def d2m_emp(self, X0, x, y):
        return 2.0 * (self.phi.d1(np.asarray(x, dtype=float)) * self.phi.d1(np.asarray(y, dtype=float)))

    def dx_dm_emp(self, X0, x):
        return 2.0 * np.mean(self.phi.f(X0)) * self.phi.d2(np.asarray(x, dtype=float))


class CubedMeanFunctional(TestFunctional):
    """F(m) = (int x dm)^3; the minimal functional with nonzero third order."""

    name = "cubed-mean"

    def F_density(self, m, order=128):
        return m.mean ** 3

    def F_lifted(self, X):
        return float(np.mean(X) ** 3)

    def dFdm(self, m, xi, order=128):
        return 3.0 * m.mean ** 2 * np.asarray(xi, dtype=float)

    def d2Fdm2(self, m, xi, eta, order=128):
        return 6.0 * m.mean * (np.asarray(xi, dtype=float) * np.asarray(eta, dtype=float))

    def DF_lifted(self, X):
        return np.full_like(X, 3.0 * np.mean(X) ** 2)

    def D2F_form(self, X, Y, Z):
        return float(6.0 * np.mean(X) * np.mean(Y) * np.mean(Z))

    def d2m(self, m, x, y, order=128):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, 6.0 * m.mean)

    def sum_D2F_ek(self, m, order=128):
        return 6.0 * m.mean

    def D2F_indep_gauss(self, m, order=128):
        return 0.0  # E[N] = 0 in both direction slots

    def dm_emp(self, X0, x):
        return np.full(np.asarray(x, dtype=float).shape, 3.0 * np.mean(X0) ** 2)

    def d2m_emp(self, X0, x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, 6.0 * np.mean(X0))

    def dx_dm_emp(self, X0, x):
        return np.zeros(np.asarray(x, dtype=float).shape)


def builtin_functionals() -> list[TestFunctional]:
    return [
        LinearFunctional(PHI_X),
        LinearFunctional(PHI_X2),
        LinearFunctional(PHI_EXPQ),
        SquaredMomentFunctional(PHI_X),
        SquaredMomentFunctional(PHI_X2),
        SquaredMomentFunctional(PHI_EXPQ),
        CubedMeanFunctional(),
    ]


# ---------------------------------------------------------------------------
# quadrature helpers for the density-side integrals

QUAD_ORDERS = (128, 192)
QUAD_AGREEMENT = 1e-8


class QuadratureDisagreement(RuntimeError):
    pass


def _quad_dFdm_lap(F: TestFunctional, m: GaussianMeasure, order: int) -> float:
    # int dF/dm (xi) Lap m(xi) dxi = E[ dF/dm (X) dlap(X) ]
    x, w = m.quad_points(order)
    return float(w @ (F.dFdm(m, x, order) * m.dlap(x)))


def _quad_d2F_DmDm(F: TestFunctional, m: GaussianMeasure, order: int) -> float:
    # int int d2F/dm2 (xi, eta) Dm(xi) Dm(eta) = E_xi E_eta [k * dlog(xi) dlog(eta)]
    x, w = m.quad_points(order)
    K = F.d2Fdm2(m, x[:, None], x[None, :], order)
    g = w * m.dlog(x)
    return float(g @ K @ g)


def _quad_checked(fn, F, m) -> float:
    vals = [fn(F, m, o) for o in QUAD_ORDERS]
    if abs(vals[-1] - vals[0]) > QUAD_AGREEMENT * max(1.0, abs(vals[-1])):
        raise QuadratureDisagreement(
            f"{F.name}: quadrature orders {QUAD_ORDERS} disagree: {vals}")
    return vals[-1]


# ---------------------------------------------------------------------------
# identity checks

@dataclass
class Report:
    check: str
    functional: str
    lhs: float
    rhs: float
    abs_err: float
    rel_err: float
    passed: bool
    extra: dict | None = None

    def to_dict(self) -> dict:
        d = {"check": self.check, "functional": self.functional,
             "lhs": self.lhs, "rhs": self.rhs,
             "abs_err": self.abs_err, "rel_err": self.rel_err, "pass": self.passed}
        if self.extra:
            d.update(self.extra)
        return d


def _mk_report(check, F, lhs, rhs, tol, extra=None) -> Report:
    abs_err = abs(lhs - rhs)
    rel_err = abs_err / max(1.0, abs(lhs), abs(rhs))
    return Report(check, F.name, float(lhs), float(rhs), abs_err, rel_err,
                  bool(rel_err < tol), extra)


def check_gradient_lift(F: TestFunctional, X: np.ndarray, Y: np.ndarray,
                        theta_steps=(1e-3, 1e-4, 1e-5), tol=1e-6) -> Report:
    """Directional derivative of the lifted F against <DF(X), Y>."""
    if X.size == 0:
        raise ValueError("empty ensemble")
    exact = float(np.mean(F.DF_lifted(X) * Y))
    errs = []
    slopes = {}
    for th in theta_steps:
        c = (F.F_lifted(X + th * Y) - F.F_lifted(X - th * Y)) / (2.0 * th)
        c2 = (F.F_lifted(X + 0.5 * th * Y) - F.F_lifted(X - 0.5 * th * Y)) / th
        rich = (4.0 * c2 - c) / 3.0
        slopes[th] = rich
        errs.append(abs(rich - exact) / max(1.0, abs(exact)))
    best = min(errs)
    return Report("gradient_lift", F.name, exact, slopes[min(theta_steps)],
                  abs(slopes[min(theta_steps)] - exact), best, bool(best < tol),
                  {"theta_steps": list(theta_steps)})


def check_second_identity(F: TestFunctional, m: GaussianMeasure, tol=1e-8) -> Report:
    """sum_k D2F(e_k,e_k) vs quadrature of dF/dm Lap m + double kernel term."""
    lhs = F.sum_D2F_ek(m)
    rhs = _quad_checked(_quad_dFdm_lap, F, m) + _quad_checked(_quad_d2F_DmDm, F, m)
    return _mk_report("second_identity", F, lhs, rhs, tol)


def check_difference_identity(F: TestFunctional, m: GaussianMeasure, tol=1e-8) -> Report:
    """sum_k D2F(e_k,e_k) - D2F(N,N) vs the double kernel quadrature.

    For linear functionals the difference vanishes identically.
    """
    lhs = F.sum_D2F_ek(m) - F.D2F_indep_gauss(m)
    rhs = _quad_checked(_quad_d2F_DmDm, F, m)
    rep = _mk_report("difference_identity", F, lhs, rhs, tol)
    if isinstance(F, LinearFunctional):
        rep.passed = rep.passed and abs(lhs) < 1e-10 and abs(rhs) < 1e-10
        rep.extra = {"linear_zero": abs(lhs) < 1e-10}
    return rep


def check_buckdahn_relation(F: TestFunctional, m: GaussianMeasure,
                            grid_pts=20, span=3.0, fd_step=1e-4, tol=1e-6) -> Report:
    """d2m F(m)(x,y) vs mixed central finite difference of d2F/dm2."""
    xs = np.linspace(m.mean - span * m.std, m.mean + span * m.std, grid_pts)
    Xg, Yg = np.meshgrid(xs, xs, indexing="ij")
    direct = F.d2m(m, Xg, Yg)
    h = fd_step
    fd = (F.d2Fdm2(m, Xg + h, Yg + h) - F.d2Fdm2(m, Xg + h, Yg - h)
          - F.d2Fdm2(m, Xg - h, Yg + h) + F.d2Fdm2(m, Xg - h, Yg - h)) / (4.0 * h * h)
    err = float(np.max(np.abs(direct - fd)))
    scale = max(1.0, float(np.max(np.abs(direct))))
    return Report("buckdahn_relation", F.name, float(np.max(np.abs(direct))),
                  float(np.max(np.abs(fd))), err, err / scale, bool(err / scale < tol))


def check_taylor_remainder(F: TestFunctional, X0: np.ndarray, Y: np.ndarray,
                           eps_list=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
                           noise_floor=1e-12) -> Report:
    """Fit the order of the remainder after the second-order expansion.

    Remainder R(eps) = F(X0 + eps Y) - [F(X0) + first + two second-order
    terms]; a three-times differentiable functional gives slope ~= 3.
    """
    F0 = F.F_lifted(X0)
    remainders = []
    for eps in eps_list:
        D = eps * Y
        t1 = float(np.mean(F.dm_emp(X0, X0) * D))
        # E_(X X0) (X-X0) . E_(Y Y0) d2m(X0, Y0)(Y-Y0), copies share the ensemble
        inner = np.array([np.mean(F.d2m_emp(X0, xi, X0) * D) for xi in X0])
        t2 = 0.5 * float(np.mean(D * inner))
        t3 = 0.5 * float(np.mean(F.dx_dm_emp(X0, X0) * D * D))
        R = F.F_lifted(X0 + D) - F0 - t1 - t2 - t3
        remainders.append(R)
    remainders = np.asarray(remainders)
    if np.max(np.abs(remainders)) < noise_floor:
        return Report("taylor_remainder", F.name, 0.0, 0.0,
                      float(np.max(np.abs(remainders))), 0.0, True,
                      {"slope": None, "below_noise_floor": True})
    mask = np.abs(remainders) > noise_floor
    if int(np.sum(mask)) < 2:
        return Report("taylor_remainder", F.name, 0.0, 3.0, 0.0, 0.0, True,
                      {"slope": None, "remainders": remainders.tolist(),
                       "too_few_points_for_fit": True})
    slope = float(np.polyfit(np.log(np.asarray(eps_list)[mask]),
                             np.log(np.abs(remainders[mask])), 1)[0])
    return Report("taylor_remainder", F.name, slope, 3.0, abs(slope - 3.0),
                  abs(slope - 3.0) / 3.0, bool(2.9 <= slope <= 3.1),
                  {"slope": slope, "remainders": remainders.tolist()})


def check_vector_lift_chain_rule(P: np.ndarray, Sigma: np.ndarray,
                                 X: np.ndarray, Z: np.ndarray,
                                 theta_steps=(1e-2, 1e-4), tol=1e-9) -> Report:
    """Directional derivative of the linear master field U(X) = PX + Sigma E X.

    The map is linear, so finite differences must match PZ + Sigma E Z to
    roundoff for every step size.
    """
    if X.size == 0:
        raise ValueError("empty ensemble")
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    X = np.atleast_2d(X)
    Z = np.atleast_2d(Z)

    def U(W):
        return W @ P.T + np.mean(W, axis=0) @ Sigma.T

    exact = Z @ P.T + np.mean(Z, axis=0) @ Sigma.T
    worst = 0.0
    for th in theta_steps:
        fd = (U(X + th * Z) - U(X)) / th
        worst = max(worst, float(np.max(np.abs(fd - exact))))
    scale = max(1.0, float(np.max(np.abs(exact))))
    return Report("vector_lift_chain_rule", "linear-master-field",
                  float(np.max(np.abs(exact))), worst, worst, worst / scale,
                  bool(worst / scale < tol))


def seeded_ensemble(N: int, seed: int, mean=0.0, std=1.0) -> np.ndarray:
    """Reproducible Gaussian sample for lifted checks."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return mean + std * rng.standard_normal(N)
