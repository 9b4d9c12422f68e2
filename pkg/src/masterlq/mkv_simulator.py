"""Particle simulation of the controlled McKean-Vlasov dynamics.

Euler-Maruyama on an N-particle ensemble:

    x_i <- x_i + g(x_i, ybar, v_i) dt + sigma sqrt(dt) xi_i + beta sqrt(dt) eta

with xi_i per-particle Gaussians, eta one shared Gaussian per step (common
noise), and ybar the empirical mean, which stands in for the conditional
law given the common-noise path.  All noise comes from a counter-based
generator keyed on (seed, stream, step), so trajectories are bit-identical
regardless of scheduling or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lq_model as lq
from . import riccati as ric

STREAM_IDIOSYNCRATIC = 0
STREAM_COMMON = 1
STREAM_INITIAL = 2
STREAM_PERTURBATION = 3


def _normals(seed: int, stream: int, step: int, shape) -> np.ndarray:
    key = np.array([seed, stream], dtype=np.uint64)
    counter = np.array([0, 0, 0, step], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return rng.standard_normal(shape)


@dataclass
class ParticleEnsemble:
    states: np.ndarray      # (N, n)
    seed: int = 0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.N < 1:
            raise ValueError("need at least one particle")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite particle state")

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def mean(self) -> np.ndarray:
        return self.states.mean(axis=0)


def gaussian_ensemble(N: int, n: int, seed: int, mean=0.0, std=1.0) -> ParticleEnsemble:
    z = _normals(seed, STREAM_INITIAL, 0, (N, n))
    return ParticleEnsemble(np.asarray(mean) + np.asarray(std) * z, seed=seed)


def uniform_ensemble(N: int, n: int, seed: int, low=-1.0, high=1.0) -> ParticleEnsemble:
    key = np.array([seed, STREAM_INITIAL], dtype=np.uint64)
    counter = np.array([0, 0, 0, 1], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return ParticleEnsemble(rng.uniform(low, high, (N, n)), seed=seed)


@dataclass(frozen=True)
class SimConfig:
    steps: int
    seed: int = 0
    common_seed: int | None = None   # defaults to seed; split for invariance tests
    store_states: bool = False

    def dt(self, T: float) -> float:
        return T / self.steps


@dataclass
class FeedbackPolicy:
    """Linear feedback v = K1(t) x + K2(t) ybar.

    OPTIMAL_MFC / OPTIMAL_MFG use the Riccati gains
    K1 = -R^{-1}B* P(t), K2 = -R^{-1}B* Sigma(t); PERTURBED adds eps*Delta
    to those gains; CUSTOM_LINEAR uses constant user gains.
    """

    kind: str                              # OPTIMAL_MFC | OPTIMAL_MFG | PERTURBED | CUSTOM_LINEAR
    sol: ric.RiccatiSolution | None = None
    K1: np.ndarray | None = None
    K2: np.ndarray | None = None
    eps: float = 0.0
    delta1: np.ndarray | None = None
    delta2: np.ndarray | None = None

    def gains(self, t: float, model: lq.LQModelSpec):
        if self.kind == "CUSTOM_LINEAR":
            return self.K1, self.K2
        ev = ric.eval_at(self.sol, t)
        RB = model.Rinv_Bt()
        K1 = -RB @ ev["P"]
        K2 = -RB @ ev["Sigma"]
        if self.kind == "PERTURBED":
            K1 = K1 + self.eps * self.delta1
            K2 = K2 + self.eps * self.delta2
        return K1, K2


def optimal_policy(sol: ric.RiccatiSolution) -> FeedbackPolicy:
    kind = "OPTIMAL_MFC" if sol.kind == "MFC" else "OPTIMAL_MFG"
    return FeedbackPolicy(kind=kind, sol=sol)


def zero_policy(model: lq.LQModelSpec) -> FeedbackPolicy:
    return FeedbackPolicy(kind="CUSTOM_LINEAR",
                          K1=np.zeros((model.d, model.n)),
                          K2=np.zeros((model.d, model.n)))


def perturbation_directions(model: lq.LQModelSpec, seed: int):
    """Fixed unit-Frobenius-norm gain perturbations drawn once from the seed."""
    z = _normals(seed, STREAM_PERTURBATION, 0, (2, model.d, model.n))
    d1 = z[0] / np.linalg.norm(z[0])
    d2 = z[1] / np.linalg.norm(z[1])
    return d1, d2


@dataclass
class Trajectory:
    times: np.ndarray                 # (steps+1,)
    ybar: np.ndarray                  # (steps+1, n)
    second_moment: np.ndarray         # (steps+1, n) diagonal E[x_k^2]
    common_path: np.ndarray           # (steps+1, n) cumulative beta*b(t)
    running_cost: np.ndarray          # (N,) accumulated integral of f per particle
    running_cost_partial: np.ndarray  # (steps+1,) mean partial sums for CSV
    final_states: np.ndarray          # (N, n)
    states_history: np.ndarray | None = None   # (steps+1, N, n) if requested
    controls_history: np.ndarray | None = None


def simulate(model: lq.LQModelSpec, policy: FeedbackPolicy,
             X0: ParticleEnsemble, cfg: SimConfig) -> Trajectory:
    """Euler-Maruyama forward pass; deterministic given (seed, N, steps)."""
    N, n = X0.N, X0.n
    if n != model.n:
        raise ValueError(f"ensemble dimension {n} != model dimension {model.n}")
    dt = cfg.dt(model.T)
    sdt = np.sqrt(dt)
    cseed = cfg.seed if cfg.common_seed is None else cfg.common_seed

    x = X0.states.copy()
    times = np.linspace(0.0, model.T, cfg.steps + 1)
    ybar = np.empty((cfg.steps + 1, n))
    m2 = np.empty((cfg.steps + 1, n))
    bpath = np.zeros((cfg.steps + 1, n))
    run = np.zeros(N)
    run_partial = np.zeros(cfg.steps + 1)
    hist = np.empty((cfg.steps + 1, N, n)) if cfg.store_states else None
    ctrl_hist = np.empty((cfg.steps, N, model.d)) if cfg.store_states else None

    S, Qb, Q, R = model.S, model.Qbar, model.Q, model.R
    for k in range(cfg.steps):
        t = times[k]
        yb = x.mean(axis=0)
        ybar[k] = yb
        m2[k] = np.mean(x * x, axis=0)
        if hist is not None:
            hist[k] = x
        K1, K2 = policy.gains(t, model)
        v = x @ K1.T + yb @ K2.T
        if ctrl_hist is not None:
            ctrl_hist[k] = v
        # left-endpoint running cost
        e = x - yb @ S.T
        f = 0.5 * (np.einsum("ij,jk,ik->i", x, Q, x)
                   + np.einsum("ij,jk,ik->i", v, R, v)
                   + np.einsum("ij,jk,ik->i", e, Qb, e))
        run += f * dt
        run_partial[k + 1] = run_partial[k] + float(np.mean(f)) * dt

        drift = x @ model.A.T + yb @ model.Abar.T + v @ model.B.T
        x = x + drift * dt
        if model.sigma > 0.0:
            x = x + model.sigma * sdt * _normals(cfg.seed, STREAM_IDIOSYNCRATIC, k, (N, n))
        if model.beta > 0.0:
            eta = _normals(cseed, STREAM_COMMON, k, (n,))
            x = x + model.beta * sdt * eta
            bpath[k + 1] = bpath[k] + model.beta * sdt * eta
        else:
            bpath[k + 1] = bpath[k]
        if not np.all(np.isfinite(x)):
            raise ric.NumericalFailure(k)

    ybar[-1] = x.mean(axis=0)
    m2[-1] = np.mean(x * x, axis=0)
    if hist is not None:
        hist[-1] = x
    return Trajectory(times=times, ybar=ybar, second_moment=m2, common_path=bpath,
                      running_cost=run, running_cost_partial=run_partial,
                      final_states=x, states_history=hist, controls_history=ctrl_hist)


def estimate_cost(model: lq.LQModelSpec, traj: Trajectory) -> dict:
    """Empirical cost J_hat = mean(total per-particle cost), with stderr."""
    x, yb = traj.final_states, traj.ybar[-1]
    e = x - yb @ model.ST.T
    h = 0.5 * (np.einsum("ij,jk,ik->i", x, model.QT, x)
               + np.einsum("ij,jk,ik->i", e, model.QbarT, e))
    total = traj.running_cost + h
    N = total.size
    stderr = float(np.std(total, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return {"J_hat": float(np.mean(total)), "stderr": stderr}


def eval_value_mfc(sol: ric.RiccatiSolution, X: np.ndarray, t: float) -> float:
    """V(X, t) with empirical expectations, from the MFC Riccati solution."""
    ev = ric.eval_at(sol, t)
    X = np.atleast_2d(X)
    yb = X.mean(axis=0)
    quad = float(np.mean(np.einsum("ij,jk,ik->i", X, ev["P"], X)))
    return 0.5 * quad + 0.5 * float(yb @ ev["Sigma"] @ yb) + ev["lam"]


def check_cost_matches_value(model: lq.LQModelSpec, sol: ric.RiccatiSolution,
                             X0: ParticleEnsemble, cfg: SimConfig,
                             dt_const: float = 10.0,
                             common_replicas: int | None = None) -> dict:
    """Simulated optimal cost vs the Riccati value V(X0, 0).

    With common noise the realized b-path does not average out over
    particles, so J is additionally averaged over several common-noise
    replicas and the replica scatter enters the standard error.
    """
    if sol.kind != "MFC":
        raise ValueError("cost matching requires an MFC solution")
    if common_replicas is None:
        common_replicas = 8 if model.beta > 0.0 else 1
    policy = optimal_policy(sol)
    Js, errs = [], []
    base_common = cfg.seed if cfg.common_seed is None else cfg.common_seed
    for r in range(common_replicas):
        c = SimConfig(steps=cfg.steps, seed=cfg.seed,
                      common_seed=base_common + 7919 * r,
                      store_states=cfg.store_states)
        est = estimate_cost(model, simulate(model, policy, X0, c))
        Js.append(est["J_hat"])
        errs.append(est["stderr"])
    J_hat = float(np.mean(Js))
    R = len(Js)
    scatter = float(np.std(Js, ddof=1)) / np.sqrt(R) if R > 1 else 0.0
    stderr = float(np.hypot(np.mean(errs) / np.sqrt(R), scatter))
    V = eval_value_mfc(sol, X0.states, 0.0)
    tol = 3.0 * stderr + dt_const * cfg.dt(model.T)
    gap = abs(J_hat - V)
    return {"J_hat": J_hat, "stderr": stderr, "V_reference": V,
            "common_replicas": R,
            "gap": gap, "tolerance": tol, "pass": bool(gap <= tol)}


def check_optimality_gap(model: lq.LQModelSpec, sol: ric.RiccatiSolution,
                         X0: ParticleEnsemble, cfg: SimConfig,
                         eps_list=(0.1, 0.2, 0.4)) -> dict:
    """Cost increase under fixed random gain perturbations of size eps.

    Common random numbers (same cfg) across runs make the gaps directly
    comparable; near the optimum they grow ~ eps^2.
    """
    d1, d2 = perturbation_directions(model, cfg.seed)
    base = estimate_cost(model, simulate(model, optimal_policy(sol), X0, cfg))
    gaps = {}
    for eps in eps_list:
        pol = FeedbackPolicy(kind="PERTURBED", sol=sol, eps=eps, delta1=d1, delta2=d2)
        est = estimate_cost(model, simulate(model, pol, X0, cfg))
        gaps[eps] = est["J_hat"] - base["J_hat"]
    eps_arr = np.asarray(list(gaps))
    gap_arr = np.asarray([gaps[e] for e in gaps])
    quad_coef = float(np.linalg.lstsq(eps_arr[:, None] ** 2, gap_arr, rcond=None)[0][0])
    monotone = bool(np.all(gap_arr >= -3.0 * base["stderr"]))
    return {"J_optimal": base["J_hat"], "stderr": base["stderr"], "gaps": gaps,
            "quadratic_coefficient": quad_coef,
            "all_nonnegative": monotone, "pass": monotone and quad_coef > 0.0}


def _dXL(model: lq.LQModelSpec, x: np.ndarray, yb: np.ndarray,
         Z: np.ndarray, Zbar: np.ndarray) -> np.ndarray:
    """Lagrangian gradient for the LQ data, per particle:

    (Q+Qbar)x - Qbar S ybar + (S*Qbar S - S*Qbar) ybar + A*Z + Abar* E Z.
    """
    S, Qb = model.S, model.Qbar
    ymix = (-Qb @ S + S.T @ Qb @ S - S.T @ Qb) @ yb
    return x @ (model.Q + Qb).T + ymix + Z @ model.A + Zbar @ model.Abar


def check_max_principle(model: lq.LQModelSpec, sol: ric.RiccatiSolution,
                        X0: ParticleEnsemble, cfg: SimConfig,
                        mode: str = "deterministic") -> dict:
    """Co-state residual of the (stochastic) maximum principle.

    Z(t) = P(t)X(t) + Sigma(t) ybar(t).  Deterministic mode (sigma, beta
    forced to 0) checks max_i |dZ + D_X L dt| / dt = O(dt); stochastic mode
    (beta forced to 0) checks mean_i |dZ + D_X L dt - K dw|^2 = O(dt^2)
    with K dw = sigma (P dw_i + Sigma mean(dw)).
    """
    if sol.kind != "MFC":
        raise ValueError("maximum-principle check requires an MFC solution")
    if mode == "deterministic":
        model = _with_noise(model, 0.0, 0.0)
    elif mode == "stochastic":
        model = _with_noise(model, model.sigma, 0.0)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    cfg = SimConfig(steps=cfg.steps, seed=cfg.seed, common_seed=cfg.common_seed,
                    store_states=True)
    traj = simulate(model, optimal_policy(sol), X0, cfg)
    dt = cfg.dt(model.T)
    sdt = np.sqrt(dt)

    Z = np.empty_like(traj.states_history)
    for k, t in enumerate(traj.times):
        ev = ric.eval_at(sol, t)
        Z[k] = traj.states_history[k] @ ev["P"].T + traj.ybar[k] @ ev["Sigma"].T

    worst = 0.0
    stats = []
    for k in range(cfg.steps):
        dZ = Z[k + 1] - Z[k]
        g = _dXL(model, traj.states_history[k], traj.ybar[k], Z[k], Z[k].mean(axis=0))
        resid = dZ + dt * g
        if mode == "stochastic" and model.sigma > 0.0:
            dw = sdt * _normals(cfg.seed, STREAM_IDIOSYNCRATIC, k, traj.states_history[k].shape)
            ev = ric.eval_at(sol, traj.times[k])
            resid = resid - model.sigma * (dw @ ev["P"].T + dw.mean(axis=0) @ ev["Sigma"].T)
            stats.append(float(np.mean(np.sum(resid ** 2, axis=1))))
        else:
            worst = max(worst, float(np.max(np.abs(resid))) / dt)

    # terminal co-state against the terminal cost gradient
    xT, ybT = traj.final_states, traj.ybar[-1]
    ST, QbT = model.ST, model.QbarT
    DXh = (xT @ (model.QT + QbT).T
           + ybT @ (ST.T @ QbT @ ST - ST.T @ QbT - QbT @ ST).T)
    terminal_gap = float(np.max(np.abs(Z[-1] - DXh)))

    out = {"mode": mode, "dt": dt, "terminal_gap": terminal_gap,
           "terminal_pass": bool(terminal_gap <= 1e-8)}
    if mode == "deterministic":
        out["residual"] = worst           # already divided by dt: O(dt)
        out["C"] = worst / dt
    else:
        out["mean_sq_residual"] = float(np.max(stats)) if stats else 0.0
    return out


def _with_noise(model: lq.LQModelSpec, sigma: float, beta: float) -> lq.LQModelSpec:
    from dataclasses import replace
    return replace(model, sigma=sigma, beta=beta)


def trajectory_to_csv(traj: Trajectory, path: str) -> None:
    """Per-step rows: t, ybar, second moments, running-cost partial sum."""
    import csv as _csv
    n = traj.ybar.shape[1]
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["t"] + [f"ybar_{i}" for i in range(n)]
                   + [f"m2_{i}" for i in range(n)] + ["running_cost"])
        for k, t in enumerate(traj.times):
            w.writerow([repr(float(t))]
                       + [repr(float(v)) for v in traj.ybar[k]]
                       + [repr(float(v)) for v in traj.second_moment[k]]
                       + [repr(float(traj.running_cost_partial[k]))])
