"""Acceptance gate: one check per criterion, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``. Criteria 7 to 9 need the real
datasets described in ``src/odesel/data/datasets/README.md``.
"""

import math
import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from test_likelihood import TIGHT, _exp3, _golden  # noqa: E402

from odesel.cli import read_csv  # noqa: E402
from odesel.integrator import integrate, integrate_with_variations  # noqa: E402
from odesel.likelihood import Dataset, FitOptions, ThetaVector, fit_mle, hessian_per_obs, score_per_obs  # noqa: E402
from odesel.model_dsl import bundled_model, bundled_model_names  # noqa: E402
from odesel.simulation import kl_linear, power_study, size_study  # noqa: E402
from odesel.swtest import Decision, VarianceComponents, regularized_variance, sw_test  # noqa: E402
from odesel.tournament import run_tournament  # noqa: E402

DATA_DIR = Path(os.environ.get("ODESEL_DATA_DIR", Path(__file__).parents[1] / "src" / "odesel" / "data" / "datasets"))
PHOSPHORUS = "phosphorus.csv"
GAUSE_EXIGUUS = "gause_aurelia_exiguus.csv"
GAUSE_F39 = "gause_1934_book_f39.1.csv"
GAUSE_MODELS = [f"gause_model{k}" for k in range(1, 5)]

RESULTS: dict[int, tuple[bool, str]] = {}


def _dataset(name):
    path = DATA_DIR / name
    if not path.is_file():
        return None, f"dataset missing: {path} (see datasets README for provenance)"
    return read_csv(path), ""


def _size_check(sampling, reps):
    res = size_study([0.1, 0.3], reps=reps, n=300, tau=150.0, alpha=0.05, seed=0, sampling=sampling)
    rates = res.rates
    ok = bool(np.all((rates >= 0.03) & (rates <= 0.08)))
    cells = ", ".join(f"delta={d}: {r:.3f} ({f} failed)" for d, r, f in zip(res.grid, rates, res.failures))
    return ok, f"{sampling} rates {cells}; bounds [0.03, 0.08]"


def criterion_1():
    return _size_check("uniform", 500)


def criterion_2():
    return _size_check("equispaced", 200)


def _monotone(res):
    r, se = res.rates, res.mc_se
    steps = all(r[k + 1] >= r[k] - 2 * math.hypot(se[k], se[k + 1]) for k in range(len(r) - 1))
    return steps and r[-1] - r[0] >= 0.2


def criterion_3():
    a = power_study(psi5_grid=[0.0025, 0.05, 0.1, 0.25], reps=100, n=20, sigma=0.1, seed=0)
    b = power_study(n_grid=[20, 60, 110], reps=100, psi5=0.1, sigma=0.2, seed=0)
    ok = _monotone(a) and _monotone(b)
    fmt = lambda res: ", ".join(f"{g:g}: {r:.2f}" for g, r in zip(res.grid, res.rates))  # noqa: E731
    return ok, f"psi5 grid [{fmt(a)}]; n grid [{fmt(b)}]"


def criterion_4():
    rng = np.random.default_rng(20240601)
    m = bundled_model("exp_growth3")
    worst = 0.0
    for _ in range(5):
        t = np.sort(rng.uniform(0.1, 2.0, 2))
        xi, psi, s2 = rng.uniform(0.5, 2, 3), rng.uniform(-0.8, 0.8, 2), rng.uniform(0.2, 2, 3)
        y = _exp3(xi, psi, t) + rng.normal(0, 0.5, (2, 3))
        th = ThetaVector(s2, xi, psi)
        var = integrate_with_variations(m, th.eta, t, TIGHT)
        S = score_per_obs(m, th, Dataset(t, y), var.base)
        H = hessian_per_obs(m, th, Dataset(t, y), var)
        for i in range(2):
            J0, H0 = _golden(y[i], t[i], s2, xi, psi)
            dev_s = np.max(np.abs(S[i] - J0)) / np.max(np.abs(J0))
            dev_h = np.max(np.abs(H[i] - H0)) / np.max(np.abs(H0))
            worst = max(worst, dev_s, dev_h)
    return worst <= 1e-8, f"max relative deviation {worst:.2e} over 10 points (tolerance 1e-8)"


def _eta(m, rng):
    n = m.d + m.p
    eta = rng.uniform(0.5, 1.5, n)
    if m.name == "linear_inflow":
        eta[1] = -eta[1]
    if m.name == "gause_model2":
        eta[-1] = 10.0
    return eta


def criterion_5():
    times = np.linspace(0, 3, 7)
    first = second = 0.0
    for name in bundled_model_names():
        m = bundled_model(name)
        eta = _eta(m, np.random.default_rng(5))
        sol = integrate_with_variations(m, eta, times, TIGHT)
        M = m.d + m.p

        def x(de):
            return integrate(m, eta + de, times, TIGHT).states

        for a in range(M):
            ea = np.zeros(M)
            ea[a] = 1e-6 * (1 + abs(eta[a]))
            fd = (x(ea) - x(-ea)) / (2 * ea[a])
            first = max(first, np.max(np.abs(sol.sens[:, :, a] - fd) / (1 + np.abs(fd))))
            for b in range(a, M):
                ha, hb = np.zeros(M), np.zeros(M)
                ha[a] = 1e-4 * (1 + abs(eta[a]))
                hb[b] = 1e-4 * (1 + abs(eta[b]))
                fd2 = (x(ha + hb) - x(ha - hb) - x(hb - ha) + x(-ha - hb)) / (4 * ha[a] * hb[b])
                second = max(second, np.max(np.abs(sol.var2[:, :, a, b] - fd2) / (1 + np.abs(fd2))))
    ok = first < 1e-4 and second < 1e-3
    return ok, f"first order {first:.1e} (< 1e-4), second order {second:.1e} (< 1e-3), {len(bundled_model_names())} models"


def criterion_6():
    rng = np.random.default_rng(6)
    h = 0.3
    cov = np.array([[1.5, -0.4], [-0.4, 0.8]])
    draws = rng.multivariate_normal([0.0, 0.0], cov, (100_000, 2))
    (A1, B1), (A2, B2) = draws[:, 0].T, draws[:, 1].T
    lr = 0.5 * (A1 - (1 + h) * B1 + (1 + h) * A2 - B2)
    emp = np.var(math.sqrt(2) * lr, ddof=1)
    want = regularized_variance(VarianceComponents(cov[0, 0], cov[0, 1], cov[1, 1]), h)
    se = want * math.sqrt(2 / (lr.size - 1))
    return abs(emp - want) <= 3 * se, f"empirical {emp:.5f} vs formula {want:.5f}, 3 s.e. = {3 * se:.5f}"


def _tournament(data):
    models = [bundled_model(n) for n in GAUSE_MODELS]
    return run_tournament(models, data, alpha=0.05, opts=FitOptions(seed=0))


def criterion_7():
    data, msg = _dataset(GAUSE_F39)
    if data is None:
        return False, msg
    rep = _tournament(data)
    want = {(0, 1): (-4.433, Decision.FAVOR_B), (1, 3): (5.802, Decision.FAVOR_A)}
    ok, parts = len(rep.rows) == 6, []
    for row in rep.rows:
        key = (row.index_a, row.index_b)
        t = row.result.t_stat
        parts.append(f"({key[0] + 1},{key[1] + 1}) {t:.3f} {row.decision.value}")
        if key in want:
            ref, dec = want[key]
            ok &= row.decision is dec and abs(t - ref) <= 0.3 * abs(ref)
        else:
            ok &= row.decision is Decision.RETAIN
    return ok, "; ".join(parts)


def criterion_8():
    data, msg = _dataset(GAUSE_EXIGUUS)
    if data is None:
        return False, msg
    rep = _tournament(data)
    ok = len(rep.rows) == 6 and all(r.decision is Decision.RETAIN for r in rep.rows)
    fit = rep.fits[0]
    names = fit.theta_names
    est = dict(zip(names, fit.theta_hat.as_array()))
    ref = {"predator": 101.2, "psi1": 0.660, "psi4": 1.122}
    for k, v in ref.items():
        ok &= abs(est[k] - v) <= 0.05 * v
    stats = ", ".join(f"{r.result.t_stat:.3f}" for r in rep.rows)
    fitted = ", ".join(f"{k}={est[k]:.4g}" for k in ref)
    return ok, f"statistics [{stats}]; model 1 {fitted}"


def criterion_9():
    data, msg = _dataset(PHOSPHORUS)
    if data is None:
        return False, msg
    opts = FitOptions(seed=0)
    fa = fit_mle(bundled_model("exponential"), data, None, opts)
    fb = fit_mle(bundled_model("inverse_linear"), data, None, opts)
    res = sw_test(fa, fb, 0.05)
    ok = res.decision is Decision.RETAIN and abs(res.t_stat + 0.359) <= 0.15
    return ok, f"statistic {res.t_stat:.3f} ({res.decision.value}); target -0.359 +/- 0.15"


def criterion_10():
    rng = np.random.default_rng(10)
    worst = 0.0
    for delta in rng.uniform(0.01, 1.0, 3):
        ratio = kl_linear(2 * delta, 7.0, -0.05, 150.0) / kl_linear(delta, 7.0, -0.05, 150.0)
        worst = max(worst, abs(ratio / 4 - 1))
    return worst <= 1e-10, f"max relative deviation of ratio from 4: {worst:.1e}"


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 11)}


def _line(k, ok, detail):
    return f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    ok, detail = CRITERIA[k]()
    RESULTS[k] = (ok, detail)
    assert ok, _line(k, ok, detail)


if __name__ == "__main__":
    failed = 0
    for k, fn in CRITERIA.items():
        ok, detail = fn()
        failed += not ok
        print(_line(k, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
