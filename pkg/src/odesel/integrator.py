"""Adaptive Dormand-Prince 5(4) integration of a model, its forward
sensitivities and its second-order variational equations.

State, sensitivities ``s = dx/deta`` and second derivatives
``z = d2x/deta2`` are integrated as one flattened system so they share a
single step sequence. Observation times are hit exactly by clamping the
step, so there is no dense-output interpolation error.

Each model gets a compiled kernel: the symbolic partials are emitted as
Python source, prepended to a generic driver and compiled with numba. The
generated module is written to a cache directory (``ODESEL_CACHE_DIR`` or
``~/.cache/odesel``) keyed by a hash of its source, so compilation happens
once per machine.
"""

from __future__ import annotations

import hashlib
import importlib.util
import os
import sys
import tempfile
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._kernel_template import KERNEL_BODY
from .expr import Const, to_source

#: number of integrator invocations per mode ("base", "sens", "var")
CALL_COUNTS: Counter = Counter()

_MODES = {0: "base", 1: "sens", 2: "var"}
_compile_lock = threading.Lock()


class IntegrationError(RuntimeError):
    """The integrator could not reach the requested output times."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.10g}")
        self.t = t


class StepSizeUnderflow(IntegrationError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


class NonFiniteError(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_steps: int = 1_000_000
    initial_step: Optional[float] = None
    min_step: Optional[float] = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if self.min_step is not None and self.min_step < 0:
            raise ValueError("min_step must be non-negative")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray   # (n,)
    states: np.ndarray  # (n, d)


@dataclass(frozen=True)
class SensitivityTrajectory:
    base: Trajectory
    sens: np.ndarray  # (n, d, d+p): d x_j(t_i) / d eta_k

    @property
    def times(self):
        return self.base.times

    @property
    def states(self):
        return self.base.states


@dataclass(frozen=True)
class VariationalTrajectory:
    base: SensitivityTrajectory
    var2: np.ndarray  # (n, d, d+p, d+p)

    @property
    def times(self):
        return self.base.times

    @property
    def states(self):
        return self.base.states

    @property
    def sens(self):
        return self.base.sens


# --------------------------------------------------------------------------
# kernel generation
# --------------------------------------------------------------------------


def _nonzero(e) -> bool:
    return not (isinstance(e, Const) and e.value == 0.0)


def kernel_source(model) -> str:
    d, p = model.d, model.p
    src = lambda e: to_source(e, x="y", p="p", t="t")  # noqa: E731
    lines = [
        "import numpy as np",
        "from numba import njit",
        "",
        f"# model: {model.name}",
        f"D = {d}",
        f"P = {p}",
        "",
        "",
        '@njit(cache=True, error_model="numpy")',
        "def derivs(t, y, p, F, Fx, Fp, Fxx, Fxp, Fpp, order):",
    ]
    body = [f"F[{j}] = {src(e)}" for j, e in enumerate(model.rhs)]
    first = []
    for j in range(d):
        for k in range(d):
            if _nonzero(model.dF_dx[j][k]):
                first.append(f"Fx[{j}, {k}] = {src(model.dF_dx[j][k])}")
        for a in range(p):
            if _nonzero(model.dF_dpsi[j][a]):
                first.append(f"Fp[{j}, {a}] = {src(model.dF_dpsi[j][a])}")
    second = []
    for j in range(d):
        for k in range(d):
            for l in range(k, d):
                e = model.d2F_dx2[j][k][l]
                if _nonzero(e):
                    second.append(f"Fxx[{j}, {k}, {l}] = {src(e)}")
                    if l != k:
                        second.append(f"Fxx[{j}, {l}, {k}] = Fxx[{j}, {k}, {l}]")
            for a in range(p):
                e = model.d2F_dxdpsi[j][k][a]
                if _nonzero(e):
                    second.append(f"Fxp[{j}, {k}, {a}] = {src(e)}")
        for a in range(p):
            for b in range(a, p):
                e = model.d2F_dpsi2[j][a][b]
                if _nonzero(e):
                    second.append(f"Fpp[{j}, {a}, {b}] = {src(e)}")
                    if b != a:
                        second.append(f"Fpp[{j}, {b}, {a}] = Fpp[{j}, {a}, {b}]")
    lines += ["    " + s for s in body]
    if first:
        lines.append("    if order >= 1:")
        lines += ["        " + s for s in first]
    if second:
        lines.append("    if order >= 2:")
        lines += ["        " + s for s in second]
    return "\n".join(lines) + "\n" + KERNEL_BODY


def _cache_dir() -> Path:
    env = os.environ.get("ODESEL_CACHE_DIR")
    candidates = [Path(env)] if env else []
    candidates += [Path.home() / ".cache" / "odesel", Path(tempfile.gettempdir()) / "odesel-cache"]
    for c in candidates:
        try:
            c.mkdir(parents=True, exist_ok=True)
            probe = c / ".probe"
            probe.write_text("")
            probe.unlink()
            return c
        except OSError:
            continue
    raise OSError("no writable directory for compiled kernels")


def compile_kernel(model):
    """Return the compiled kernel module for ``model``."""
    source = kernel_source(model)
    digest = hashlib.sha1(source.encode()).hexdigest()[:20]
    modname = f"_odesel_kernel_{digest}"
    with _compile_lock:
        if modname in sys.modules:
            return sys.modules[modname]
        path = _cache_dir() / f"{modname}.py"
        if not path.exists() or path.read_text() != source:
            tmp = path.with_suffix(f".{os.getpid()}.tmp")
            tmp.write_text(source)
            os.replace(tmp, path)
        spec = importlib.util.spec_from_file_location(modname, path)
        module = importlib.util.module_from_spec(spec)
        sys.modules[modname] = module
        spec.loader.exec_module(module)
        return module


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def _check_inputs(model, eta, times):
    eta = np.asarray(eta, dtype=float).ravel()
    times = np.asarray(times, dtype=float).ravel()
    if eta.shape[0] != model.d + model.p:
        raise ValueError(f"eta has length {eta.shape[0]}, expected {model.d + model.p}")
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta must be finite")
    if times.size == 0:
        raise ValueError("times is empty")
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    if times[0] < 0:
        raise ValueError("times must be >= 0")
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted ascending")
    return eta, times


def _run(model, eta, times, opts: Optional[IntegratorOptions], mode: int) -> np.ndarray:
    opts = opts or IntegratorOptions()
    eta, times = _check_inputs(model, eta, times)
    d, p = model.d, model.p
    m = d + p
    size = d + (d * m if mode >= 1 else 0) + (d * m * m if mode >= 2 else 0)
    y0 = np.zeros(size)
    y0[:d] = eta[:d]
    if mode >= 1:
        s0 = np.zeros((d, m))
        s0[:, :d] = np.eye(d)
        y0[d : d + d * m] = s0.ravel()
    psi = eta[d:] if p else np.zeros(1)
    out = np.empty((times.size, size))
    span = float(times[-1])
    min_step = opts.min_step if opts.min_step is not None else 1e-12 * span
    h_init = opts.initial_step or 0.0
    CALL_COUNTS[_MODES[mode]] += 1
    status, t_fail, *_ = model.kernel.solve(
        y0, np.ascontiguousarray(psi), times, mode,
        opts.rel_tol, opts.abs_tol, opts.max_steps, h_init, min_step, out,
    )
    if status == 1:
        raise StepSizeUnderflow("step size underflow (problem too stiff for the budget)", t_fail)
    if status == 2:
        raise MaxStepsExceeded(f"max_steps={opts.max_steps} exceeded", t_fail)
    if status == 3:
        raise NonFiniteError("non-finite right-hand side", t_fail)
    return times, out


def integrate(model, eta, times, opts: Optional[IntegratorOptions] = None) -> Trajectory:
    """Solve ``x' = F(x, psi, t), x(0) = xi`` and report ``x`` at ``times``.

    ``eta = (xi, psi)``. ``times[0]`` may be 0, in which case the first row
    is ``xi`` exactly.
    """
    times, out = _run(model, eta, times, opts, 0)
    return Trajectory(times, out[:, : model.d].copy())


def integrate_with_sensitivities(model, eta, times, opts=None) -> SensitivityTrajectory:
    """Solve the state jointly with ``s = dx/deta``, ``s(0) = (I, 0)``."""
    d, m = model.d, model.d + model.p
    times, out = _run(model, eta, times, opts, 1)
    base = Trajectory(times, out[:, :d].copy())
    sens = out[:, d : d + d * m].reshape(-1, d, m).copy()
    return SensitivityTrajectory(base, sens)


def integrate_with_variations(model, eta, times, opts=None) -> VariationalTrajectory:
    """Solve state, sensitivities and ``z = d2x/deta2`` (``z(0) = 0``) jointly."""
    d, m = model.d, model.d + model.p
    times, out = _run(model, eta, times, opts, 2)
    base = Trajectory(times, out[:, :d].copy())
    sens = out[:, d : d + d * m].reshape(-1, d, m).copy()
    var2 = out[:, d + d * m :].reshape(-1, d, m, m).copy()
    return VariationalTrajectory(SensitivityTrajectory(base, sens), var2)
