"""Embedded explicit Runge-Kutta 4(3) integrator with PI step-size control.

The pair is the classical four-stage RK4 with a first-same-as-last fifth
stage ``f(y_{n+1})`` used only for the third-order error estimate::

    y4 = y + h (k1 + 2 k2 + 2 k3 + k4) / 6
    y3 = y + h (k1 + 2 k2 + 2 k3 + k5) / 6
    err = y4 - y3 = h (k4 - k5) / 6

States may be batches of shape ``(n, N)``; the step size is then shared by the
batch and the accepted error is the worst per-member RMS error, so every
member meets the tolerance on its own.
"""

from dataclasses import dataclass

import numpy as np

from .errors import Blowup, StepSizeCollapse


@dataclass
class StepController:
    """Tolerances and limits for :func:`integrate_ode`.

    ``fixed_step`` switches to constant-step RK4 (last step clipped to
    ``t_end``); the error estimate is then unused.  An accepted state with an
    entry above ``max_abs`` in magnitude counts as a blow-up.
    """

    atol: float = 1e-6
    rtol: float = 1e-6
    h0: float = 1e-4
    h_min: float = 1e-12
    h_max: float = np.inf
    safety: float = 0.9
    max_factor: float = 5.0
    min_factor: float = 0.2
    fixed_step: float = None
    max_steps: int = 50_000_000
    max_abs: float = np.inf


@dataclass
class IntegrationStats:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    last_h: float = 0.0


def _error_norm(err, y0, y1, atol, rtol):
    # Diverging trial steps overflow; the caller treats non-finite norms as rejections.
    with np.errstate(over="ignore", invalid="ignore"):
        return _rms_norm(err, y0, y1, atol, rtol)


def _rms_norm(err, y0, y1, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    e = (err / scale) ** 2
    if e.ndim == 1:
        return float(np.sqrt(e.mean()))
    return float(np.sqrt(e.reshape(-1, e.shape[-1]).mean(axis=0)).max())


def integrate_ode(f, y0, t0, t_end, controller=None, stats=None):
    """Advance ``y' = f(t, y)`` from ``t0`` to exactly ``t_end``.

    Returns ``(y, h_last)``; ``h_last`` is the step size the controller would
    take next and can seed a subsequent call through ``controller.h0``.
    """
    ctl = controller or StepController()
    st = stats if stats is not None else IntegrationStats()
    y = np.array(y0, dtype=float, copy=True)
    t = float(t0)
    if t_end < t:
        raise ValueError("t_end precedes the current time")
    if t_end == t or y.size == 0:
        return y, ctl.h0
    if ctl.fixed_step is not None:
        return _fixed(f, y, t, t_end, ctl.fixed_step, st, ctl.max_abs), ctl.fixed_step

    h_prop = min(ctl.h0, ctl.h_max)
    k1 = f(t, y)
    st.rhs_evals += 1
    err_prev = 1e-4
    order = 4.0
    for _ in range(ctl.max_steps):
        last = t + h_prop >= t_end - 1e-14 * max(1.0, abs(t_end))
        h = t_end - t if last else h_prop
        with np.errstate(over="ignore", invalid="ignore"):
            k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = f(t + h, y + h * k3)
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            k5 = f(t + h, y_new)
        st.rhs_evals += 4
        err = _error_norm((h / 6.0) * (k4 - k5), y, y_new, ctl.atol, ctl.rtol)
        if not np.isfinite(err):
            err = np.inf
        if err <= 1.0:
            if np.abs(y_new).max() > ctl.max_abs:
                raise Blowup(f"state magnitude above {ctl.max_abs:.3g} near t={t:.6g}")
            y, k1 = y_new, k5
            st.accepted += 1
            st.last_h = h
            if last:
                return y, h_prop
            t += h
            fac = ctl.safety * max(err, 1e-10) ** (-0.7 / order) * err_prev ** (0.4 / order)
            err_prev = max(err, 1e-4)
            h_prop = min(h * min(ctl.max_factor, max(ctl.min_factor, fac)), ctl.h_max)
        else:
            st.rejected += 1
            fac = ctl.safety * err ** (-1.0 / order) if np.isfinite(err) else ctl.min_factor
            h_prop = h * min(1.0, max(ctl.min_factor, fac))
            if h_prop < ctl.h_min:
                if not np.all(np.isfinite(y_new)):
                    raise Blowup(f"non-finite state near t={t:.6g}")
                raise StepSizeCollapse(f"step size {h_prop:.3e} below minimum at t={t:.6g}")
    raise StepSizeCollapse(f"exceeded {ctl.max_steps} steps before t_end={t_end}")


def _fixed(f, y, t, t_end, h_fixed, st, max_abs=np.inf):
    n_steps = int(np.ceil((t_end - t) / h_fixed - 1e-12))
    for i in range(n_steps):
        h = min(h_fixed, t_end - t)
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_end if i == n_steps - 1 else t + h
        st.accepted += 1
        st.rhs_evals += 4
        if not np.all(np.isfinite(y)) or np.abs(y).max() > max_abs:
            raise Blowup(f"non-finite or oversized state at t={t:.6g}")
    st.last_h = h_fixed
    return y
