"""Hot channel-evolution kernel with a numba fast path and a pure-Python fallback.

The per-slot channel process (mobility walk, correlated shadow fading, path
loss, SNR, spectral efficiency) does not depend on controller actions, so an
entire episode's channel trace is generated in one kernel call.  The kernel is
compiled with numba when available; setting ``VRSIM_NUMBA=0`` selects the
uncompiled fallback (same function, same draw layout).  The two paths agree to
floating-point rounding (~1e-14 relative); bit-exact reproducibility is only
guaranteed within one path.
"""
from __future__ import annotations

import math
import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_TWO_PI = 2.0 * math.pi


def numba_enabled(override: str = "auto") -> bool:
    """Resolve the active kernel path: config override first, then env flag."""
    if override == "numba":
        return HAVE_NUMBA
    if override == "numpy":
        return False
    flag = os.environ.get("VRSIM_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


def _trace_loop(
    noise,
    fading,
    pos,
    heading,
    shadow,
    step_len,
    half_side,
    heading_std,
    rho,
    innov_std,
    pl_const,
    pl_slope,
    height_sq,
    d_min,
    link_budget_db,
    pathloss_db,
    shadow_db,
    snr_db,
    rate,
):
    n_slots = noise.shape[0]
    n_users = noise.shape[1]
    use_fading = fading.shape[0] == n_slots
    for t in range(n_slots):
        for u in range(n_users):
            # mobility: advance along heading, perturb heading, reflect at walls
            x = pos[u, 0] + step_len[u] * math.cos(heading[u])
            y = pos[u, 1] + step_len[u] * math.sin(heading[u])
            h = heading[u] + heading_std * noise[t, u, 0]
            while x > half_side or x < -half_side:
                if x > half_side:
                    x = 2.0 * half_side - x
                else:
                    x = -2.0 * half_side - x
                h = math.pi - h
            while y > half_side or y < -half_side:
                if y > half_side:
                    y = 2.0 * half_side - y
                else:
                    y = -2.0 * half_side - y
                h = -h
            h = (h + math.pi) % _TWO_PI - math.pi
            pos[u, 0] = x
            pos[u, 1] = y
            heading[u] = h

            shadow[u] = rho[u] * shadow[u] + innov_std[u] * noise[t, u, 1]

            d = math.sqrt(x * x + y * y + height_sq)
            if d < d_min:
                d = d_min
            pl = pl_const + pl_slope * math.log10(d)
            s_db = link_budget_db - pl - shadow[u]
            snr = 10.0 ** (s_db / 10.0)
            if use_fading:
                snr = snr * fading[t, u]
                s_db = 10.0 * math.log10(snr)
            pathloss_db[t, u] = pl
            shadow_db[t, u] = shadow[u]
            snr_db[t, u] = s_db
            rate[t, u] = math.log2(1.0 + snr)


_trace_loop_jit = njit(cache=True)(_trace_loop) if HAVE_NUMBA else _trace_loop


def trace_loop_impl(kernel: str = "auto"):
    """Return the active loop implementation (jitted or pure Python)."""
    return _trace_loop_jit if numba_enabled(kernel) else _trace_loop
