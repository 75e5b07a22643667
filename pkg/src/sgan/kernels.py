"""Hot-loop dispatch: the Cython extension when it is built, numpy otherwise.

Set ``SGAN_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the one
in use. Both backends return identical results for ``hit_count`` and for
``nearest_state`` under the max-abs metric and for ``adam_update``.
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("SGAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

METRICS = {"maxabs": 0, "l2": 1}


def nearest_state(raw, states, metric="maxabs"):
    """Index of and deviation to the closest row of ``states`` for each row of ``raw``.
    Ties go to the lowest index."""
    import numpy as np
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    states = np.ascontiguousarray(states, dtype=np.float64)
    return _impl.nearest_state(raw, states, METRICS[metric])


def hit_count(n_cells, target, T, trials, seed):
    return int(_impl.hit_count(int(n_cells), int(target), int(T), int(trials), int(seed) & (2 ** 64 - 1)))


def adam_update(p, g, m, v, beta1, beta2, step, inv_sqrt_bc2, eps):
    """Fused Adam update of flat contiguous float64 arrays ``p``, ``m``, ``v`` in place."""
    _impl.adam_update(p, g, m, v, float(beta1), float(beta2), float(step),
                      float(inv_sqrt_bc2), float(eps))
