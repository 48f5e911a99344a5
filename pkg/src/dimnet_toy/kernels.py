"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise (or when
``DIMNET_TOY_PURE_PYTHON=1``) the numpy fallback is used. Both expose
``ctc_logprob``, ``ctc_forward_backward`` and ``edit_align``.
"""
import os
from types import SimpleNamespace

import numpy as np

from . import _pykernels
from ._pykernels import OP_DEL, OP_INS, OP_MATCH, OP_SUB  # noqa: F401


def _wrap(mod, name):
    def ctc_logprob(log_probs, labels, blank):
        return float(mod.ctc_logprob(
            np.ascontiguousarray(log_probs, dtype=np.float64),
            np.ascontiguousarray(labels, dtype=np.int64), int(blank)))

    def ctc_forward_backward(log_probs, labels, blank):
        logp, grad = mod.ctc_forward_backward(
            np.ascontiguousarray(log_probs, dtype=np.float64),
            np.ascontiguousarray(labels, dtype=np.int64), int(blank))
        return float(logp), grad

    def edit_align(ref, hyp):
        return mod.edit_align(np.ascontiguousarray(ref, dtype=np.int64),
                              np.ascontiguousarray(hyp, dtype=np.int64))

    return SimpleNamespace(name=name, ctc_logprob=ctc_logprob,
                           ctc_forward_backward=ctc_forward_backward,
                           edit_align=edit_align)


def backends():
    """Every importable backend, keyed by name (for tests and benchmarks)."""
    found = {"python": _wrap(_pykernels, "python")}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _wrap(_kernels, "cython")
    return found


_available = backends()
if os.environ.get("DIMNET_TOY_PURE_PYTHON", "0") not in ("", "0"):
    _active = _available["python"]
else:
    _active = _available.get("cython", _available["python"])

BACKEND = _active.name
ctc_logprob = _active.ctc_logprob
ctc_forward_backward = _active.ctc_forward_backward
edit_align = _active.edit_align
