"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when importable; setting the
environment variable ``PDPCRN_PURE_PYTHON=1`` forces the fallback.
``BACKEND`` reports which one is active.
"""

import os

if os.environ.get("PDPCRN_PURE_PYTHON", "0") not in ("", "0"):
    from . import _fallback as _impl

    BACKEND = "fallback"
else:
    try:
        from . import _ext as _impl  # type: ignore[attr-defined]

        BACKEND = "ext"
    except ImportError:
        from . import _fallback as _impl

        BACKEND = "fallback"

im2col = _impl.im2col
col2im = _impl.col2im
lstm_step_forward = _impl.lstm_step_forward
lstm_step_backward = _impl.lstm_step_backward
rir_accumulate = _impl.rir_accumulate
overlap_add = _impl.overlap_add

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "lstm_step_forward",
    "lstm_step_backward",
    "rir_accumulate",
    "overlap_add",
]
