"""Backend selection for the bit-level hot loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` takes over. Set ``IEDPUF_PURE_PYTHON=1``
to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("IEDPUF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        pass


def backends():
    """Return every importable backend module keyed by name."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:  # pragma: no cover
        pass
    return found


def comparison_bits(values, order) -> np.ndarray:
    """Ordered-pair comparison bits of ``values`` taken in ``order``."""
    return _impl.comparison_bits(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(order, dtype=np.intp),
    )


def gather_partial(ref, order, n: int) -> np.ndarray:
    """Look up ordered-pair bits from a stored row-major n(n-1) reference."""
    return _impl.gather_partial(
        np.ascontiguousarray(ref, dtype=np.uint8),
        np.ascontiguousarray(order, dtype=np.intp),
        n,
    )


def hamming_count(a, b) -> int:
    return int(
        _impl.hamming_count(
            np.ascontiguousarray(a, dtype=np.uint8),
            np.ascontiguousarray(b, dtype=np.uint8),
        )
    )


def hamming_matrix(sigs) -> np.ndarray:
    return _impl.hamming_matrix(np.ascontiguousarray(sigs, dtype=np.uint8))


def occurrence_table(seqs, n_symbols: int) -> np.ndarray:
    return _impl.occurrence_table(np.ascontiguousarray(seqs, dtype=np.intp), n_symbols)
