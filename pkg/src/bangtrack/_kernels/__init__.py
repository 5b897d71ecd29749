"""Kernel backend selection: compiled extension when built, else the
pure-Python mirror. Both expose propagate_dense and propagate_sens with
identical signatures."""

from . import _fallback

try:
    from . import _core as _impl

    HAVE_COMPILED = True
except ImportError:  # extension not built
    _impl = _fallback
    HAVE_COMPILED = False

BACKEND = "compiled" if HAVE_COMPILED else "python"

propagate_dense = _impl.propagate_dense
propagate_sens = _impl.propagate_sens


def backends():
    """Name -> module for every available backend (parity tests, benchmark)."""
    out = {"python": _fallback}
    if HAVE_COMPILED:
        out["compiled"] = _impl
    return out
