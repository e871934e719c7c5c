"""Backend selection for the hot kernels.

The compiled extension is used when importable; setting ``DYNBRIDGE_PURE=1``
forces the numpy fallback. ``BACKEND`` names the active choice.
"""
import os

from . import _fallback

if os.environ.get("DYNBRIDGE_PURE", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

philox4x64 = _impl.philox4x64
normals = _impl.normals
normal_scalar = _impl.normal_scalar
bridge_affine = _impl.bridge_affine
thomas = _impl.thomas
systematic_resample = _impl.systematic_resample

__all__ = ["BACKEND", "philox4x64", "normals", "normal_scalar",
           "bridge_affine", "thomas", "systematic_resample"]
