"""Hot-loop backend selection.

The compiled extension ``ooolab._kernels`` is used when it was built; the pure
numpy module ``ooolab._kernels_py`` is the fallback and the reference.  Set
``OOOLAB_PURE=1`` before import to force the fallback.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("OOOLAB_PURE"):
        raise ImportError("pure backend requested")
    from . import _kernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _kernels_py
    BACKEND = "numpy"

render_masks = _impl.render_masks
adam_update = _impl.adam_update
bernoulli_logit_terms = _impl.bernoulli_logit_terms

__all__ = ["BACKEND", "render_masks", "adam_update", "bernoulli_logit_terms"]
