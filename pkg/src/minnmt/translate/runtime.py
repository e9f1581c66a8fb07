"""Forward-only deployment runtime.

Only numpy, the shared network definition and the model file reader are
imported here; the autodiff and training packages never load.
"""

import numpy as np

from ..cli.modelfile import load_model
from ..network import Decoder, NumpyOps


class InferenceModel(Decoder):
    """Immutable decoding handle over plain arrays."""

    def __init__(self, params, cfg, vocabs=None, precision=64):
        if precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        dtype = np.float32 if precision == 32 else np.float64
        arrays = {}
        for name, arr in params.items():
            if arr.dtype != dtype:
                arr = arr.astype(dtype)
            if arr.flags.writeable:
                arr = arr.view()
                arr.flags.writeable = False
            arrays[name] = arr
        super().__init__(NumpyOps(dtype), arrays, cfg)
        self.vocabs = vocabs or {}
        self.precision = precision

    @property
    def param_bytes(self):
        return sum(a.nbytes for a in self.P.values())


def load_for_inference(path, precision=None):
    """Read a model file into an :class:`InferenceModel`.

    ``precision`` defaults to the precision the file was stored in.
    """
    mf = load_model(path)
    return InferenceModel(mf.params, mf.config, mf.vocabs, precision or mf.precision)
