from dataclasses import dataclass

from ..cli.modelfile import ModelFile, ModelFormatError, load_model, save_model
from .optim import OptimState


@dataclass
class TrainingState:
    params: dict
    config: object
    opt: OptimState
    vocabs: dict


def checkpoint(path, params, cfg, opt, vocabs=None, precision=64):
    """Model file plus an optimizer block, written atomically."""
    save_model(path, ModelFile(cfg, vocabs or {}, params, opt.to_dict(), precision))


def restore(path):
    """Training state from a checkpoint; nothing is returned unless the whole file verifies."""
    mf = load_model(path, writable=True)
    if mf.optimizer is None:
        raise ModelFormatError(f"{path}: model file has no optimizer block (not a checkpoint)")
    try:
        opt = OptimState.from_dict(mf.optimizer)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: invalid optimizer block: {exc}") from None
    return TrainingState(mf.params, mf.config, opt, mf.vocabs)
