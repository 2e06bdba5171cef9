"""Weight archives: a single .npz file mapping canonical layer names to arrays.

Canonical names are the module paths of :class:`MultiTaskNet`, e.g.
``encoder.blocks.3.body.0.conv.weight`` or ``heads.segmentation.out.bias``.
Frozen-norm statistics are stored under their buffer names
(``...bn.running_mean`` / ``...bn.running_var``). Encoder weights converted
from public checkpoints only need to be renamed to this scheme once; shapes
are validated on load.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..errors import WeightLoadError


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {name: tensor.detach().cpu().numpy()
            for name, tensor in model.state_dict().items()}


def save_weights(model: nn.Module, path: str) -> None:
    np.savez(path, **state_arrays(model))


def load_weights(model: nn.Module, path: str, prefix: str = "", strict: bool = True) -> list[str]:
    """Load arrays whose names start with ``prefix`` into the model.

    Returns the list of loaded names. Shape mismatches raise
    :class:`WeightLoadError` naming the offending layer; with ``strict``,
    model entries under ``prefix`` that are missing from the archive do too.
    """
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files
                  if name.startswith(prefix)}
    state = model.state_dict()
    loaded = []
    for name, arr in arrays.items():
        if name not in state:
            if strict:
                raise WeightLoadError(f"archive entry {name!r} has no matching layer")
            continue
        want = tuple(state[name].shape)
        if tuple(arr.shape) != want:
            raise WeightLoadError(
                f"shape mismatch for layer {name!r}: archive {tuple(arr.shape)}, "
                f"model {want}"
            )
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(state[name].dtype)
        loaded.append(name)
    if strict:
        missing = [n for n in state if n.startswith(prefix) and n not in arrays]
        if missing:
            raise WeightLoadError(f"archive is missing layers: {missing[:5]}"
                                  + ("..." if len(missing) > 5 else ""))
    model.load_state_dict(state)
    return loaded


def load_encoder_weights(model: nn.Module, path: str) -> list[str]:
    """Load the ``encoder.*`` subset of an archive (pretrained backbone)."""
    return load_weights(model, path, prefix="encoder.", strict=True)
