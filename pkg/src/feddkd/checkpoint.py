#!/usr/bin/env python3

"""ParamSet serialization.

A checkpoint is a UTF-8 JSON document:

    {
        "format": "feddkd-params",
        "version": 1,
        "layers": [{"kind": "dense", "in_dim": 4, "out_dim": 3}, ...],
        "tensors": [{"layer": 0, "name": "weight", "is_bn": false, "shape": [4, 3], "values": [...]}, ...]
    }

Values are written row-major as JSON floats, which round-trip float64 exactly.
"""

from pathlib import Path
from typing import Dict, List

import numpy as np

from feddkd.data_structures import LayerSpec, ParamKey, ParamSet, Tensor
from feddkd.errors import ModelSpecError
from feddkd.model import validate_spec
from feddkd.utils import load_json_file, write_json_file

CHECKPOINT_FORMAT = "feddkd-params"
CHECKPOINT_VERSION = 1


def params_to_dict(params: ParamSet) -> Dict:
    tensors: List[Dict] = []
    for (layer, name), value in params.items():
        tensors.append(
            {
                "layer": layer,
                "name": name,
                "is_bn": params.is_bn((layer, name)),
                "shape": list(value.shape),
                "values": [float(item) for item in value.reshape(-1)],
            }
        )

    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [layer.model_dump(exclude_none=True) for layer in params.layers],
        "tensors": tensors,
    }


def params_from_dict(content: Dict) -> ParamSet:
    """Rebuilds a ParamSet from params_to_dict() output.

    Raises:
        ModelSpecError: If the document is not a checkpoint or is inconsistent.
    """
    if content.get("format") != CHECKPOINT_FORMAT or content.get("version") != CHECKPOINT_VERSION:
        raise ModelSpecError("Not a feddkd parameter checkpoint (format/version mismatch).")

    try:
        layers = validate_spec([LayerSpec(**layer) for layer in content["layers"]])
        tensors: Dict[ParamKey, Tensor] = {}
        bn_keys = set()
        for record in content["tensors"]:
            key = (int(record["layer"]), str(record["name"]))
            values = np.asarray(record["values"], dtype=np.float64)
            tensors[key] = values.reshape([int(size) for size in record["shape"]])
            if record["is_bn"]:
                bn_keys.add(key)
    except (KeyError, TypeError, ValueError) as error:
        raise ModelSpecError(f"Malformed checkpoint: {error}") from error

    return ParamSet(layers, tensors, frozenset(bn_keys))


def save_params(params: ParamSet, path: Path) -> Path:
    write_json_file(params_to_dict(params), path)
    return path


def load_params(path: Path) -> ParamSet:
    return params_from_dict(load_json_file(path))
