from pathlib import Path

import numpy as np
import pytest

from feddkd.checkpoint import load_params, params_from_dict, params_to_dict, save_params
from feddkd.errors import ModelSpecError
from tests.utils.networks import random_network


def test_save_and_load_params(tmp_path: Path, rng: np.random.Generator) -> None:
    params = random_network(rng, 4, [5, 3], 2, batch_norm=True)

    loaded = load_params(save_params(params, tmp_path.joinpath("model.json")))

    assert loaded.equals(params)
    assert loaded.bn_keys == params.bn_keys


def test_load_params_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_params(tmp_path.joinpath("missing.json"))


def test_params_from_dict_rejects_other_documents() -> None:
    with pytest.raises(ModelSpecError):
        params_from_dict({"format": "something-else", "version": 1})


def test_params_from_dict_rejects_malformed_tensors(rng: np.random.Generator) -> None:
    content = params_to_dict(random_network(rng, 2, [2], 2))
    content["tensors"][0]["shape"] = [5, 5]

    with pytest.raises(ModelSpecError):
        params_from_dict(content)
