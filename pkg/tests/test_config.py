import json

import numpy as np
import pytest

from jcfpool.config import RunConfig, load_config, rng_stream
from jcfpool.exceptions import InputError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.optim.margin == 0.1 and cfg.codebook.temperature == 0.1


def test_unknown_key_rejected():
    with pytest.raises(InputError):
        RunConfig().update({"pooling.nonsense": 1})
    with pytest.raises(InputError):
        load_config(overrides=["optim.momentum=0.9"])


def test_override_coercion():
    cfg = load_config(overrides=["optim.lr=0.01", "pooling.n_words=4", "pooling.rank=2",
                                 "codebook.dual=true", "eval.ks=1,5", "optim.freeze=a,b"])
    assert cfg.optim.lr == 0.01 and cfg.pooling.n_words == 4
    assert cfg.codebook.dual is True
    assert cfg.eval.ks == [1, 5] and cfg.optim.freeze == ["a", "b"]


@pytest.mark.parametrize("override", ["pooling.n_words=2.5", "codebook.dual=maybe",
                                      "optim.steps=ten", "seed"])
def test_bad_override_values(override):
    with pytest.raises(InputError):
        load_config(overrides=[override])


@pytest.mark.parametrize("override", ["pooling.rank=9", "codebook.mode=fuzzy",
                                      "codebook.temperature=0", "optim.batch_size=7",
                                      "pooling.method=bp", "eval.ks=0"])
def test_validation_errors(override):
    with pytest.raises(InputError):
        load_config(overrides=[override])


def test_flat_and_nested_files(tmp_path):
    flat = tmp_path / "flat.json"
    flat.write_text(json.dumps({"optim.steps": 7, "seed": 3}))
    nested = tmp_path / "nested.json"
    nested.write_text(json.dumps({"optim": {"steps": 7}, "seed": 3}))
    a, b = load_config(flat), load_config(nested)
    assert a.to_flat() == b.to_flat()
    assert load_config(flat, ["seed=4"]).seed == 4


def test_round_trip_and_hash():
    cfg = load_config(overrides=["seed=9", "pooling.rank=2"])
    again = RunConfig.from_flat(cfg.to_flat())
    assert again.hash() == cfg.hash()
    again.output_dir = "elsewhere"
    assert again.hash() == cfg.hash()
    again.seed = 10
    assert again.hash() != cfg.hash()


def test_named_streams_are_independent():
    a = rng_stream(0, "init").standard_normal(4)
    assert np.array_equal(a, rng_stream(0, "init").standard_normal(4))
    assert not np.array_equal(a, rng_stream(0, "batches").standard_normal(4))
    assert not np.array_equal(a, rng_stream(1, "init").standard_normal(4))
