import struct

import numpy as np
import pytest

from seqsal.recnet import ToyConfig, ToyNet
from seqsal.recnet.weights import (
    MAGIC,
    WeightFileError,
    dumps_weights,
    load_weights,
    loads_weights,
    save_weights,
    state_dict,
)


def test_layout_by_hand():
    data = dumps_weights({"ab": np.array([[1.0, 2.0, 3.0]])})
    expected = (MAGIC + struct.pack("<II", 1, 1) + struct.pack("<I", 2) + b"ab"
                + struct.pack("<III", 2, 1, 3) + struct.pack("<3f", 1, 2, 3))
    assert data == expected


def test_round_trip_through_model(tmp_path):
    net = ToyNet(ToyConfig(mode="non-incremental", seed=3))
    net.bn["P"].mean[:] = 0.25
    path = tmp_path / "w.sqsw"
    save_weights(net, path)
    other = load_weights(ToyNet(ToyConfig(mode="non-incremental", seed=8)), path)
    for k, v in state_dict(net).items():
        np.testing.assert_array_equal(state_dict(other)[k], v.astype(np.float32))
    assert "P.bn.mean" in loads_weights(path.read_bytes())


def test_bad_files():
    good = dumps_weights({"x": np.zeros(2)})
    with pytest.raises(WeightFileError, match="magic"):
        loads_weights(b"NOPE" + good[4:])
    with pytest.raises(WeightFileError, match="truncated"):
        loads_weights(good[:-1])
    with pytest.raises(WeightFileError, match="trailing"):
        loads_weights(good + b"\0")


def test_mismatched_model(tmp_path):
    path = tmp_path / "w.sqsw"
    save_weights(ToyNet(ToyConfig()), path)
    with pytest.raises(WeightFileError, match="names differ"):
        load_weights(ToyNet(ToyConfig(mode="incremental")), path)
