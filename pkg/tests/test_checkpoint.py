import struct

import numpy as np
import pytest

from glrdenoise import params as pr


def small_arch():
    return pr.ArchitectureConfig(exemplars=2, f_widths=(2, 3, 4), yhat_width=2,
                                 mu_widths=(2, 3), mu_fc_hidden=4, patch=8)


def test_round_trip_parameters_bitwise(tmp_path):
    params = pr.build_params(small_arch(), seed=3)
    path = tmp_path / "m.ckpt"
    pr.save_checkpoint(path, params)
    loaded, adam = pr.load_checkpoint(path)
    assert adam is None
    assert loaded.arch == params.arch
    for name, tensor in params.items():
        assert np.array_equal(loaded[name].data, tensor.data), name


def test_round_trip_with_optimizer_state(tmp_path):
    params = pr.build_params(small_arch(), seed=0)
    adam = pr.AdamState(lr=5e-4, step=17)
    rng = np.random.default_rng(1)
    for name, tensor in params.items():
        adam.m[name] = rng.standard_normal(tensor.data.shape)
        adam.v[name] = rng.uniform(0, 1, tensor.data.shape)
    path = tmp_path / "opt.ckpt"
    pr.save_checkpoint(path, params, adam)
    _, restored = pr.load_checkpoint(path)
    assert restored is not None
    assert restored.step == 17
    assert restored.lr == 5e-4
    for name in adam.m:
        assert np.array_equal(restored.m[name], adam.m[name])
        assert np.array_equal(restored.v[name], adam.v[name])


def test_file_starts_with_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    pr.save_checkpoint(path, pr.build_params(small_arch()))
    assert path.read_bytes()[:4] == b"DGLR"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(pr.CheckpointFormatError, match="magic"):
        pr.load_checkpoint(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "v9.ckpt"
    path.write_bytes(b"DGLR" + struct.pack("<I", 9) + struct.pack("<I", 0))
    with pytest.raises(pr.CheckpointFormatError, match="version"):
        pr.load_checkpoint(path)


def test_missing_architecture_record_rejected(tmp_path):
    path = tmp_path / "empty.ckpt"
    path.write_bytes(b"DGLR" + struct.pack("<I", 1) + struct.pack("<I", 0))
    with pytest.raises(pr.CheckpointFormatError, match="architecture"):
        pr.load_checkpoint(path)


def test_resumed_training_state_is_consistent(tmp_path):
    # one Adam step, save, load, another step: identical to two straight steps
    def fresh():
        params = pr.build_params(small_arch(), seed=4)
        grads = {}
        rng = np.random.default_rng(5)
        for name, tensor in params.items():
            grads[name] = rng.standard_normal(tensor.data.shape)
        return params, grads

    def set_grads(params, grads):
        for name, tensor in params.items():
            tensor.grad = grads[name].copy()

    pa, grads = fresh()
    adam_a = pr.AdamState()
    set_grads(pa, grads)
    pr.adam_update(pa, adam_a)
    set_grads(pa, grads)
    pr.adam_update(pa, adam_a)

    pb, _ = fresh()
    adam_b = pr.AdamState()
    set_grads(pb, grads)
    pr.adam_update(pb, adam_b)
    path = tmp_path / "resume.ckpt"
    pr.save_checkpoint(path, pb, adam_b)
    pb2, adam_b2 = pr.load_checkpoint(path)
    set_grads(pb2, grads)
    pr.adam_update(pb2, adam_b2)

    for name, tensor in pa.items():
        assert np.array_equal(tensor.data, pb2[name].data), name


def test_update_without_grad_names_parameter():
    params = pr.build_params(small_arch())
    with pytest.raises(pr.OptimizerUsageError, match="f/enc0"):
        pr.adam_update(params, pr.AdamState())
