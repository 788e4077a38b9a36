import numpy as np
import pytest

from sll.exceptions import FormatError, InvalidInputError
from sll.network import MAGIC, build_cnn, build_mlp, load_checkpoint, save_checkpoint
from sll.numerics import make_rng
from sll.trainers import SLLConfig, sll_train_step, train_epochs


def _trained_mlp(**kw):
    net = build_mlp(6, [8, 8], 3, seed=2, **kw)
    rng = make_rng(0)
    x, y = rng.standard_normal((10, 6)), rng.integers(0, 3, 10)
    sll_train_step(net, x, y, SLLConfig())
    return net, x


def test_head_count_and_dims():
    net = build_mlp(6, [8, 5], 3)
    assert len(net.heads) == net.depth == 3
    assert [h.in_dim for h in net.heads] == [6, 8, 5]
    assert all(h.out_dim == 3 for h in net.heads)
    with pytest.raises(InvalidInputError):
        type(net)(net.layers, net.heads[:2], 3, (6,))


def test_label_concat_widens_heads():
    net = build_mlp(6, [8], 3, label_concat=True)
    assert [h.in_dim for h in net.heads] == [9, 11]
    v, _ = net.code(1, np.ones((2, 8)), y=np.array([0, 2]))
    assert v.shape == (2, 3)


@pytest.mark.parametrize("kw", [{}, {"batchnorm": True}, {"dropout": 0.2, "label_concat": True}])
def test_checkpoint_roundtrip(tmp_path, kw):
    net, x = _trained_mlp(**kw)
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, net)
    back = load_checkpoint(path)
    assert back.logits(x).tobytes() == net.logits(x).tobytes()
    for a, b in zip(net.heads, back.heads):
        assert a.R.tobytes() == b.R.tobytes()


def test_cnn_checkpoint_roundtrip(tmp_path):
    net = build_cnn((1, 8, 8), [2, 3], 4, seed=1, head_dim=16)
    x = make_rng(0).standard_normal((3, 1, 8, 8))
    train_epochs(net, x, np.array([0, 1, 2]), SLLConfig(batch_size=3), epochs=1)
    save_checkpoint(tmp_path / "c", net)
    back = load_checkpoint(tmp_path / "c")
    assert back.logits(x).tobytes() == net.logits(x).tobytes()


def test_checkpoint_corruption(tmp_path):
    net, _ = _trained_mlp()
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, net)
    raw = bytearray(path.read_bytes())
    assert raw.startswith(MAGIC)

    bad = bytearray(raw)
    bad[0] ^= 0xFF
    (tmp_path / "magic").write_bytes(bad)
    with pytest.raises(FormatError, match="offset 0"):
        load_checkpoint(tmp_path / "magic")

    bad = bytearray(raw)
    bad[len(raw) // 2] ^= 0x01
    (tmp_path / "flip").write_bytes(bad)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "flip")

    (tmp_path / "trunc").write_bytes(raw[:len(raw) - 9])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "trunc")

    bad = bytearray(raw)
    bad[8:12] = (99).to_bytes(4, "little")
    (tmp_path / "ver").write_bytes(bad)
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(tmp_path / "ver")
