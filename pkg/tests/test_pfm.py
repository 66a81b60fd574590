import numpy as np
import pytest

from invtransport.pfm import PFMError, decode_pfm, encode_pfm, read_pfm, write_pfm
from invtransport.transport import Image


def test_two_by_two_round_trip(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 3) / 7
    path = tmp_path / "a.pfm"
    write_pfm(Image(data), path)
    raw = path.read_bytes()
    assert raw.startswith(b"PF\n2 2\n-1.0\n")
    # first stored scanline is the bottom row
    first = np.frombuffer(raw[len(b"PF\n2 2\n-1.0\n"):][:24], dtype="<f4")
    assert np.array_equal(first, data[1].ravel())
    back = read_pfm(path)
    assert np.array_equal(back.data, data)


def test_big_endian_rejected():
    with pytest.raises(PFMError, match="big-endian"):
        decode_pfm(b"PF\n2 2\n1.0\n" + bytes(48))


@pytest.mark.parametrize("blob", [
    b"Pf\n2 2\n-1.0\n" + bytes(16),
    b"PF\n2\n-1.0\n" + bytes(48),
    b"PF\n2 2\nabc\n" + bytes(48),
    b"PF\n2 2\n-1.0\n" + bytes(47),
    b"PF\n2 2\n-1.0\n" + bytes(49),
    b"PF\n0 2\n-1.0\n",
    b"PF",
])
def test_malformed_rejected(blob):
    with pytest.raises(PFMError):
        decode_pfm(blob)


def test_random_round_trip_bytes(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(5):
        data = rng.normal(size=(64, 64, 3)).astype(np.float32) * 10 ** rng.uniform(-3, 3)
        blob = encode_pfm(Image(data))
        again = encode_pfm(decode_pfm(blob))
        assert blob == again
        path = tmp_path / f"r{i}.pfm"
        write_pfm(Image(data), path)
        assert path.read_bytes() == blob


def test_non_finite_refused():
    with pytest.raises(PFMError):
        encode_pfm(np.full((2, 2, 3), np.nan))
