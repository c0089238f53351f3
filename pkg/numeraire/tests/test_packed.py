import numpy as np
import pytest
from numpy.testing import assert_allclose

from numeraire import streams
from numeraire.classes import MarketError, Pool, pmap
from numeraire.packed import plain, read, read_market, unpack_market, write, write_market


def test_market_file(tmp_path, trinomial):
    path = str(tmp_path / "market.json")
    write_market(path, trinomial)
    m = read_market(path)
    assert m.tree.order == ["r", "u", "m", "d"]
    assert_allclose(m.S, trinomial.S)
    assert_allclose(m.P, trinomial.P)


def test_unpack_lists_missing_keys():
    with pytest.raises(MarketError) as err:
        unpack_market({"nodes": []})
    assert len(err.value.violations) == 2


def test_unpack_rejects_bad_record():
    doc = {"T": 1, "d": 1, "nodes": [{"id": 0, "t": 0, "parent": None, "prob": 1.0}]}
    with pytest.raises(MarketError, match="node record 0"):
        unpack_market(doc)


def test_unpack_checks_declared_dimension(binomial):
    from numeraire.packed import pack_market

    doc = pack_market(binomial)
    doc["d"] = 2
    with pytest.raises(MarketError, match="declared d"):
        unpack_market(doc)


def test_read_corrupt(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("[1, 2]")
    with pytest.raises(TypeError, match="is corrupt"):
        read(str(path))
    with pytest.raises(OSError):
        read(str(tmp_path / "missing.json"))


def test_plain_converts_numpy(tmp_path):
    doc = {"a": np.arange(3), "b": np.float64(np.inf), "c": np.bool_(True), 1: np.int64(4)}
    out = plain(doc)
    assert out == {"a": [0, 1, 2], "b": None, "c": True, "1": 4}
    write(str(tmp_path / "doc.json"), doc)
    assert read(str(tmp_path / "doc.json")) == out


def test_streams_are_keyed():
    a = streams.generator(1, "x", 0).standard_normal(4)
    assert_allclose(a, streams.generator(1, "x", 0).standard_normal(4))
    assert not np.allclose(a, streams.generator(1, "x", 1).standard_normal(4))
    assert not np.allclose(a, streams.generator(2, "x", 0).standard_normal(4))
    assert not np.allclose(a, streams.generator(1, "y", 0).standard_normal(4))
    with pytest.raises(ValueError):
        streams.generator(-1, "x")


def test_normals_do_not_depend_on_offset():
    block = streams.normals(7, streams.DIFFUSION_PATHS, 0, 6, (3,))
    tail = streams.normals(7, streams.DIFFUSION_PATHS, 4, 2, (3,))
    assert_allclose(block[4:], tail, rtol=0, atol=0)


def test_pool_keeps_order():
    with Pool(4) as pool:
        assert pool.map(lambda x: x * x, range(20)) == [x * x for x in range(20)]
    assert pmap(None, str, [1, 2]) == ["1", "2"]
