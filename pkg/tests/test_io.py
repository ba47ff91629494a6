import numpy as np
import pytest

from swing_impedance.config import (
    ConfigError,
    config_hash,
    get_bool,
    get_float,
    get_int,
    parse_config,
    subsection,
)
from swing_impedance.model import BodyModel, default_model
from swing_impedance.tables import TableError, read_table, write_table, write_keyvalue


def test_table_round_trip(tmp_path):
    path = write_table(tmp_path / "t.csv", {"t": [0.0, 0.5], "F": [1.25, np.nan]},
                       {"t": "s", "F": "N"}, comments=["hello"])
    cols, units = read_table(path, required=("t", "F"))
    np.testing.assert_array_equal(cols["t"], [0.0, 0.5])
    assert np.isnan(cols["F"][1])
    assert units == {"t": "s", "F": "N"}
    assert path.read_text().splitlines()[:2] == ["# hello", "t [s],F [N]"]


def test_table_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(TableError, match=":3:"):
        read_table(p)
    p.write_text("a,a\n1,2\n")
    with pytest.raises(TableError, match="duplicate"):
        read_table(p)
    p.write_text("a\n1\n")
    with pytest.raises(TableError, match="missing required column.*b"):
        read_table(p, required=("a", "b"))
    with pytest.raises(TableError, match="cannot read"):
        read_table(tmp_path / "nope.csv")
    with pytest.raises(ValueError):
        write_table(p, {"a": [1], "b": [1, 2]})


def test_keyvalue_format(tmp_path):
    path = write_keyvalue(tmp_path / "kv.txt", {"x": 1 / 3, "ok": True, "name": "step"})
    assert path.read_text() == "x = 0.333333333333\nok = 1\nname = step\n"


def test_config_parsing_and_getters():
    cfg = parse_config("# comment\na.b = 1.5\na.n = 3\nflag = yes\nother.x = 2\n")
    assert get_float(cfg, "a.b") == 1.5
    assert get_int(cfg, "a.n") == 3
    assert get_bool(cfg, "flag") is True
    assert subsection(cfg, "a") == {"b": "1.5", "n": "3"}
    assert get_float(cfg, "missing", 4) == 4.0
    with pytest.raises(ConfigError):
        get_float(cfg, "missing")
    with pytest.raises(ConfigError):
        get_int(cfg, "a.b")
    with pytest.raises(ConfigError):
        get_float(cfg, "a.b", minimum=2)
    with pytest.raises(ConfigError):
        get_bool({"f": "maybe"}, "f")
    with pytest.raises(ConfigError):
        parse_config("not a key value line\n")


def test_config_hash_ignores_order():
    assert config_hash({"a": "1", "b": "2"}) == config_hash({"b": "2", "a": "1"})
    assert config_hash({"a": "1"}) != config_hash({"a": "2"})


def test_default_model_from_subject_mass():
    m = default_model()
    assert m.total_mass == pytest.approx(65.0)
    assert m.cart_mass == pytest.approx(65.0 - m.leg_mass)
    again = BodyModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(again.as_vector(), m.as_vector())
    with pytest.raises(KeyError, match="cart_mass"):
        BodyModel.from_dict({k: v for k, v in m.to_dict().items() if k != "model.cart_mass"})
    with pytest.raises(ValueError):
        BodyModel(m.thigh, m.shank, m.foot, 50.0, 0.5)
