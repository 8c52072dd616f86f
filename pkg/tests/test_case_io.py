import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slpopf.case_io import (
    CASE_ALIASES,
    InvalidCase,
    MalformedMatrix,
    MissingSection,
    RawCase,
    UnsupportedCostModel,
    bundled_case_path,
    emit_json,
    load_case,
    parse_case,
    parse_json,
)

CASE3 = """
function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	345	1	1.1	0.9;
	2	2	50	10	0	0	1	1	0	345	1	1.1	0.9;
	3	1	60	20	0	5	1	1	0	345	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
	2	0	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	250	250	250	0	0	1	-360	360;
	2	3	0.01	0.1	0.02	250	250	250	0	0	1	-360	360;
	1	3	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.11	5	0;
	2	0	0	3	0.085	1.2	0;
];
"""


def test_parse_small_case():
    case = parse_case(CASE3)
    assert case.name == "case3"
    assert case.base_mva == 100
    assert case.bus.shape == (3, 13)
    assert case.branch.shape == (3, 13)
    assert case.gen.shape == (2, 10)
    assert case.gencost[1, 4] == pytest.approx(0.085)


def test_comments_continuations_and_expressions():
    text = CASE3.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 100; % system base\n"
                         "mpc.extra = 2 * 3;")
    text = text.replace("1	2	0.01	0.1", "1	2	0.01 ...\n	0.1")
    case = parse_case(text)
    assert case.branch[0, 3] == pytest.approx(0.1)


def test_missing_section():
    with pytest.raises(MissingSection):
        parse_case(CASE3.replace("mpc.gencost", "mpc.gcost"))
    with pytest.raises(MissingSection):
        parse_case(CASE3.replace("mpc.baseMVA = 100;", ""))


def test_ragged_matrix_rejected():
    with pytest.raises(MalformedMatrix):
        parse_case(CASE3.replace("1	1	0	345	1	1.1	0.9;\n	2", "1	1	0	345	1	1.1;\n	2"))


def test_piecewise_cost_rejected():
    bad = CASE3.replace("2	0	0	3	0.11", "1	0	0	3	0.11")
    with pytest.raises(UnsupportedCostModel):
        parse_case(bad)


def test_unknown_bus_and_reference_count():
    with pytest.raises(InvalidCase):
        parse_case(CASE3.replace("2	3	0.01", "2	7	0.01"))
    with pytest.raises(InvalidCase):
        parse_case(CASE3.replace("2	2	50", "2	3	50"))


@pytest.mark.parametrize("name", ["case5", "case9", "case14", "case30", "case33bw", "case57",
                                  "case69", "case118", "case300"])
def test_bundled_cases_load(name):
    case = load_case(name)
    assert case.bus.shape[0] > 0
    assert np.sum(case.bus[:, 1] == 3) == 1


def test_known_dimensions():
    assert load_case("case118").bus.shape[0] == 118
    assert load_case("case300").branch.shape[0] == 411
    assert load_case("case33bw").branch_in_service.sum() == 32


@pytest.mark.parametrize("alias", sorted(CASE_ALIASES))
def test_aliases_resolve(alias):
    assert bundled_case_path(alias) is not None
    assert bundled_case_path(alias + ".m") is not None


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_case("no_such_case")


@pytest.mark.parametrize("name", ["case9", "case33bw", "case300"])
def test_json_round_trip(name):
    case = load_case(name)
    text = emit_json(case)
    again = parse_json(text)
    assert again == case
    assert emit_json(again) == text


def test_json_is_finite(tmp_path):
    text = emit_json({"x": math.nan, "y": [math.inf, 1.0]})
    assert "NaN" not in text and "Infinity" not in text


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=13, max_size=13), st.lists(finite, min_size=2, max_size=2))
def test_json_round_trip_property(extra_bus, costs):
    case = parse_case(CASE3)
    bus = case.bus.copy()
    bus[2, 2:4] = extra_bus[2:4]
    gencost = case.gencost.copy()
    gencost[:, 5] = costs
    mod = RawCase(case.name, case.base_mva, bus, case.branch, case.gen, gencost)
    assert parse_json(emit_json(mod)) == mod
