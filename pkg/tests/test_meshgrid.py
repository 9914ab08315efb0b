import pytest
from hypothesis import given, strategies as st

from mobsynth import meshgrid
from mobsynth.meshgrid import ancestors, grid_cells, parent, synth_code, synth_xy

codes = st.text(alphabet="0123456789", min_size=1, max_size=11)


def test_parent_masks_last_digit():
    assert parent("12345678901") == "1234567890"
    assert parent("50") == "5"
    assert parent(parent("123")) == "1"


def test_parent_of_root_fails():
    with pytest.raises(ValueError, match="no coarser level"):
        parent("7")


@pytest.mark.parametrize("bad", ["", "12a", "123456789012", "１２", None])
def test_invalid_codes_rejected(bad):
    with pytest.raises(ValueError):
        meshgrid.validate(bad)


def test_ancestors_examples():
    assert ancestors("1234") == ["123", "12", "1"]
    assert ancestors("7") == []


@given(codes)
def test_ancestors_are_prefixes_finest_first(code):
    anc = ancestors(code)
    assert len(anc) == len(code) - 1
    assert all(code.startswith(a) for a in anc)
    assert [len(a) for a in anc] == list(range(len(code) - 1, 0, -1))


def test_synth_code_examples():
    assert synth_code(0, 0, 3) == "000"
    assert parent(synth_code(5, 3, 3)) == synth_code(2, 1, 2)
    # digit = xbit + 2*ybit on the four level-1 cells
    assert {(x, y): synth_code(x, y, 1) for x in (0, 1) for y in (0, 1)} == {
        (0, 0): "0", (1, 0): "1", (0, 1): "2", (1, 1): "3"}


def test_quadtree_parent_law_exhaustive():
    for L in range(2, 6):
        side = 1 << L
        for x in range(side):
            for y in range(side):
                assert parent(synth_code(x, y, L)) == synth_code(x // 2, y // 2, L - 1)


def test_synth_code_injective_and_invertible():
    for L in range(1, 6):
        cells = grid_cells(L)
        assert len(set(cells)) == len(cells) == 4 ** L
        for c in cells:
            assert synth_code(*synth_xy(c), L) == c


@pytest.mark.parametrize("x,y,L", [(8, 0, 3), (0, -1, 3), (0, 0, 0), (0, 0, 12)])
def test_synth_code_range(x, y, L):
    with pytest.raises(ValueError):
        synth_code(x, y, L)
