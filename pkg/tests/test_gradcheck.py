import pytest

from casi_inpaint import gradcheck as G


def test_relative_error_floor_and_symmetry():
    assert G.relative_error(0.0, 0.0) == 0.0
    assert G.relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert G.relative_error(2.0, 1.0) == G.relative_error(1.0, 2.0) == 0.5


@pytest.mark.parametrize("op", sorted(G.CASES))
def test_every_case_passes_seed_0(op):
    assert G.grad_check(op, 0) <= 1e-4


def test_dict_config_and_determinism():
    assert G.grad_check({"op": "linear"}, 4) == G.grad_check("linear", 4)


def test_check_detects_a_wrong_gradient(monkeypatch):
    from casi_inpaint import tensor as T

    spec = T.OPS["tanh"]
    wrong = T.OpSpec(spec.forward, lambda *a, **k: [1.1 * g for g in spec.backward(*a, **k)])
    monkeypatch.setitem(T.OPS, "tanh", wrong)
    assert G.grad_check("tanh", 0) > 0.05


def test_suite_table():
    rows, secs = G.run_suite(range(2), ops=["relu", "sigmoid"])
    assert [r.op for r in rows] == ["relu", "sigmoid"] and all(r.passed and r.seeds == 2 for r in rows)
    table = G.format_table(rows)
    assert table.splitlines()[0].split() == ["op", "max_rel_err", "seeds", "status"]
    assert secs >= 0
