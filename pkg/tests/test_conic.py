import numpy as np
import pytest

from selfbackhaul.conic import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    ConicProgram,
    Expr,
    ProgramBuilder,
    ProgramError,
    build_program,
    constraint_violation,
    solve,
)


def test_lp_and_soc_optimum():
    # max x + y  s.t.  ||(x, y)|| <= 1
    b = ProgramBuilder()
    x = b.add_variables("x", 2)
    b.add_cone(Expr.constant(1.0), [Expr.var(x[0]), Expr.var(x[1])])
    b.set_objective(Expr(x, [1.0, 1.0]))
    rep = solve(b.build())
    assert rep.status == OPTIMAL
    assert rep.objective == pytest.approx(np.sqrt(2), abs=1e-6)
    assert np.allclose(rep.x, np.sqrt(0.5), atol=1e-6)


def test_equalities_bounds_and_offset():
    p = build_program([
        ("var", "x", 3, 0.0, 2.0),
        ("eq", ([0, 1], [1.0, 1.0], 0.0), 1.5),
        ("le", ([2], [1.0], 0.0), 0.5),
        ("max", ([0, 1, 2], [1.0, 2.0, 3.0], 10.0)),
    ])
    rep = solve(p)
    assert rep.status == OPTIMAL
    assert rep.objective == pytest.approx(10 + 3.0 + 1.5, abs=1e-6)


def test_infeasible_and_unbounded():
    p = build_program([("var", "x", 1), ("ge", ([0], [1.0], 0.0), 2.0), ("le", ([0], [1.0], 0.0), 1.0),
                       ("max", ([0], [1.0], 0.0))])
    assert solve(p).status == INFEASIBLE
    q = build_program([("var", "x", 1, 0.0, np.inf), ("max", ([0], [1.0], 0.0))])
    assert solve(q).status == UNBOUNDED


def test_fixed_variable_presolve():
    # pinning through bounds keeps the answer and catches violated constant rows
    p = build_program([("var", "x", 2, 0.0, 1.0), ("le", ([0, 1], [1.0, 1.0], 0.0), 1.5),
                       ("max", ([0, 1], [1.0, 1.0], 0.0))])
    lb, ub = p.lb.copy(), p.ub.copy()
    lb[0] = ub[0] = 1.0
    rep = solve(p.with_bounds(lb, ub))
    assert rep.status == OPTIMAL and rep.x[0] == 1.0 and rep.x[1] == pytest.approx(0.5, abs=1e-7)
    lb[1] = ub[1] = 1.0
    rep = solve(p.with_bounds(lb, ub))
    assert rep.status == INFEASIBLE and rep.backend_status == "presolve"


def test_duplicate_indices_add_up():
    e = Expr([0, 0, 1], [1.0, 2.0, 1.0], 0.5)
    assert e.value(np.array([1.0, 1.0])) == pytest.approx(4.5)
    with pytest.raises(ProgramError):
        Expr([0, 1], [1.0])


def test_builder_rejects_out_of_range():
    b = ProgramBuilder()
    b.add_variables("x", 1)
    with pytest.raises(ProgramError):
        b.add_le(Expr.var(3), 1.0)


def test_serialization_round_trip(tmp_path):
    b = ProgramBuilder("demo")
    x = b.add_variables("x", 3, lb=-1.0, ub=1.0)
    b.add_cone(Expr.var(x[0], 1.0) + 2.0, [Expr.var(x[1]), Expr.var(x[2])], "cone")
    b.add_eq(Expr(x, [1.0, 1.0, 1.0]), 0.5, "sum")
    b.set_objective(Expr(x, [1.0, -1.0, 0.5]))
    p = b.build()
    p.save(tmp_path / "p.json")
    import json
    q = ConicProgram.from_dict(json.loads((tmp_path / "p.json").read_text()))
    r1, r2 = solve(p), solve(q)
    assert r1.objective == pytest.approx(r2.objective, abs=1e-9)
    assert q.cone_tags == ("cone",) and q.eq_tags == ("sum",)


def test_restrict_keeps_tagged_rows():
    b = ProgramBuilder()
    x = b.add_variables("x", 3, lb=0.0, ub=5.0)
    b.add_le(Expr.var(x[0]), 1.0, "A")
    b.add_le(Expr(x[1:], [1.0, 1.0]), 2.0, "B")
    b.set_objective(Expr(x, [1.0, 1.0, 1.0]))
    sub, cols = b.build().restrict(["B"])
    assert list(cols) == [1, 2] and sub.A_le.shape == (1, 2) and sub.le_tags == ("B",)


def test_violation_measure():
    p = build_program([("var", "x", 2), ("cone", 1.0, [([0], [1.0], 0.0), ([1], [1.0], 0.0)])])
    assert constraint_violation(p, np.array([0.6, 0.8])) == pytest.approx(0.0, abs=1e-12)
    assert constraint_violation(p, np.array([3.0, 4.0])) == pytest.approx(4.0)
