import itertools
import time

import numpy as np
import pytest
from scipy.special import expit

from longmed.exceptions import (
    InvalidModelError,
    PositivityViolationError,
    StateSpaceTooLargeError,
)
from longmed.scm import StructuralModel, Variable, load_model, preset_model

from conftest import rng

# Exact counterfactual cells of the two-time preset, frozen from exhaustive
# enumeration; keys are (t, a, a_star).
T2_CELLS = {
    (0, 0, 0): 0.4842105077,
    (0, 1, 0): 0.580584606,
    (0, 0, 1): 0.5125362758,
    (0, 1, 1): 0.6081310494,
    (1, 0, 0): 0.569006733,
    (1, 1, 0): 0.6939487319,
    (1, 0, 1): 0.6073724158,
    (1, 1, 1): 0.7268576288,
}
T2_DIRECT_LOG = {0: 0.38835269091343116, 1: 0.5408456546381921}
T2_INDIRECT_LOG = {0: 0.11428921150761379, 1: 0.1600920054027699}
SINGLE_DIRECT_OR = 1.1045403418102542
SINGLE_INDIRECT_OR = 1.0024777580772681


def bern(name, parents, intercept, coef):
    return Variable(
        name=name,
        dist="bernoulli",
        parents=tuple(parents),
        intercept=(float(intercept),),
        coef=(tuple(float(c) for c in coef),),
    )


def tiny_model(m_coef_a=0.8, y_coef_a=0.4):
    variables = [
        Variable(name="L0", dist="bernoulli", table=((0.5, 0.5),)),
        bern("A", ("L0",), -0.1, (0.3,)),
        bern("M0", ("A", "L0"), -0.2, (m_coef_a, 0.3)),
        bern("Y0", ("A", "M0", "L0"), -0.3, (y_coef_a, 0.5, 0.2)),
    ]
    roles = {
        "exposure": "A",
        "baseline": ["L0"],
        "mediators": ["M0"],
        "outcomes": ["Y0"],
        "times": [0],
    }
    return StructuralModel(variables, roles)


# -- validation ---------------------------------------------------------


def test_duplicate_names_rejected():
    v = [
        Variable(name="A", dist="bernoulli", table=((0.5, 0.5),)),
        Variable(name="A", dist="bernoulli", table=((0.5, 0.5),)),
    ]
    with pytest.raises(InvalidModelError, match="duplicate"):
        StructuralModel(
            v,
            {
                "exposure": "A",
                "mediators": ["A"],
                "outcomes": ["A"],
                "times": [0],
            },
        )


def test_unknown_and_unordered_parents_rejected():
    with pytest.raises(InvalidModelError, match="unknown parent"):
        tiny = [
            bern("A", ("ghost",), 0.0, (0.1,)),
            bern("M0", ("A",), 0.0, (0.1,)),
            bern("Y0", ("A",), 0.0, (0.1,)),
        ]
        StructuralModel(
            tiny,
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )
    with pytest.raises(InvalidModelError, match="not declared before"):
        tiny = [
            bern("A", ("M0",), 0.0, (0.1,)),
            bern("M0", ("A",), 0.0, (0.1,)),
            bern("Y0", ("A",), 0.0, (0.1,)),
        ]
        StructuralModel(
            tiny,
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )


def test_normal_must_be_root_with_positive_sd():
    with pytest.raises(InvalidModelError, match="roots"):
        StructuralModel(
            [
                Variable(name="A", dist="bernoulli", table=((0.5, 0.5),)),
                Variable(name="X", dist="normal", parents=("A",), mean=0.0, sd=1.0),
                bern("M0", ("A",), 0.0, (0.1,)),
                bern("Y0", ("A",), 0.0, (0.1,)),
            ],
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )
    with pytest.raises(InvalidModelError, match="sd"):
        StructuralModel(
            [
                Variable(name="X", dist="normal", mean=0.0, sd=0.0),
                bern("A", ("X",), 0.0, (0.1,)),
                bern("M0", ("A",), 0.0, (0.1,)),
                bern("Y0", ("A",), 0.0, (0.1,)),
            ],
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )


def test_table_shape_and_probability_checks():
    with pytest.raises(InvalidModelError, match="shape"):
        StructuralModel(
            [
                Variable(name="A", dist="bernoulli", table=((0.5, 0.5),)),
                Variable(
                    name="M0", dist="bernoulli", parents=("A",), table=((0.5, 0.5),)
                ),
                bern("Y0", ("A", "M0"), 0.0, (0.1, 0.1)),
            ],
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )
    with pytest.raises(InvalidModelError, match="probabilities"):
        StructuralModel(
            [
                Variable(name="A", dist="bernoulli", table=((0.7, 0.5),)),
                bern("M0", ("A",), 0.0, (0.1,)),
                bern("Y0", ("A",), 0.0, (0.1,)),
            ],
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )


def test_parameterization_is_exclusive():
    with pytest.raises(InvalidModelError, match="either"):
        StructuralModel(
            [
                Variable(
                    name="A",
                    dist="bernoulli",
                    table=((0.5, 0.5),),
                    intercept=(0.0,),
                    coef=((),),
                ),
                bern("M0", ("A",), 0.0, (0.1,)),
                bern("Y0", ("A",), 0.0, (0.1,)),
            ],
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )
    with pytest.raises(InvalidModelError, match="either"):
        StructuralModel(
            [
                Variable(name="A", dist="bernoulli"),
                bern("M0", ("A",), 0.0, (0.1,)),
                bern("Y0", ("A",), 0.0, (0.1,)),
            ],
            {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]},
        )


def test_role_checks():
    variables = [
        Variable(name="L0", dist="bernoulli", table=((0.5, 0.5),)),
        bern("A", ("L0",), 0.0, (0.1,)),
        bern("M0", ("A",), 0.0, (0.1,)),
        bern("Y0", ("A",), 0.0, (0.1,)),
    ]
    with pytest.raises(InvalidModelError, match="missing key"):
        StructuralModel(variables, {"exposure": "A", "mediators": ["M0"], "times": [0]})
    with pytest.raises(InvalidModelError, match="unknown variable"):
        StructuralModel(
            variables,
            {"exposure": "A", "mediators": ["M9"], "outcomes": ["Y0"], "times": [0]},
        )
    with pytest.raises(InvalidModelError, match="per time"):
        StructuralModel(
            variables,
            {
                "exposure": "A",
                "mediators": ["M0"],
                "outcomes": ["Y0"],
                "times": [0, 1],
            },
        )
    with pytest.raises(InvalidModelError, match="out of order"):
        StructuralModel(
            variables,
            {
                "exposure": "A",
                "mediators": ["Y0"],
                "outcomes": ["M0"],
                "times": [0],
            },
        )
    with pytest.raises(InvalidModelError, match="precede"):
        StructuralModel(
            variables,
            {
                "exposure": "A",
                "baseline": ["M0"],
                "mediators": ["M0"],
                "outcomes": ["Y0"],
                "times": [0],
            },
        )


def test_unknown_preset_rejected():
    with pytest.raises(InvalidModelError, match="unknown preset"):
        preset_model("does_not_exist")


# -- simulation ---------------------------------------------------------


def test_simulate_is_deterministic(t2_model):
    a = t2_model.simulate(400, seed=5).frame
    b = t2_model.simulate(400, seed=5).frame
    c = t2_model.simulate(400, seed=6).frame
    assert a.equals(b)
    assert not a.equals(c)
    np.testing.assert_array_equal(a["id"], np.arange(400))


def test_simulate_matches_schema(t2_model, t2_data):
    schema = t2_model.schema()
    assert schema.exposure == "A"
    assert schema.mediator_cols == ("M0", "M1")
    assert schema.outcome_cols == ("Y0", "Y1")
    assert schema.outcome_type == "binary"
    assert t2_data.schema == schema
    assert set(schema.declared_columns()) <= set(t2_data.frame.columns)


def _joint_enumeration():
    # Independent pure-python enumeration of the two-time preset using its
    # published coefficients; returns the joint pmf over all 7 binaries.
    def p(lin, value):
        prob = expit(lin)
        return prob if value == 1 else 1.0 - prob

    joint = {}
    for combo in itertools.product((0, 1), repeat=7):
        l0, a, m0, y0, l1, m1, y1 = combo
        prob = 0.5
        prob *= p(-0.2 + 0.4 * l0, a)
        prob *= p(-0.3 + 0.8 * a + 0.4 * l0, m0)
        prob *= p(-0.5 + 0.4 * a + 0.6 * m0 + 0.3 * l0, y0)
        prob *= p(-0.2 + 0.3 * a + 0.4 * m0 + 0.3 * y0 + 0.2 * l0, l1)
        prob *= p(-0.4 + 0.7 * a + 0.5 * m0 + 0.4 * l1 + 0.2 * y0 + 0.2 * l0, m1)
        prob *= p(
            -0.6 + 0.5 * a + 0.5 * m1 + 0.3 * m0 + 0.4 * l1 + 0.3 * y0 + 0.2 * l0,
            y1,
        )
        joint[combo] = prob
    return joint


def test_simulated_frequencies_match_enumeration(t2_model):
    joint = _joint_enumeration()
    assert sum(joint.values()) == pytest.approx(1.0, abs=1e-12)
    names = ("L0", "A", "M0", "Y0", "L1", "M1", "Y1")
    truth = {
        name: sum(p for combo, p in joint.items() if combo[i] == 1)
        for i, name in enumerate(names)
    }
    n = 200_000
    frame = t2_model.simulate(n, seed=101).frame
    for name in names:
        freq = frame[name].mean()
        se = np.sqrt(truth[name] * (1 - truth[name]) / n)
        assert abs(freq - truth[name]) < 4 * se, name


# -- exact oracles ------------------------------------------------------


def test_frozen_two_time_truths(t2_model):
    te = t2_model.true_effects()
    for (t, a, a_star), value in T2_CELLS.items():
        assert te.p[(t, a, a_star)] == pytest.approx(value, abs=1e-9)
    for t in (0, 1):
        assert te.direct_log[t] == pytest.approx(T2_DIRECT_LOG[t], abs=1e-12)
        assert te.indirect_log[t] == pytest.approx(T2_INDIRECT_LOG[t], abs=1e-12)
        assert te.total_log(t) == te.direct_log[t] + te.indirect_log[t]
    frame = te.frame()
    assert list(frame.columns) == ["t", "a", "a_star", "p"]
    assert len(frame) == 8


def test_frozen_single_mediator_truths(single_model):
    te = single_model.true_effects()
    assert np.exp(te.direct_log[0]) == pytest.approx(SINGLE_DIRECT_OR, rel=1e-12)
    assert np.exp(te.indirect_log[0]) == pytest.approx(SINGLE_INDIRECT_OR, rel=1e-12)


def test_identity_on_presets(t2_model, single_model):
    for model, T in ((t2_model, 2), (single_model, 1)):
        for t in range(T):
            for a in (0, 1):
                for a_star in (0, 1):
                    gf = model.gformula_value(t, a, a_star).value
                    ipw = model.ipw_population_value(t, a, a_star)
                    assert abs(gf - ipw) < 1e-12
                    assert 0.0 < gf < 1.0


def random_discrete_model(seed):
    r = rng(seed)
    T = int(r.integers(1, 3))
    K = int(r.integers(2, 4))

    def coefs(k):
        return tuple(float(c) for c in r.uniform(-1.0, 1.0, size=k))

    p0 = float(r.uniform(0.3, 0.7))
    variables = [Variable(name="L0", dist="bernoulli", table=((p0, 1.0 - p0),))]
    history = ["L0"]
    variables.append(bern("A", tuple(history), float(r.uniform(-0.5, 0.5)), coefs(1)))
    history.append("A")
    mediators, outcomes = [], []
    for t in range(T):
        m = f"M{t}"
        variables.append(
            Variable(
                name=m,
                dist="categorical" if K > 2 else "bernoulli",
                parents=tuple(history),
                n_levels=K,
                intercept=tuple(float(c) for c in r.uniform(-0.5, 0.5, size=K - 1)),
                coef=tuple(coefs(len(history)) for _ in range(K - 1)),
            )
        )
        history.append(m)
        mediators.append(m)
        y = f"Y{t}"
        variables.append(
            bern(y, tuple(history), float(r.uniform(-0.5, 0.5)), coefs(len(history)))
        )
        history.append(y)
        outcomes.append(y)
    roles = {
        "exposure": "A",
        "baseline": ["L0"],
        "mediators": mediators,
        "outcomes": outcomes,
        "times": list(range(T)),
    }
    return StructuralModel(variables, roles), T


def test_identity_on_twenty_random_models():
    t0 = time.perf_counter()
    for seed in range(20):
        model, T = random_discrete_model(1000 + seed)
        for t in range(T):
            for a in (0, 1):
                for a_star in (0, 1):
                    gf = model.gformula_value(t, a, a_star).value
                    ipw = model.ipw_population_value(t, a, a_star)
                    assert abs(gf - ipw) < 1e-10, (seed, t, a, a_star)
    assert time.perf_counter() - t0 < 5.0


def test_null_mediator_path_has_zero_indirect_effect():
    te = tiny_model(m_coef_a=0.0).true_effects()
    assert te.indirect_log[0] == 0.0
    assert te.direct_log[0] > 0.0


def test_null_direct_path_has_zero_direct_effect():
    variables = [
        Variable(name="L0", dist="bernoulli", table=((0.5, 0.5),)),
        bern("A", ("L0",), -0.1, (0.3,)),
        bern("M0", ("A", "L0"), -0.2, (0.8, 0.3)),
        bern("Y0", ("M0", "L0"), -0.3, (0.5, 0.2)),
    ]
    roles = {
        "exposure": "A",
        "baseline": ["L0"],
        "mediators": ["M0"],
        "outcomes": ["Y0"],
        "times": [0],
    }
    te = StructuralModel(variables, roles).true_effects()
    assert te.direct_log[0] == 0.0
    assert te.indirect_log[0] > 0.0


def test_fully_null_model():
    te = tiny_model(m_coef_a=0.0, y_coef_a=0.0).true_effects()
    cells = {te.p[(0, a, s)] for a in (0, 1) for s in (0, 1)}
    assert len(cells) == 1
    assert te.direct_log[0] == 0.0 and te.indirect_log[0] == 0.0


def test_positivity_violation_detected():
    variables = [
        Variable(name="A", dist="bernoulli", table=((0.5, 0.5),)),
        Variable(name="M0", dist="bernoulli", parents=("A",), table=((1.0, 0.0), (0.5, 0.5))),
        bern("Y0", ("A", "M0"), 0.0, (0.3, 0.4)),
    ]
    roles = {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]}
    model = StructuralModel(variables, roles)
    with pytest.raises(PositivityViolationError):
        model.ipw_population_value(0, 0, 1)
    assert model.ipw_population_value(0, 1, 0) == pytest.approx(
        model.gformula_value(0, 1, 0).value, abs=1e-12
    )
    for a in (0, 1):
        for s in (0, 1):
            assert 0.0 < model.gformula_value(0, a, s).value < 1.0


def test_structural_zero_exposure_arm_detected():
    variables = [
        Variable(name="A", dist="bernoulli", table=((1.0, 0.0),)),
        bern("M0", ("A",), 0.0, (0.3,)),
        bern("Y0", ("A", "M0"), 0.0, (0.3, 0.4)),
    ]
    roles = {"exposure": "A", "mediators": ["M0"], "outcomes": ["Y0"], "times": [0]}
    model = StructuralModel(variables, roles)
    with pytest.raises(PositivityViolationError):
        model.ipw_population_value(0, 1, 0)


def test_state_space_budget(t2_model):
    with pytest.raises(StateSpaceTooLargeError):
        t2_model.gformula_value(1, 0, 0, max_states=4)
    with pytest.raises(StateSpaceTooLargeError):
        t2_model.ipw_population_value(1, 0, 0, max_states=4)


# -- serialization ------------------------------------------------------


def test_json_roundtrip(tmp_path, t2_model):
    path = tmp_path / "model.json"
    t2_model.save(path)
    back = load_model(path)
    assert back.simulate(100, seed=3).frame.equals(t2_model.simulate(100, seed=3).frame)
    te_a, te_b = t2_model.true_effects(), back.true_effects()
    assert te_a.direct_log == te_b.direct_log
    assert te_a.indirect_log == te_b.indirect_log


def test_from_dict_rejects_malformed(t2_model):
    good = t2_model.to_dict()
    bad = dict(good)
    del bad["variables"]
    with pytest.raises(InvalidModelError):
        StructuralModel.from_dict(bad)
    bad = {
        "variables": [dict(v, dist="triangular") for v in good["variables"]],
        "roles": good["roles"],
    }
    with pytest.raises(InvalidModelError):
        StructuralModel.from_dict(bad)
    with pytest.raises(InvalidModelError):
        StructuralModel.from_dict({"roles": {}, "variables": "nope"})
