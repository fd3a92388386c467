import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact import market
from artifact.errors import DimensionMismatch, ValidationError
from artifact.market import ModelParams

from conftest import random_params


def base(**kw):
    doc = dict(gammas=[1.0, 2.0], alpha=[[1.0]], beta=[0.0], xi=[[0.3]], lambda_bar=[[0.1]], supply=[1.0])
    doc.update(kw)
    return ModelParams(**doc)


def test_gamma_bar_harmonic():
    assert market.gamma_bar([1.0, 2.0]) == pytest.approx(2.0 / 3.0)
    assert market.gamma_bar([3.0, 3.0, 3.0]) == pytest.approx(1.0)


def test_two_agent_aggregates():
    g1, g2 = 1.0, 3.0
    G = market.gamma_matrix([g1, g2])
    assert G.shape == (1, 1)
    assert G[0, 0] == pytest.approx((g1 + g2) / 2)
    c = market.risk_aversion_vector([g1, g2])
    assert c[0] == pytest.approx((g2 - g1) / (g1 + g2))


def test_gamma_matrix_by_hand():
    g = np.array([1.0, 2.0, 4.0])
    expect = np.diag([1.0, 2.0]) - np.outer([1.0, 1.0], [1.0 - 4.0, 2.0 - 4.0]) / 3.0
    assert np.allclose(market.gamma_matrix(g), expect)


@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=6))
def test_equal_gammas_give_zero_c(vals):
    g = np.full(len(vals), vals[0])
    assert np.allclose(market.risk_aversion_vector(g), 0.0)


@given(st.integers(0, 10_000))
def test_aggregates_consistency(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    agg = market.risk_aggregates(p)
    assert np.allclose(agg.gamma_sqrt @ agg.gamma_sqrt, agg.Gamma, atol=1e-10)
    # Gamma has the positive spectrum of a similarity transform of diag(gamma)
    assert np.all(np.linalg.eigvals(agg.Gamma).real > 0)
    g = p.gammas
    # frictionless holdings of all agents sum to the supply
    allpos = market.frictionless_equilibrium(p).all_positions(p.supply)
    assert np.allclose(allpos.sum(axis=0), p.supply)
    assert np.allclose(allpos[-1], agg.gamma_bar / g[-1] * p.supply)


def test_frictionless_equilibrium_scalar():
    p = base(beta=[0.5], horizon=2.0)
    fl = market.frictionless_equilibrium(p)
    gb = 2.0 / 3.0
    assert fl.mu_bar[0] == pytest.approx(gb)
    assert fl.s0_bar[0] == pytest.approx((0.5 - gb) * 2.0)


def test_validate_reports_gamma_ordering():
    rep = market.validate(base(gammas=[2.0, 1.0]))
    assert not rep.ok
    assert any("gamma ordering" in v for v in rep.violations)


def test_validate_alpha_rank():
    p = ModelParams(gammas=[1, 2], alpha=[[1.0, 0.0], [2.0, 0.0]], beta=[0, 0], xi=np.zeros((2, 2)),
                    lambda_bar=np.eye(2), supply=[1, 1])
    assert any("alpha rank" in v for v in market.validate(p).violations)


def test_validate_multiple():
    p = base(gammas=[-1.0, 2.0], lambda_bar=[[-0.1]], horizon=-1.0)
    v = market.validate(p).violations
    assert len(v) >= 3


def test_require_valid_raises():
    with pytest.raises(ValidationError, match="gamma ordering"):
        market.require_valid(base(gammas=[3.0, 1.0]))


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        base(xi=[[0.3, 0.1]])
    with pytest.raises(DimensionMismatch):
        base(supply=[1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        base(gammas=[1.0])


def test_xi_block_last_agent():
    p = ModelParams(gammas=[1, 2, 3], alpha=[[1.0]], beta=[0], xi=[[0.2], [0.5]], lambda_bar=[[1.0]], supply=[1])
    assert p.xi_block(2)[0, 0] == pytest.approx(-0.7)
    blocks = np.array([[[0.2]], [[0.5]]])
    assert np.allclose(ModelParams(gammas=[1, 2, 3], alpha=[[1.0]], beta=[0], xi=blocks, lambda_bar=[[1.0]],
                                   supply=[1]).xi, p.xi)


def test_json_roundtrip(rng):
    p = random_params(rng, n_agents=3, k=2, d=3).replace(initial_positions=np.arange(4.0))
    q = ModelParams.from_json(p.to_json())
    assert q.to_json() == p.to_json()
    assert q.digest() == p.digest()
    assert p.replace(lambda_scale=0.5).digest() != p.digest()


def test_from_dict_errors():
    with pytest.raises(ValidationError):
        ModelParams.from_dict({"gammas": [1, 2]})
    with pytest.raises(ValidationError):
        ModelParams.from_dict(json.loads('{"gammas":[1,2],"alpha":[["x"]],"lambda_bar":[[1]],"supply":[1]}'))


def test_initial_positions_default(rng):
    p = random_params(rng)
    assert np.allclose(market.initial_positions(p), market.frictionless_positions(p))
