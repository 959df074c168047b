import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rnntest.errors import ConfigurationError, InputError
from rnntest.synthesis import (GENERATED_NOT_REDUCED, NOT_GENERATED, PERFORMANCE_REDUCED, EmbeddingTable,
                               SynthesisConfig, classify_outcome, gaussian_noise, gen_adv_discrete,
                               gen_adv_discrete_steps, perturb_continuous, random_replacement)
from oracles import exhaustive_nearest


def _table(rng, V=20, D=4):
    return EmbeddingTable(rng.normal(size=(V, D)))


def test_zero_gradient_not_generated():
    embs = _table(np.random.default_rng(0))
    x = np.array([3, 4, 5])
    cand = gen_adv_discrete(x, 1, np.zeros((3, 4)), embs, SynthesisConfig())
    assert cand.status == NOT_GENERATED and np.array_equal(cand.input, x)
    assert cand.changed_positions == [] and cand.scale_used is None


def test_two_token_geometry():
    embs = EmbeddingTable(np.array([[0.0, 0.0], [1.0, 0.0]]))
    cand = gen_adv_discrete(np.array([0]), 0, np.array([[1.0, 0.0]]), embs, SynthesisConfig())
    assert cand.input.tolist() == [1] and cand.scale_used == 1
    assert cand.perturbation_l2 == 1.0 and cand.status == GENERATED_NOT_REDUCED


def test_exhaustive_oracle_seed_14():
    rng = np.random.default_rng(14)
    embs = _table(rng)
    x = rng.integers(0, 20, size=6)
    grad = rng.normal(scale=0.3, size=(6, 4))
    for t in range(6):
        cand = gen_adv_discrete(x, t, grad, embs, SynthesisConfig(max_scale=10))
        tok, scale = exhaustive_nearest(embs.vectors, int(x[t]), grad[t], 10)
        assert cand.input[t] == tok
        assert (cand.scale_used or 0) == scale


def test_no_change_within_max_scale():
    embs = EmbeddingTable(np.array([[0.0, 0.0], [10.0, 0.0]]))
    cand = gen_adv_discrete(np.array([0]), 0, np.array([[0.1, 0.0]]), embs, SynthesisConfig(max_scale=3))
    assert cand.status == NOT_GENERATED and cand.input.tolist() == [0]


def test_discrete_input_errors():
    embs = _table(np.random.default_rng(1))
    with pytest.raises(InputError):
        gen_adv_discrete(np.array([1, 2]), 5, np.ones((2, 4)), embs, SynthesisConfig())
    with pytest.raises(InputError):
        gen_adv_discrete(np.array([1, 2]), 0, np.ones((2, 3)), embs, SynthesisConfig())
    with pytest.raises(InputError):
        gen_adv_discrete(np.array([1, 2]), 0, np.full((2, 4), np.nan), embs, SynthesisConfig())


def test_embedding_table_validation():
    with pytest.raises(ConfigurationError):
        EmbeddingTable(np.zeros((1, 3)))
    with pytest.raises(ConfigurationError):
        EmbeddingTable(np.array([[1.0, 2.0], [1.0, 2.0]]))
    with pytest.raises(ConfigurationError):
        EmbeddingTable(np.eye(2), tokens=["a"])


def test_synthesis_config_validation():
    for kw in ({"max_scale": 0}, {"epsilon": 0.0}, {"step_size": -1.0}):
        with pytest.raises(ConfigurationError):
            SynthesisConfig(**kw)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 30), st.integers(1, 10), st.integers(1, 4))
def test_discrete_legality_and_single_position_edits(seed, V, max_scale, k):
    rng = np.random.default_rng(seed)
    embs = _table(rng, V, 3)
    x = rng.integers(0, V, size=8)
    steps = sorted(rng.choice(8, size=k, replace=False).tolist())
    grad = rng.normal(size=(8, 3))
    cand = gen_adv_discrete_steps(x, steps, grad, embs, SynthesisConfig(max_scale=max_scale))
    assert np.all((cand.input >= 0) & (cand.input < V))
    changed = np.flatnonzero(cand.input != x).tolist()
    assert changed == cand.changed_positions
    assert set(changed) <= set(steps)
    for t in steps:
        tok, _ = exhaustive_nearest(embs.vectors, int(x[t]), grad[t], max_scale)
        assert cand.input[t] == tok
    if not cand.generated:
        assert np.array_equal(cand.input, x)


# -- continuous ----------------------------------------------------------------

def test_continuous_zero_gradient():
    x = np.ones((3, 2))
    cand = perturb_continuous(x, np.zeros((3, 2)), SynthesisConfig())
    assert cand.status == NOT_GENERATED and np.array_equal(cand.input, x)


def test_continuous_unit_vector_hits_budget():
    g = np.zeros((2, 3))
    g[1, 2] = 1.0
    cand = perturb_continuous(np.zeros((2, 3)), g, SynthesisConfig(epsilon=0.04))
    assert cand.perturbation_l2 == 0.04
    assert cand.changed_positions == [1]


def test_continuous_direction_matches_gradient():
    rng = np.random.default_rng(19)
    x, g = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    cand = perturb_continuous(x, g, SynthesisConfig(epsilon=0.5))
    d = (cand.input - x).ravel()
    cos = d @ g.ravel() / (np.linalg.norm(d) * np.linalg.norm(g))
    assert abs(cos - 1.0) < 1e-12


def test_continuous_below_budget_keeps_raw_step():
    g = np.full((2, 2), 0.01)
    cand = perturb_continuous(np.zeros((2, 2)), g, SynthesisConfig(epsilon=1.0, step_size=2.0))
    assert np.allclose(cand.perturbation, 2.0 * g, rtol=0, atol=1e-15)


def test_sign_perturbation():
    g = np.array([[0.5, -2.0], [0.0, 1e-9]])
    cand = perturb_continuous(np.zeros((2, 2)), g, SynthesisConfig(epsilon=10.0), sign=True)
    assert cand.perturbation.tolist() == [[1.0, -1.0], [0.0, 1.0]]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 5.0), st.floats(1e-3, 1e3), st.booleans())
def test_continuous_budget_never_exceeded(seed, eps, step, sign):
    rng = np.random.default_rng(seed)
    x, g = rng.normal(size=(4, 3)), rng.normal(scale=rng.uniform(1e-3, 10), size=(4, 3))
    cand = perturb_continuous(x, g, SynthesisConfig(epsilon=eps, step_size=step), sign=sign)
    assert np.linalg.norm(cand.input - x) <= eps + 1e-12


def test_gaussian_noise_has_budget_norm():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cand = gaussian_noise(np.zeros((8, 8)), SynthesisConfig(epsilon=1.5), rng)
        assert cand.perturbation_l2 == pytest.approx(1.5, rel=1e-12)


def test_random_replacement_always_changes():
    rng = np.random.default_rng(5)
    embs = _table(rng, 6, 2)
    x = rng.integers(0, 6, size=10)
    for _ in range(200):
        cand = random_replacement(x, [2, 7], 6, rng, embs)
        assert cand.input[2] != x[2] and cand.input[7] != x[7]
        assert np.array_equal(np.delete(cand.input, [2, 7]), np.delete(x, [2, 7]))
        assert 0 <= cand.input.min() and cand.input.max() < 6


def test_random_replacement_covers_alternatives():
    rng = np.random.default_rng(6)
    seen = {int(random_replacement(np.array([2]), [0], 5, rng).input[0]) for _ in range(300)}
    assert seen == {0, 1, 3, 4}


# -- outcome -------------------------------------------------------------------

def test_classify_outcome_examples():
    assert classify_outcome(150.0, 150.0, "perplexity") == GENERATED_NOT_REDUCED
    assert classify_outcome(7, 3, "label") == PERFORMANCE_REDUCED
    assert classify_outcome(5.50, 8.10, "wer") == PERFORMANCE_REDUCED
    assert classify_outcome(0.6, 0.5, "bleu") == PERFORMANCE_REDUCED
    assert classify_outcome(0.5, 0.6, "bleu") == GENERATED_NOT_REDUCED
    assert classify_outcome(150.0, 300.0, "perplexity", mutated=False) == NOT_GENERATED
    with pytest.raises(ConfigurationError):
        classify_outcome(1.0, 2.0, "accuracyish")
