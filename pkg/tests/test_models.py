import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdilsim import Minibatch, ModelSpec, accuracy, loss_and_grad, param_count
from helpers import central_difference_grad

LOGREG = ModelSpec("logreg", 2, 3)
MLP = ModelSpec("mlp1", 2, 3, hidden_dim=4)


def random_batch(rng, spec, size=8):
    return Minibatch(
        rng.standard_normal((size, spec.input_dim)),
        rng.integers(0, spec.num_classes, size=size),
    )


def test_param_count_examples():
    assert param_count(LOGREG) == 9
    assert param_count(MLP) == 27
    assert param_count(ModelSpec("logreg", 1, 2)) == 4


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("resnet", 2, 3)
    with pytest.raises(ValueError):
        ModelSpec("logreg", 2, 1)
    with pytest.raises(ValueError):
        ModelSpec("mlp1", 2, 3)
    with pytest.raises(ValueError):
        ModelSpec("logreg", 2, 3, hidden_dim=4)
    with pytest.raises(ValueError):
        ModelSpec("mlp1", 2, 3, hidden_dim=4, activation="gelu")


def test_zero_params_two_classes_gives_ln2():
    spec = ModelSpec("logreg", 3, 2)
    batch = Minibatch(np.array([[1.0, -2.0, 0.5], [0.0, 1.0, 3.0]]), np.array([0, 1]))
    loss, grad = loss_and_grad(spec, np.zeros(param_count(spec)), batch)
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)
    assert grad.shape == (param_count(spec),)


def test_duplicated_sample_matches_single():
    rng = np.random.default_rng(7)
    params = rng.standard_normal(param_count(LOGREG))
    single = Minibatch(np.array([[0.3, -1.2]]), np.array([2]))
    double = Minibatch(np.array([[0.3, -1.2], [0.3, -1.2]]), np.array([2, 2]))
    loss_one, grad_one = loss_and_grad(LOGREG, params, single)
    loss_two, grad_two = loss_and_grad(LOGREG, params, double)
    assert loss_one == loss_two
    assert np.array_equal(grad_one, grad_two)


@pytest.mark.parametrize("spec", [LOGREG, MLP, ModelSpec("mlp1", 3, 2, hidden_dim=5, activation="relu")])
def test_gradients_match_central_differences(spec):
    rng = np.random.default_rng(11)
    for _ in range(10):
        params = rng.standard_normal(param_count(spec))
        batch = random_batch(rng, spec)
        _, grad = loss_and_grad(spec, params, batch)
        numeric = central_difference_grad(spec, params, batch)
        rel = np.abs(grad - numeric) / np.maximum(1.0, np.abs(grad))
        assert rel.max() <= 1e-5


def test_dimension_mismatch_rejected():
    batch = Minibatch(np.zeros((2, 2)), np.array([0, 1]))
    with pytest.raises(ValueError):
        loss_and_grad(LOGREG, np.zeros(8), batch)
    with pytest.raises(ValueError):
        loss_and_grad(LOGREG, np.zeros(9), Minibatch(np.zeros((1, 3)), np.array([0])))


def test_nonfinite_inputs_rejected():
    params = np.zeros(param_count(LOGREG))
    params[0] = np.nan
    batch = Minibatch(np.zeros((1, 2)), np.array([0]))
    with pytest.raises(ValueError):
        loss_and_grad(LOGREG, params, batch)
    bad = Minibatch(np.array([[np.inf, 0.0]]), np.array([0]))
    with pytest.raises(ValueError):
        loss_and_grad(LOGREG, np.zeros(9), bad)


def test_label_out_of_range_rejected():
    with pytest.raises(ValueError):
        loss_and_grad(LOGREG, np.zeros(9), Minibatch(np.zeros((1, 2)), np.array([3])))


def test_permutation_roundtrip_is_bit_identical():
    rng = np.random.default_rng(3)
    params = rng.standard_normal(param_count(MLP))
    batch = random_batch(rng, MLP, size=16)
    perm = rng.permutation(16)
    inverse = np.argsort(perm)
    restored = batch.take(perm).take(inverse)
    loss_a, grad_a = loss_and_grad(MLP, params, batch)
    loss_b, grad_b = loss_and_grad(MLP, params, restored)
    assert loss_a == loss_b
    assert np.array_equal(grad_a, grad_b)


def test_determinism():
    rng = np.random.default_rng(5)
    params = rng.standard_normal(param_count(LOGREG))
    batch = random_batch(rng, LOGREG)
    first = loss_and_grad(LOGREG, params, batch)
    second = loss_and_grad(LOGREG, params, batch)
    assert first[0] == second[0]
    assert np.array_equal(first[1], second[1])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 10.0))
def test_loss_is_nonnegative(seed, scale):
    rng = np.random.default_rng(seed)
    params = scale * rng.standard_normal(param_count(LOGREG))
    batch = random_batch(rng, LOGREG, size=4)
    loss, _ = loss_and_grad(LOGREG, params, batch)
    assert loss >= 0.0


def test_accuracy_separable_data_is_perfect():
    spec = ModelSpec("logreg", 1, 2)
    # logits [5x, -5x]: positive x predicts class 0.
    params = np.array([5.0, -5.0, 0.0, 0.0])
    data = Minibatch(np.array([[1.0], [2.0], [-1.0], [-3.0]]), np.array([0, 0, 1, 1]))
    assert accuracy(spec, params, data) == 1.0


def test_accuracy_zero_params_ties_break_to_class_zero():
    spec = ModelSpec("logreg", 1, 2)
    data = Minibatch(np.array([[1.0], [2.0], [-1.0], [-3.0]]), np.array([0, 0, 1, 1]))
    assert accuracy(spec, np.zeros(4), data) == 0.5


def test_accuracy_hand_built_two_thirds():
    # logits = [x, -x]: x=1,y=0 -> [1,-1] correct; x=-1,y=1 -> [-1,1] correct;
    # x=2,y=1 -> [2,-2] predicts 0, wrong.
    spec = ModelSpec("logreg", 1, 2)
    params = np.array([1.0, -1.0, 0.0, 0.0])
    data = Minibatch(np.array([[1.0], [-1.0], [2.0]]), np.array([0, 1, 1]))
    assert accuracy(spec, params, data) == pytest.approx(2.0 / 3.0)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        Minibatch(np.zeros((0, 2)), np.zeros(0, dtype=int))
