import numpy as np
import pytest

from sgspen.data import MultiLabelExample
from sgspen.energies import MultiLabelEnergy
from sgspen.inference import (
    InferenceConfig,
    InferenceError,
    infer,
    predict,
    sample,
    write_trajectory_csv,
)
from sgspen.outputs import OutputSpace, one_hot, round_output
from sgspen.tensor import softmax


def zero_model(num_labels=3, num_features=4):
    return MultiLabelEnergy(num_features, num_labels, feature_hidden=4, global_hidden=3, rng=None)


def example(num_features=4):
    return MultiLabelExample(np.zeros(num_features), frozenset())


def test_zero_parameter_model_stays_uniform():
    model = zero_model()
    final, traj = infer(model, example(), InferenceConfig(steps=10, eta=1.0, record_trajectory=True))
    for point in traj.points + (final,):
        for d in point.dists:
            assert np.array_equal(d, [0.5, 0.5])


def test_linear_energy_drives_state1_mass_down_every_step():
    # params zeroed except the local score bias: E = p_1 exactly
    model = zero_model(num_labels=1)
    model.params["b2"] = np.array([1.0])
    _, traj = infer(model, example(), InferenceConfig(steps=8, eta=0.5, record_trajectory=True))
    masses = [float(p.dists[0][1]) for p in traj.points]
    previous = 0.5
    for m in masses:
        assert m < previous
        previous = m


def test_logit_step_equals_multiplicative_update_at_100_points():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(2, 7))
        logits = rng.normal(scale=2.0, size=k)
        grad = rng.normal(scale=3.0, size=k)
        eta = float(rng.uniform(0.05, 2.0))
        additive = softmax(logits - eta * grad)
        y = softmax(logits)
        unnorm = y * np.exp(-eta * grad)
        multiplicative = unnorm / unnorm.sum()
        assert np.max(np.abs(additive - multiplicative)) <= 1e-10


def test_one_infer_step_matches_multiplicative_form_on_a_model():
    rng = np.random.default_rng(1)
    model = MultiLabelEnergy(4, 3, feature_hidden=5, global_hidden=4, rng=rng)
    ex = MultiLabelExample(rng.normal(size=4), frozenset())
    uniform = infer(model, ex, InferenceConfig(steps=1, eta=0.7, record_trajectory=True))
    y0_dists = [np.full(2, 0.5) for _ in range(3)]
    from sgspen.outputs import RelaxedOutput

    grads = model.grad_y(ex, RelaxedOutput(model.space, tuple(y0_dists)))
    for i, d in enumerate(uniform[0].dists):
        unnorm = y0_dists[i] * np.exp(-0.7 * grads[i])
        assert np.max(np.abs(d - unnorm / unnorm.sum())) <= 1e-10


def test_every_step_is_a_valid_simplex():
    rng = np.random.default_rng(2)
    model = MultiLabelEnergy(4, 3, feature_hidden=5, global_hidden=4, rng=rng)
    ex = MultiLabelExample(rng.normal(size=4), frozenset())
    _, traj = infer(
        model, ex, InferenceConfig(steps=15, eta=1.0, sigma=2.0, record_trajectory=True),
        np.random.default_rng(3),
    )
    for point in traj.points:
        for d in point.dists:
            assert (d > 0).all()
            assert abs(d.sum() - 1.0) <= 1e-12


def test_predict_zero_model_returns_all_state_zero():
    model = zero_model()
    assert predict(model, example(), InferenceConfig(steps=5, eta=1.0)).states == (0, 0, 0)


def test_predict_is_deterministic():
    rng = np.random.default_rng(4)
    model = MultiLabelEnergy(4, 3, feature_hidden=5, global_hidden=4, rng=rng)
    ex = MultiLabelExample(rng.normal(size=4), frozenset())
    cfg = InferenceConfig(steps=10, eta=1.0)
    assert predict(model, ex, cfg) == predict(model, ex, cfg)


def test_predict_finds_unique_vertex_minimum():
    # E = -3 p_1 + 2 p_2 has its vertex minimum at states (1, 0)
    model = zero_model(num_labels=2)
    model.params["b2"] = np.array([-3.0, 2.0])
    ex = example()
    space = model.space
    from sgspen.outputs import DiscreteOutput

    vertices = [
        DiscreteOutput(space, (a, b)) for a in range(2) for b in range(2)
    ]
    energies = [model.energy(ex, one_hot(v)) for v in vertices]
    oracle = vertices[int(np.argmin(energies))]
    assert predict(model, ex, InferenceConfig(steps=10, eta=1.0)) == oracle
    assert oracle.states == (1, 0)


def test_sample_reproducible_and_requires_noise():
    rng = np.random.default_rng(5)
    model = MultiLabelEnergy(4, 3, feature_hidden=5, global_hidden=4, rng=rng)
    ex = MultiLabelExample(rng.normal(size=4), frozenset())
    eta = 0.5
    cfg = InferenceConfig(steps=10, eta=eta, sigma=2 * eta)  # default noise scale
    a = sample(model, ex, cfg, np.random.default_rng(42))
    b = sample(model, ex, cfg, np.random.default_rng(42))
    assert a == b
    with pytest.raises(ValueError):
        sample(model, ex, InferenceConfig(steps=5, eta=1.0), np.random.default_rng(0))
    with pytest.raises(ValueError):
        predict(model, ex, cfg)


def test_sample_on_zero_model_is_a_fair_coin():
    model = zero_model(num_labels=1)
    ex = example()
    cfg = InferenceConfig(steps=5, eta=0.5, sigma=1.0)
    ones = 0
    for seed in range(1000):
        out = sample(model, ex, cfg, np.random.default_rng(seed))
        ones += out.states[0]
    assert 0.45 <= ones / 1000 <= 0.55


def test_non_finite_gradient_aborts_with_step_diagnostic():
    class Exploding:
        space = OutputSpace.uniform(1, 2)

        def energy_and_grad_y(self, x, y):
            return 0.0, [np.array([np.inf, 0.0])]

    with pytest.raises(InferenceError, match="step 0"):
        infer(Exploding(), None, InferenceConfig(steps=3, eta=1.0))


def test_trajectory_csv_dump(tmp_path):
    rng = np.random.default_rng(6)
    model = MultiLabelEnergy(4, 2, feature_hidden=5, global_hidden=4, rng=rng)
    ex = MultiLabelExample(rng.normal(size=4), frozenset())
    _, traj = infer(model, ex, InferenceConfig(steps=4, eta=1.0, record_trajectory=True))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,energy,argmax_0,argmax_1"
    assert len(lines) == 5
    assert float(lines[1].split(",")[1]) == pytest.approx(traj.energies[0])
    assert [int(s) for s in lines[-1].split(",")[2:]] == list(
        round_output(traj.points[-1]).states
    )
