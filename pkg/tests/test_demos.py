import numpy as np
import pytest

from skillprior import demos as D
from skillprior import env as E
from skillprior.core import Rng, Trajectory

SPECS = [E.POINT_MAZE, E.CHAINED_TARGETS]


@pytest.fixture(scope="module", params=SPECS, ids=lambda s: s.name)
def expert(request):
    return D.generate_expert(request.param, 100, Rng(11).child("expert"), keep_rewards=True)


def test_expert_count_and_returns(expert):
    assert len(expert) == 100
    for t in expert.trajectories:
        assert t.rewards.sum() == expert.spec.max_return


def test_expert_replay_reproduces_states_and_return(expert):
    for t in expert.trajectories[:25]:
        rep = D.replay(expert.spec, t)
        assert np.max(np.abs(rep.states - t.states)) < 1e-9
        assert rep.rewards.sum() == expert.spec.max_return


def test_expert_actions_bounded(expert):
    for t in expert.trajectories:
        assert np.all(np.abs(t.actions) <= 1.0)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_generation_deterministic(spec):
    a = D.generate_expert(spec, 5, Rng(3))
    b = D.generate_expert(spec, 5, Rng(3))
    assert a == b
    g1 = D.generate_general(spec, 2, Rng(3))
    g2 = D.generate_general(spec, 2, Rng(3))
    assert g1 == g2
    assert a.trajectories[0].rewards is None


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_general_ratio_and_low_return(spec):
    general = D.generate_general(spec, 50, Rng(21).child("general"), keep_rewards=True)
    assert len(general) == 10 * 50
    mean_return = np.mean([t.rewards.sum() for t in general.trajectories])
    assert mean_return < 0.25 * spec.max_return


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_general_action_marginals_differ_from_expert(spec):
    expert = D.generate_expert(spec, 30, Rng(4).child("e"))
    general = D.generate_general(spec, 30, Rng(4).child("g"))
    ea = np.abs(np.concatenate([t.actions for t in expert.trajectories])).ravel()
    ga = np.abs(np.concatenate([t.actions for t in general.trajectories])).ravel()
    se = np.sqrt(ea.var() / len(ea) + ga.var() / len(ga))
    assert abs(ea.mean() - ga.mean()) / se > 5.0


def test_expert_failure_is_configuration_error(monkeypatch):
    from skillprior.core import ConfigurationError

    monkeypatch.setattr(D, "expert_action", lambda spec, s: np.zeros(2))
    with pytest.raises(ConfigurationError):
        D.generate_expert(E.POINT_MAZE, 2, Rng(0))


@pytest.mark.parametrize("kind", ["expert", "general"])
def test_save_load_round_trip(tmp_path, kind):
    spec = E.CHAINED_TARGETS
    ds = D.generate_expert(spec, 3, Rng(1)) if kind == "expert" else D.generate_general(spec, 1, Rng(1))
    path = tmp_path / "d.jsonl"
    D.save_dataset(ds, path)
    back = D.load_dataset(path)
    assert back == ds
    for a, b in zip(ds.trajectories, back.trajectories):
        assert a.states.tobytes() == b.states.tobytes()
        assert a.actions.tobytes() == b.actions.tobytes()


def test_round_trip_awkward_floats(tmp_path):
    states = np.array([[0.1, 1 / 3, np.nextafter(1.0, 2.0), 5e-324], [1e300, -0.0, 2**-30, 0.7]])
    ds = D.DemoDataset(E.POINT_MAZE, "expert", [Trajectory(states, np.array([[0.123456789012345678, -1.0]]))])
    D.save_dataset(ds, tmp_path / "x.jsonl")
    back = D.load_dataset(tmp_path / "x.jsonl")
    assert back.trajectories[0].states.tobytes() == states.tobytes()


def test_empty_dataset_round_trip(tmp_path):
    ds = D.DemoDataset(E.POINT_MAZE, "general", [])
    D.save_dataset(ds, tmp_path / "e.jsonl")
    back = D.load_dataset(tmp_path / "e.jsonl")
    assert len(back) == 0 and back.spec == E.POINT_MAZE


def test_truncated_file_is_malformed(tmp_path):
    path = tmp_path / "d.jsonl"
    D.save_dataset(D.generate_expert(E.POINT_MAZE, 3, Rng(1)), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(D.MalformedDatasetError):
        D.load_dataset(path)


def test_garbage_is_malformed(tmp_path):
    path = tmp_path / "g.jsonl"
    path.write_text("not json at all\n")
    with pytest.raises(D.MalformedDatasetError):
        D.load_dataset(path)
    path.write_text("")
    with pytest.raises(D.MalformedDatasetError):
        D.load_dataset(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "d.jsonl"
    D.save_dataset(D.DemoDataset(E.POINT_MAZE, "expert", []), path)
    path.write_text(path.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(D.VersionMismatchError):
        D.load_dataset(path)


def test_spec_mismatch(tmp_path):
    path = tmp_path / "d.jsonl"
    D.save_dataset(D.DemoDataset(E.POINT_MAZE, "expert", []), path)
    with pytest.raises(D.SpecMismatchError):
        D.load_dataset(path, expected_spec=E.CHAINED_TARGETS)
    path.write_text(path.read_text().replace('"state_dim": 4', '"state_dim": 7'))
    with pytest.raises(D.SpecMismatchError):
        D.load_dataset(path)


def test_error_classes_are_distinct():
    classes = {D.MalformedDatasetError, D.SpecMismatchError, D.VersionMismatchError}
    assert len(classes) == 3
    assert all(issubclass(c, D.DatasetError) for c in classes)
