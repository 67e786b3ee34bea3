import itertools
import json
import math

import pytest

import shapdistill as sd

SMALL_CONFIG = """
env: CartPole
seed: 3
output_dir: out
policy:
  source: builtin-dqn
  dqn:
    total_steps: 1500
    learning_starts: 200
    batch_size: 16
    hidden_layers: [8]
    target_sync_interval: 100
    epsilon_decay_steps: 1000
explain:
  n_traj: 3
  states: 60
  knn_k: 10
distill:
  boundary_points: 12
evaluate:
  episodes: 3
"""


def brute_force(game, n):
    phi = [0.0] * n
    orders = list(itertools.permutations(range(n)))
    for order in orders:
        members = []
        for i in order:
            before = game(tuple(sorted(members)))
            members.append(i)
            phi[i] += game(tuple(sorted(members))) - before
    return [p / len(orders) for p in phi]


def test_two_player_game():
    table = {(): 0.0, (0,): 1.0, (1,): 2.0, (0, 1): 4.0}
    out = sd.shapley_exact(lambda c: table[c], 2)
    assert out["phi"] == pytest.approx([1.5, 2.5], abs=1e-12)
    assert out["v_full"] - out["v_empty"] == pytest.approx(sum(out["phi"]))


def test_exact_matches_permutation_average():
    game = lambda c: (len(c) ** 2) + 0.5 * (2 in c) - 0.25 * (0 in c and 1 in c)
    got = sd.shapley_exact(game, 3)["phi"]
    assert got == pytest.approx(brute_force(game, 3), abs=1e-12)


def test_exhaustive_sampling_equals_exact():
    game = lambda c: math.sin(sum(c) + len(c))
    exact = sd.shapley_exact(game, 3)["phi"]
    sampled = sd.shapley_sampled(game, 3, permutations=1, seed=0, exhaustive=True)["phi"]
    assert sampled == pytest.approx(exact, abs=1e-12)


def test_env_and_errors():
    env = sd.make_env("CartPole")
    assert env.feature_names == ["x", "x_dot", "theta", "theta_dot"]
    assert env.action_count == 2
    with pytest.raises(sd.ConfigError):
        sd.make_env("Pendulum")
    with pytest.raises(sd.IoError):
        sd.load_policy("/nonexistent/policy.json")


def test_pipeline_round_trip(tmp_path):
    config = tmp_path / "small.yaml"
    config.write_text(SMALL_CONFIG)
    with pytest.raises(sd.StageOrderError):
        sd.run_stage("distill", config, out=tmp_path / "empty")

    outcomes = sd.run_stage("pipeline", config, out=tmp_path / "run")
    assert [o["stage"] for o in outcomes] == ["train", "rollout", "explain", "distill", "evaluate"]
    assert isinstance(outcomes[-1]["summary"], dict)

    run = tmp_path / "run"
    report = json.loads((run / "distill-report.json").read_text())
    assert report["provenance"]["config_hash"] == sd.config_hash(config)

    distilled = sd.load_policy(run / "interpretable-policy.json")
    planes = distilled.hyperplanes()
    assert len(planes) == 1 and planes[0]["formula"].startswith("f01 = ")
    state = [0.0, 0.0, 0.05, 0.0]
    f = sum(w * s for w, s in zip(planes[0]["w"], state)) + planes[0]["b"]
    assert distilled.act(state) == (0 if f > 0 else 1)

    stats = sd.evaluate("CartPole", distilled, episodes=3, seed_base=10000)
    again = sd.evaluate("CartPole", distilled, episodes=3, seed_base=10000)
    assert stats["returns"] == again["returns"]
    assert len(stats["returns"]) == 3
