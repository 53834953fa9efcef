import numpy as np
import pytest

from sgspen.outputs import DiscreteOutput, OutputSpace
from sgspen.rewards import RewardFunction
from sgspen.search import SearchConfig, SearchContractError, SearchOutcome, truncated_search


class FnReward(RewardFunction):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def _evaluate(self, x, y):
        return self.fn(y.states)


def test_budget_one_only_fits_the_start_evaluation():
    space = OutputSpace.uniform(3, 4)
    reward = FnReward(lambda s: 0.2)
    out = truncated_search(
        reward, None, DiscreteOutput(space, (0, 0, 0)),
        SearchConfig(delta=0.05, budget=1), np.random.default_rng(0),
    )
    assert out.result is None
    assert out.queries_used == 1
    assert reward.queries == 1


def test_near_optimal_start_returns_empty():
    space = OutputSpace.uniform(2, 3)
    reward = FnReward(lambda s: 1.0 if s == (1, 1) else 0.3)
    out = truncated_search(
        reward, None, DiscreteOutput(space, (1, 1)),
        SearchConfig(delta=0.1, budget=40), np.random.default_rng(0),
    )
    assert out.result is None
    assert out.start_reward == 1.0
    assert out.queries_used == 40


def test_success_rate_matches_closed_form_hit_probability():
    # single variable, K=10, reward = indicator of state 7; each proposal is
    # uniform over the 9 other states, so P(hit within b-1 proposals) is
    # 1 - (8/9)^(b-1)
    space = OutputSpace.uniform(1, 10)
    start = DiscreteOutput(space, (2,))
    for budget in (10, 100):
        hits = 0
        trials = 1000
        for seed in range(trials):
            reward = FnReward(lambda s: 1.0 if s[0] == 7 else 0.0)
            out = truncated_search(
                reward, None, start, SearchConfig(delta=0.5, budget=budget),
                np.random.default_rng(seed),
            )
            hits += out.result is not None
        expected = 1.0 - (8 / 9) ** (budget - 1)
        assert abs(hits / trials - expected) <= 0.03


def test_contract_holds_on_every_success():
    space = OutputSpace((3, 4, 2, 5))
    rng_master = np.random.default_rng(7)
    table = {}

    def lookup(states):
        if states not in table:
            table[states] = float(rng_master.random())
        return table[states]

    for seed in range(1000):
        reward = FnReward(lookup)
        start = DiscreteOutput(space, tuple(int(np.random.default_rng(seed).integers(k)) for k in space.sizes))
        cfg = SearchConfig(delta=0.15, budget=30)
        out = truncated_search(reward, None, start, cfg, np.random.default_rng(seed))
        assert out.queries_used <= cfg.budget
        assert out.queries_used == reward.queries
        assert out.found_reward >= out.start_reward
        if out.result is not None:
            assert out.found_reward > out.start_reward + cfg.delta
            assert lookup(out.result.states) == out.found_reward


def test_reproducible_given_seed():
    space = OutputSpace.uniform(4, 3)
    fn = lambda s: (sum(s) % 7) / 7.0
    cfg = SearchConfig(delta=0.2, budget=25)
    start = DiscreteOutput(space, (0, 1, 2, 0))
    a = truncated_search(FnReward(fn), None, start, cfg, np.random.default_rng(5))
    b = truncated_search(FnReward(fn), None, start, cfg, np.random.default_rng(5))
    assert (a.result, a.queries_used, a.start_reward, a.found_reward) == (
        b.result, b.queries_used, b.start_reward, b.found_reward,
    )


def test_sideways_moves_escape_reward_plateaus():
    # reward is an indicator of (1, 1); without keeping equal-reward moves
    # the walker could never leave the start, since only single flips of
    # (0, 0) would ever be proposed
    space = OutputSpace.uniform(2, 2)
    hits = 0
    for seed in range(50):
        reward = FnReward(lambda s: 1.0 if s == (1, 1) else 0.0)
        out = truncated_search(
            reward, None, DiscreteOutput(space, (0, 0)),
            SearchConfig(delta=0.5, budget=100), np.random.default_rng(seed),
        )
        hits += out.result is not None
    assert hits == 50


def test_partial_credit_climb_accumulates_gains():
    # needs two kept improvements before the margin is cleared
    space = OutputSpace.uniform(3, 2)
    reward = FnReward(lambda s: sum(s) / 3.0)
    out = truncated_search(
        reward, None, DiscreteOutput(space, (0, 0, 0)),
        SearchConfig(delta=0.5, budget=60), np.random.default_rng(1),
    )
    assert out.result is not None
    assert sum(out.result.states) >= 2


def test_reset_on_decrease_variant_still_honors_contract():
    space = OutputSpace.uniform(3, 3)
    fn = lambda s: (s[0] * 9 + s[1] * 3 + s[2]) % 11 / 11.0
    for seed in range(200):
        out = truncated_search(
            FnReward(fn), None, DiscreteOutput(space, (0, 0, 0)),
            SearchConfig(delta=0.1, budget=20, reset_on_decrease=True),
            np.random.default_rng(seed),
        )
        if out.result is not None:
            assert out.found_reward > out.start_reward + 0.1


def test_out_of_range_reward_is_contract_violation():
    space = OutputSpace.uniform(1, 2)
    reward = FnReward(lambda s: 1.5)
    with pytest.raises(SearchContractError, match="outside"):
        truncated_search(
            reward, None, DiscreteOutput(space, (0,)),
            SearchConfig(delta=0.1, budget=5), np.random.default_rng(0),
        )


def test_outcome_csv_row():
    space = OutputSpace.uniform(1, 2)
    out = SearchOutcome(DiscreteOutput(space, (1,)), 7, 0.25, 0.5)
    assert out.csv_row("ex9") == "ex9,7,0.25,0.5,1"
