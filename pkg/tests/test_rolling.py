import random

import pytest

from evpool.errors import InvalidArgument
from evpool.rolling import RollingState, case_two_instance, random_trial, run_rolling


def test_case_two_breaks_at_three_steps():
    assert case_two_instance(delta_steps=3).infeasible_steps == [1]


def test_case_two_setup_is_harmless_at_two_steps():
    assert case_two_instance(delta_steps=2).infeasible_steps == []


@pytest.mark.parametrize("T_SL", [0, 3, 9])
def test_case_two_independent_of_freeze(T_SL):
    assert case_two_instance(3, T_SL).infeasible_steps == [1]
    assert case_two_instance(2, T_SL).infeasible_steps == []


def test_random_runs_stay_feasible_at_two_steps():
    for seed in range(200):
        assert random_trial(2, seed).infeasible_steps == [], seed


def test_random_runs_stay_feasible_with_no_overlap():
    for seed in range(100):
        assert random_trial(0, seed).infeasible_steps == [], seed


def test_random_runs_do_break_at_three_steps():
    # the adversary is not guaranteed to win, but over many runs it must
    assert any(random_trial(3, seed).infeasible_steps for seed in range(50))


def test_move_rules():
    st = RollingState(now=0, T_SL=4, delta=2, capacity={0: 1})
    with pytest.raises(InvalidArgument):
        st.move(1, 4)  # frozen window
    st.move(1, 5)
    with pytest.raises(InvalidArgument):
        st.move(2, 5)  # aggregate capacity K = 1
    st.tied.add(1)
    st.station[1] = 0
    st.slots[1] = 6
    with pytest.raises(InvalidArgument):
        st.move(1, 5)  # before release
    with pytest.raises(InvalidArgument):
        st.move(1, 7)  # past the short window
    st.now = 2
    with pytest.raises(InvalidArgument):
        st.move(1, 8)  # now frozen


def test_started_slots_leave():
    st = RollingState(now=0, T_SL=0, delta=1, capacity={0: 1, 1: 1})
    st.cost = {1: {0: 0.0, 1: 1.0}}

    def add_once(s, rng):
        if s.now == 0:
            s.move(1, 1)

    res = run_rolling(st, 4, add_once, random.Random(0))
    assert res.infeasible_steps == []
    assert st.slots == {} and st.tied == set()


def test_trials_are_deterministic():
    a = random_trial(3, 11)
    b = random_trial(3, 11)
    assert a == b
