import math

import numpy as np
import pytest

from helpers import binomial_tail_below
from hmqm import bounds
from hmqm.adversary import (
    AttackStrategy,
    CustomChannel,
    ForgeOutcome,
    HonestNoise,
    LossHiding,
    MixedSubstitution,
    RegisterSplit,
    SymmetricClone,
    builtin_strategy,
    check_accounting,
    forge_coins,
    loss_hiding_weight_check,
    run_forging_experiment,
)
from hmqm.protocol import (
    HonestChannel,
    PositionKind,
    VerdictParameters,
    bank_mint,
    holder_verify,
)
from hmqm.qrg import maximally_mixed


def test_builtin_strategy_compositions():
    assert builtin_strategy("honest_noise", beta=0.1).steps == (HonestNoise(0.1),)
    assert builtin_strategy("register_split").steps == (RegisterSplit(),)
    assert builtin_strategy("symmetric_clone").steps == (RegisterSplit(), SymmetricClone())
    assert builtin_strategy("mixed_substitution").steps == (RegisterSplit(), MixedSubstitution())
    assert builtin_strategy("loss_hiding", fraction=0.1).steps == (
        RegisterSplit(), LossHiding(0.1), SymmetricClone(),
    )
    with pytest.raises(ValueError, match="unknown strategy"):
        builtin_strategy("teleport")


def test_strategy_validation():
    with pytest.raises(ValueError, match="at most one channel step"):
        AttackStrategy((SymmetricClone(), MixedSubstitution()))
    with pytest.raises(ValueError):
        AttackStrategy((RegisterSplit(fraction=1.5),))
    with pytest.raises(ValueError):
        AttackStrategy((LossHiding(fraction=-0.1),))
    with pytest.raises(ValueError):
        AttackStrategy((HonestNoise(beta=0.7),))


def test_white_pair_error_per_strategy():
    for n in (4, 8):
        e = bounds.e_max(n)
        assert builtin_strategy("symmetric_clone").white_pair_error(n) == (e, e)
        assert builtin_strategy("mixed_substitution").white_pair_error(n) == (0.5, 0.5)
        assert builtin_strategy("honest_noise", beta=0.1).white_pair_error(n) == (0.1, 1.0)
        assert builtin_strategy("register_split").white_pair_error(n) == (0.0, 1.0)
        custom = AttackStrategy((CustomChannel(lambda s, r: (None, None), pair_error=(0.3, 0.4)),))
        assert custom.white_pair_error(n) == (0.3, 0.4)


def test_white_pair_error_respects_cloning_bound():
    # No strategy's white channel may beat the certified total error.
    floor_margin = 1e-9
    for n in (4, 8):
        lower = bounds.pair_error_lower_bound(n)
        for name in ("symmetric_clone", "mixed_substitution", "honest_noise", "register_split"):
            e1, e2 = builtin_strategy(name, beta=0.1).white_pair_error(n)
            assert e1 + e2 >= lower - floor_margin


def test_check_accounting_cap():
    clone = builtin_strategy("symmetric_clone")
    check_accounting(clone, 1_000_000, 100, 10)  # 1000 + 1000, exactly at cap
    with pytest.raises(ValueError, match="cap is"):
        check_accounting(clone, 1_000_000, 2000, 1)  # 1000 + 2000 over the cap
    check_accounting(builtin_strategy("honest_noise"), 1000, 500, 1)  # no split, no cap


def test_check_accounting_register_size():
    big_hide = builtin_strategy("loss_hiding", fraction=0.999)
    with pytest.raises(ValueError, match="register size"):
        check_accounting(big_hide, 1_000_000, 100, 10)


def test_forge_register_split_layout():
    rng = np.random.default_rng(30)
    coin, db = bank_mint(4, 10_000, 10, rng)
    coin1, coin2 = forge_coins(coin, builtin_strategy("register_split"), rng)
    assert coin1.coin_id == coin2.coin_id == coin.coin_id

    side1 = np.flatnonzero(coin1.r)
    side2 = np.flatnonzero(coin2.r)
    assert side1.size == side2.size == 10  # q/1000 per side
    assert np.intersect1d(side1, side2).size == 0
    assert np.all(coin1.kinds[side1] == PositionKind.ABSENT)
    assert np.all(coin2.kinds[side1] == PositionKind.REPLICA)
    assert np.all(coin2.kinds[side2] == PositionKind.ABSENT)
    assert np.all(coin1.kinds[side2] == PositionKind.REPLICA)

    # T*l auxiliary positions are replicas on both coins.
    both_replica = (coin1.kinds == PositionKind.REPLICA) & (coin2.kinds == PositionKind.REPLICA)
    assert int(both_replica.sum()) == coin.T * coin.l == 10
    # Without a channel step verifier 1 keeps the white states...
    assert int(np.sum(coin1.kinds == PositionKind.GENUINE)) == 10_000 - 30
    # ...and verifier 2 gets nothing there.
    assert int(np.sum(coin2.kinds == PositionKind.ABSENT)) == 10_000 - 30 + 10


def test_forge_verifier_never_samples_masked_positions():
    rng = np.random.default_rng(31)
    coin, db = bank_mint(4, 10_000, 10, rng)
    coin1, _ = forge_coins(coin, builtin_strategy("symmetric_clone"), rng)
    masked = np.flatnonzero(coin1.r)
    params = VerdictParameters.from_noise(4, 0.0)
    out = holder_verify(coin1, db, params, HonestChannel(0.0), rng)
    assert np.intersect1d(out.transcript.positions, masked).size == 0


def test_forge_requires_fresh_coin():
    rng = np.random.default_rng(32)
    coin, _ = bank_mint(4, 10_000, 10, rng)
    coin.r[0] = 1
    with pytest.raises(ValueError, match="fresh"):
        forge_coins(coin, builtin_strategy("symmetric_clone"), rng)
    coin.r[0] = 0
    coin.kinds[0] = PositionKind.REPLICA
    with pytest.raises(ValueError, match="fresh"):
        forge_coins(coin, builtin_strategy("symmetric_clone"), rng)


def test_honest_noise_is_not_a_double_spend():
    rng = np.random.default_rng(33)
    params = VerdictParameters.from_noise(4, 0.0)
    outcome = run_forging_experiment(
        4, 10_000, 10, builtin_strategy("honest_noise"), 5, params, rng
    )
    assert outcome.accept1_rate == 1.0  # the single coin is genuine
    assert outcome.accept2_rate == 0.0  # the other verifier gets nothing
    assert outcome.both_accept_rate == 0.0


def test_clone_experiment_error_rate_and_bound():
    rng = np.random.default_rng(34)
    params = VerdictParameters.from_noise(4, 0.1)
    outcome = run_forging_experiment(
        4, 400_000, 200, builtin_strategy("symmetric_clone"), 30, params, rng
    )
    pooled = np.concatenate([outcome.observed_error1, outcome.observed_error2])
    mean_err = float(np.nanmean(pooled))
    sigma = math.sqrt(0.2 * 0.8 / (60 * 190))
    assert abs(mean_err - bounds.e_max(4)) <= 4 * sigma
    bound = outcome.analytic_bound
    stat = 3 * math.sqrt(max(bound * (1 - bound), 1e-12) / 30)
    assert outcome.both_accept_rate <= bound + stat


@pytest.mark.parametrize("n", [4, 8])
@pytest.mark.parametrize(
    "name", ["honest_noise", "register_split", "symmetric_clone", "mixed_substitution", "loss_hiding"]
)
def test_every_builtin_stays_below_the_bound(n, name):
    rng = np.random.default_rng(35)
    strategy = builtin_strategy(name, beta=0.05, fraction=0.2)
    params = VerdictParameters.from_noise(n, 0.05)
    outcome = run_forging_experiment(n, 100_000, 50, strategy, 10, params, rng)
    bound = outcome.analytic_bound
    stat = 3 * math.sqrt(max(bound * (1 - bound), 1e-12) / 10)
    assert outcome.both_accept_rate <= bound + stat


def test_loss_hiding_weight_check_full_register():
    rng = np.random.default_rng(36)
    q, l, eta, epsilon = 100_000, 1000, 0.6, 0.02
    freq = loss_hiding_weight_check(np.ones(q, dtype=np.uint8), l, eta, epsilon, 20_000, rng)
    exact = binomial_tail_below(580, l, eta)  # (eta - epsilon) * l = 580
    sigma = math.sqrt(exact * (1 - exact) / 20_000)
    assert abs(freq - exact) <= 3 * sigma


def test_loss_hiding_weight_check_at_gamma():
    rng = np.random.default_rng(37)
    q, l, eta, epsilon = 2_000_000, 2000, 0.6, 0.05
    gamma = 1.0 - 3.0 * epsilon / eta  # heaviest register losses can explain
    flags = np.zeros(q, dtype=np.uint8)
    flags[: int(gamma * q)] = 1
    abort_freq = loss_hiding_weight_check(flags, l, eta, epsilon, 20_000, rng)
    no_abort_bound = math.exp(-2.0 * (epsilon**2 / eta**2) * l) + math.exp(-2.0 * l * epsilon**2)
    sigma = math.sqrt(max(no_abort_bound * (1 - no_abort_bound), 1e-12) / 20_000)
    assert 1.0 - abort_freq <= no_abort_bound + 3 * sigma


def test_loss_hiding_abort_grows_with_hidden_weight():
    rng = np.random.default_rng(38)
    q, l, eta, epsilon = 10_000, 200, 0.6, 0.05
    freqs = []
    for w in (0.96, 0.92, 0.88):
        flags = np.zeros(q, dtype=np.uint8)
        flags[: int(w * q)] = 1
        freqs.append(loss_hiding_weight_check(flags, l, eta, epsilon, 20_000, rng))
    assert freqs[0] < freqs[1] < freqs[2]


def test_loss_hiding_weight_check_guards():
    rng = np.random.default_rng(39)
    with pytest.raises(ValueError):
        loss_hiding_weight_check(np.ones(10), 0, 0.6, 0.05, 10, rng)
    with pytest.raises(ValueError):
        loss_hiding_weight_check(np.ones(10), 11, 0.6, 0.05, 10, rng)


def test_forge_outcome_serialization():
    rng = np.random.default_rng(40)
    params = VerdictParameters.from_noise(4, 0.0)
    outcome = run_forging_experiment(
        4, 10_000, 10, builtin_strategy("mixed_substitution"), 3, params, rng
    )
    assert ForgeOutcome.CSV_HEADER == (
        "strategy,n,q,l,trials,accept1_rate,accept2_rate,both_accept_rate,analytic_bound"
    )
    fields = outcome.csv_row().split(",")
    assert fields[0] == "mixed_substitution"
    assert fields[1:5] == ["4", "10000", "10", "3"]
    assert float(fields[7]) == outcome.both_accept_rate
    d = outcome.to_dict()
    assert d["trials"] == 3
    assert 0.0 <= d["mean_white_error1"] <= 1.0


def test_custom_channel_plugin():
    rng = np.random.default_rng(41)

    def both_mixed(state, _rng):
        return maximally_mixed(state.dim), maximally_mixed(state.dim)

    strategy = AttackStrategy((CustomChannel(both_mixed),))
    params = VerdictParameters.from_noise(4, 0.0)
    outcome = run_forging_experiment(4, 100_000, 50, strategy, 5, params, rng)
    assert outcome.strategy == "custom"
    pooled = np.concatenate([outcome.observed_error1, outcome.observed_error2])
    mean_err = float(np.nanmean(pooled))
    sigma = math.sqrt(0.25 / (10 * 50))
    assert abs(mean_err - 0.5) <= 4 * sigma
    assert outcome.both_accept_rate == 0.0
