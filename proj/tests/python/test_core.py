import itertools
import math
import random

import pytest

import thermopalm as tp


def test_budget_values():
    assert round(tp.array_heat_budget(), 2) == 24.49
    assert round(tp.coolant_delta_t(tp.array_heat_budget()), 2) == 2.60


def test_energy_identity_random():
    rng = random.Random(4)
    r = tp.r_electrical()
    for _ in range(2000):
        tc, th, i = rng.uniform(280, 330), rng.uniform(280, 340), rng.uniform(-0.7, 0.7)
        total = tp.cold_side_flow(tc, th, i) + tp.hot_side_flow(tc, th, i)
        assert abs(total - r * i * i) < 1e-9


def test_staircase_first_trial_and_updates():
    cfg = tp.StaircaseConfig()
    st = tp.StaircaseState.start(cfg)
    assert tp.staircase_next_stimulus(cfg, st) == pytest.approx((34.0, 38.0))
    st = tp.staircase_update(cfg, st, tp.Response.different)
    assert st.current_step == pytest.approx(3.6)
    cfg.polarity = tp.Polarity.cool
    assert tp.staircase_next_stimulus(cfg, tp.StaircaseState.start(cfg)) == pytest.approx((26.0, 22.0))


def test_equilibrium_formula():
    p = tp.staircase_equilibrium(tp.StaircaseConfig())
    assert p == pytest.approx(math.log(1.3) / (math.log(1.3) + math.log(10 / 9)), abs=1e-12)


def test_binomial_against_direct_sum():
    def oracle(k, n):
        pmf = [math.comb(n, j) * 0.5**n for j in range(n + 1)]
        return min(1.0, sum(v for v in pmf if v <= pmf[k] * (1 + 1e-7)))

    for n in range(1, 40):
        for k in range(n + 1):
            assert tp.binomial_test(k, n) == pytest.approx(oracle(k, n), abs=1e-10)


def test_wilcoxon_against_enumeration():
    rng = random.Random(9)
    d = [rng.gauss(0.4, 1.0) for _ in range(10)]
    ranks = {v: i + 1 for i, v in enumerate(sorted(d, key=abs))}
    w_plus = sum(ranks[v] for v in d if v > 0)
    mu = 10 * 11 / 4
    hits = 0
    for signs in itertools.product((0, 1), repeat=10):
        w = sum(r for r, s in zip(range(1, 11), signs) if s)
        hits += abs(w - mu) >= abs(w_plus - mu) - 1e-9
    res = tp.wilcoxon_signed_rank(d)
    assert res["exact"]
    assert res["p_value"] == pytest.approx(hits / 2**10, abs=1e-12)


def test_brush_inter_onset_exact():
    num, den = tp.brush_inter_onset(3.5, 18.0)
    assert (num, den) == (9, 1750)
    assert round(num / den * 1000, 3) == 5.143


def test_exp3_table_counts():
    table = tp.exp3_pair_table(7)
    for pol in ("warm", "cool"):
        rows = [t for t in table if t[0] == pol]
        assert sum(1 for t in rows if t[3]) == 30
        assert len(rows) == 36
    assert table == tp.exp3_pair_table(7)


def test_frame_roundtrip_and_bitflip():
    sp, meas, cur = list(range(3000, 3009)), list(range(-5, 4)), [100 * k - 400 for k in range(9)]
    raw = tp.encode_frame(17, sp, meas, cur)
    back = tp.decode_frame(raw)
    assert back["tick"] == 17 and back["setpoint_cdeg"] == sp and back["current_ma"] == cur
    flipped = bytearray(raw)
    flipped[30] ^= 0x04
    with pytest.raises(tp.FrameRejected):
        tp.decode_frame(bytes(flipped))


def test_config_validation_lists_every_problem():
    with pytest.raises(tp.ValidationErrors) as err:
        tp.validate_config({"experiment": "exp9", "observer": {"lapse_rate": 0.5}, "stray": 1})
    text = str(err.value)
    assert "experiment" in text and "observer" in text and "stray" in text


def test_run_session_exp4(tmp_path):
    summary = tp.run_session({"experiment": "exp4", "output_dir": str(tmp_path / "s"), "seed": 2})
    assert summary["status"] == "completed"
    assert round(summary["results"]["inter_onset_ms"], 3) == 5.143
    assert (tmp_path / "s" / "trials.jsonl").exists()
