import math
import threading
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rejinfer._util import derive_seed, largest_remainder, round_half_up, top_count
from rejinfer.dataset import (
    GLOBAL_AUDIT, DataError, Dataset, LabelAudit, MaskedOutcomeError, ParseError, SchemaError,
    coarse_segmentation, generate_synthetic, load_csv, simulate_rejection, split,
)


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# -- helpers -------------------------------------------------------------------

def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.49, 0.0)] == [1, 2, 3, 2, 0]


def test_top_count_absorbs_float_noise():
    assert top_count(0.7, 10) == 7
    assert top_count(0.71, 10) == 8
    assert top_count(0.01, 10) == 1


def test_largest_remainder():
    assert largest_remainder(10, [0.4, 0.2, 0.4]).tolist() == [4, 2, 4]
    assert largest_remainder(7, [1, 1, 1]).tolist() == [3, 2, 2]
    assert sum(largest_remainder(6000, [0.7, 0.3])) == 6000


def test_derive_seed_is_stable_and_tag_dependent():
    assert derive_seed(3, "split") == derive_seed(3, "split")
    assert derive_seed(3, "split") != derive_seed(3, "M1")
    assert derive_seed(3, "split") != derive_seed(4, "split")


# -- load_csv --------------------------------------------------------------------

def test_load_csv_all_accepted(tmp_path):
    ds = load_csv(_write(tmp_path, "x,outcome\n1.0,1\n2.0,0\n3.0,1\n"))
    assert (ds.n_accepted, ds.n_rejected) == (3, 0)
    assert ds.outcomes().tolist() == [1, 0, 1]
    # every outcome is present, so the file is an oracle population
    assert ds.oracle_mode


def test_load_csv_accepted_row_without_outcome(tmp_path):
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path, "x,outcome\n1.0,1\n2.0,\n"))
    assert info.value.row == 2
    assert "row 2" in str(info.value)


def test_load_csv_with_decisions(tmp_path):
    ds = load_csv(_write(tmp_path, "x,g,d,y\n1.0,a,1,1\n2.0,b,1,0\n3.0,a,0,\n"),
                  outcome="y", decision="d")
    assert (ds.n_accepted, ds.n_rejected) == (2, 1)
    assert not ds.oracle_mode
    assert ds.is_visible().tolist() == [True, True, False]
    assert ds.schema.kinds == ("numeric", "categorical")


def test_load_csv_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(_write(tmp_path, "x,y\n1,1\n"), outcome="outcome")
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path, "x,outcome\n1,1\n2,yes\n"))
    assert info.value.row == 2
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, ""))
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv")


def test_load_csv_forced_categorical(tmp_path):
    ds = load_csv(_write(tmp_path, "zip,outcome\n75001,1\n13001,0\n"), categorical=["zip"])
    assert ds.schema.kinds == ("categorical",)


def test_csv_round_trip(tmp_path, biased_small):
    path = tmp_path / "out.csv"
    biased_small.to_csv(path)
    again = load_csv(path, decision="decision", categorical=biased_small.schema.categorical)
    assert again.decisions.tolist() == biased_small.decisions.tolist()
    pd.testing.assert_frame_equal(again.features, biased_small.features, check_dtype=False)
    ids = again.accepted_ids()
    assert again.outcomes(ids).tolist() == biased_small.outcomes(ids).tolist()


# -- masking and audit -----------------------------------------------------------

@pytest.mark.masked_read
def test_masked_read_raises_and_counts(toy_dataset):
    before = GLOBAL_AUDIT.snapshot()["illegal_reads"]
    with pytest.raises(MaskedOutcomeError):
        toy_dataset.outcomes([4])
    with pytest.raises(MaskedOutcomeError):
        toy_dataset.record(5).outcome
    assert toy_dataset.audit.illegal_reads == 2
    assert GLOBAL_AUDIT.snapshot()["illegal_reads"] - before == 2


def test_visible_reads_are_free(toy_dataset):
    assert toy_dataset.outcomes(toy_dataset.accepted_ids()).tolist() == [1, 0, 1, 0]
    assert toy_dataset.record(0).outcome == 1
    assert toy_dataset.audit.illegal_reads == 0


def test_reveal_shares_audit_and_counts_unmasks(toy_dataset):
    view = toy_dataset.reveal([4, 0])
    assert view.audit is toy_dataset.audit
    assert toy_dataset.audit.unmask_events == 1
    assert view.outcomes([4]).tolist() == [1]
    view.reveal([4])
    assert toy_dataset.audit.unmask_events == 1
    with pytest.raises(DataError):
        toy_dataset.reveal([5])


def test_true_outcomes_need_oracle(toy_dataset, synthetic_small):
    with pytest.raises(DataError):
        toy_dataset.true_outcomes()
    assert len(synthetic_small.true_outcomes([0, 1])) == 2


def test_dataset_validation():
    frame = pd.DataFrame({"x": [1.0, 2.0]})
    with pytest.raises(DataError):
        Dataset(frame, [1, 1], [1, -1])
    with pytest.raises(DataError):
        Dataset(frame, [1, 2], [1, 0])
    with pytest.raises(SchemaError):
        Dataset(frame, [1], [1])
    with pytest.raises(DataError):
        Dataset(frame, [1, 1], [1, 0], weights=[1.0, 0.0])


def test_arrays_are_read_only(toy_dataset):
    with pytest.raises(ValueError):
        toy_dataset.decisions[0] = 0


def test_audit_is_thread_safe():
    audit = LabelAudit()

    def bump():
        for _ in range(2000):
            audit._add("oracle_reads", 1)

    threads = [threading.Thread(target=bump) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert audit.oracle_reads == 8000


# -- synthetic generation -------------------------------------------------------

def test_generate_synthetic_shape():
    ds = generate_synthetic(100, 5, 0.9, seed=7)
    assert len(ds) == 100 and ds.k == 5 and ds.oracle_mode
    assert list(ds.schema.categorical) == ["cat_00"]
    assert ds.n_rejected == 0


@pytest.mark.parametrize("seed", range(5))
def test_generate_synthetic_good_rate_within_three_sigma(seed):
    ds = generate_synthetic(1000, 10, 0.9, seed=seed)
    half = 3 * math.sqrt(0.09 / 1000)
    assert abs(ds.true_outcomes().mean() - 0.9) <= half


def test_generate_synthetic_is_deterministic(tmp_path):
    a, b = (generate_synthetic(300, 6, 0.85, seed=2) for _ in range(2))
    a.to_csv(tmp_path / "a.csv", oracle_export=True)
    b.to_csv(tmp_path / "b.csv", oracle_export=True)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert generate_synthetic(300, 6, 0.85, seed=3).true_outcomes().tolist() != \
        a.true_outcomes().tolist()


def test_generate_synthetic_truth_matches_outcomes():
    ds = generate_synthetic(4000, 4, 0.8, seed=1)
    p = ds.truth.score(ds.features)
    y = ds.true_outcomes()
    assert abs(p.mean() - 0.8) < 1e-9
    # well-calibrated: outcomes follow the generating probabilities
    assert y[p > 0.9].mean() > 0.9 > y[p < 0.5].mean()


def test_generate_synthetic_errors():
    for rate in (0.0, 1.0, 1.5):
        with pytest.raises(DataError):
            generate_synthetic(10, 2, rate, seed=0)


# -- rejection simulation ---------------------------------------------------------

@pytest.fixture(scope="module")
def desk():
    return generate_synthetic(6000, 30, 0.9, seed=0)


def test_simulate_rejection_exact_count(desk):
    biased = simulate_rejection(desk, 0.05, seed=1)
    assert biased.n_rejected == 300
    assert biased.oracle_mode
    assert biased.true_outcomes().tolist() == desk.true_outcomes().tolist()
    assert biased.audit is not desk.audit


def test_worst_segment_defaults_at_least_population(desk):
    seg = coarse_segmentation(desk)
    bad = 1 - desk.true_outcomes()
    assert bad[seg.labels == seg.worst].mean() >= bad.mean()
    assert len(seg.default_rates) <= 9


def test_rejected_set_is_riskier(desk):
    biased = simulate_rejection(desk, 0.05, seed=1)
    bad = 1 - biased.true_outcomes()
    assert bad[biased.rejected_ids()].mean() > bad[biased.accepted_ids()].mean()


def test_simulate_rejection_is_deterministic(synthetic_small):
    a = simulate_rejection(synthetic_small, 0.1, seed=4)
    b = simulate_rejection(synthetic_small, 0.1, seed=4)
    assert a.rejected_ids().tolist() == b.rejected_ids().tolist()


def test_simulate_rejection_errors(toy_dataset, synthetic_small):
    with pytest.raises(DataError):
        simulate_rejection(toy_dataset, 0.1, seed=0)
    with pytest.raises(DataError):
        simulate_rejection(synthetic_small, 0.6, seed=0)


# -- splits ---------------------------------------------------------------------

def test_split_sizes(desk):
    parts = split(desk, [0.7, 0.3], seed=0)
    assert [len(p) for p in parts] == [4200, 1800]
    ten = Dataset(pd.DataFrame({"x": np.arange(10.0)}), [1] * 10, [1, 0] * 5)
    assert [len(p) for p in split(ten, [0.4, 0.2, 0.4], seed=0)] == [4, 2, 4]


def test_split_fraction_sum_error(desk):
    with pytest.raises(ValueError):
        split(desk, [0.5, 0.4], seed=0)


def test_split_is_stratified(biased_small):
    a, b = split(biased_small, [0.5, 0.5], seed=3)
    assert a.stratified
    for part in (a, b):
        assert abs(biased_small.decisions[part.member_ids].mean() - biased_small.decisions.mean()) < 0.02


def test_split_falls_back_when_stratum_too_small():
    ds = Dataset(pd.DataFrame({"x": np.arange(6.0)}), [1] * 6, [1, 1, 1, 1, 1, 0])
    with pytest.warns(UserWarning):
        parts = split(ds, [0.5, 0.5], seed=0)
    assert not parts[0].stratified


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 200), st.lists(st.integers(1, 9), min_size=1, max_size=4), st.integers(0, 99))
def test_split_partitions_ids(n, weights, seed):
    fractions = np.array(weights) / sum(weights)
    fractions[-1] = 1 - fractions[:-1].sum()
    ds = Dataset(pd.DataFrame({"x": np.arange(float(n))}), [1] * n, np.arange(n) % 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts = split(ds, fractions, seed)
    merged = np.concatenate([p.member_ids for p in parts])
    assert sorted(merged.tolist()) == list(range(n))
    assert [len(p) for p in parts] == largest_remainder(n, fractions).tolist()


def test_split_reads_only_visible_outcomes(biased_small):
    split(biased_small, [0.7, 0.3], seed=0)
    assert biased_small.audit.illegal_reads == 0
