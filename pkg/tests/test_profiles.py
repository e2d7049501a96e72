from datetime import datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpavc.errors import ConfigError, ProfileError
from tpavc.profiles import (
    SEASONS,
    STEPS_PER_DAY,
    SeasonCalendar,
    SyntheticParams,
    generate_synthetic_year,
    load_profiles_csv,
    save_profiles_csv,
    season_of,
    slice_episodes,
    split_days,
)


def test_months_to_seasons():
    assert SEASONS[int(np.argmax(season_of(2)))] == "spring"
    assert SEASONS[int(np.argmax(season_of(1)))] == "winter"
    assert SEASONS[int(np.argmax(season_of(datetime(2014, 7, 4))))] == "summer"
    assert SEASONS[int(np.argmax(season_of(10)))] == "fall"


@given(st.integers(1, 12))
def test_one_hot_has_single_one(month):
    z = season_of(month)
    assert z.sum() == 1.0 and set(np.unique(z)) <= {0.0, 1.0}


def test_calendar_must_partition_months():
    with pytest.raises(ValueError):
        SeasonCalendar(((1, 2), (3, 4), (5, 6), (7, 8)))


def test_year_covers_every_season(year):
    t = np.arange(0, year.n_steps, STEPS_PER_DAY)
    assert set(year.season_index(t).tolist()) == {0, 1, 2, 3}


def test_midnight_pv_is_zero(year):
    assert np.all(year.pv_p[::STEPS_PER_DAY] == 0.0)


def test_summer_pv_dominates_winter(year):
    daily = year.pv_p.sum(axis=1).reshape(-1, STEPS_PER_DAY).sum(axis=1)
    season = year.season_index(np.arange(year.horizon_days) * STEPS_PER_DAY)
    mean = [daily[season == k].mean() for k in range(4)]
    spring, summer, fall, winter = mean
    assert summer / winter >= 1.5
    assert summer > spring and summer > fall and spring > winter and fall > winter


def test_generated_values_finite_and_bounded(year, desk):
    year.check_bounds(desk)
    assert np.all(year.load_q >= 0)
    assert np.all(year.pv_p <= desk.s_max)


def test_same_seed_same_set(desk):
    a = generate_synthetic_year(desk, SyntheticParams(days=3), seed=5)
    b = generate_synthetic_year(desk, SyntheticParams(days=3), seed=5)
    c = generate_synthetic_year(desk, SyntheticParams(days=3), seed=6)
    assert a == b and not (a == c)


def test_csv_round_trip(tmp_path, desk):
    ps = generate_synthetic_year(desk, SyntheticParams(days=2), seed=1)
    save_profiles_csv(ps, tmp_path / "p.csv")
    back = load_profiles_csv(tmp_path / "p.csv", desk)
    assert back == ps
    assert back.metadata["seed"] == 1


def test_csv_rejects_negative_pv(tmp_path, desk):
    ps = generate_synthetic_year(desk, SyntheticParams(days=1), seed=1)
    ps.pv_p[10, 0] = -0.01
    save_profiles_csv(ps, tmp_path / "p.csv")
    with pytest.raises(ProfileError, match="negative PV"):
        load_profiles_csv(tmp_path / "p.csv")


def test_csv_truncation_reports_counts(tmp_path, desk):
    ps = generate_synthetic_year(desk, SyntheticParams(days=1), seed=1)
    path = tmp_path / "p.csv"
    save_profiles_csv(ps, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ProfileError, match="expected 480 rows, found 475"):
        load_profiles_csv(path)


def test_csv_bus_mismatch_with_topology(tmp_path, desk, transfer_year):
    topo_b, _ = transfer_year
    ps = generate_synthetic_year(desk, SyntheticParams(days=1), seed=1)
    save_profiles_csv(ps, tmp_path / "p.csv")
    with pytest.raises(ProfileError, match="do not match"):
        load_profiles_csv(tmp_path / "p.csv", topo_b)


def test_split_sizes_and_disjointness(year):
    split = split_days(year)
    assert len(split["val"]) == 12 and len(split["test"]) == 120
    assert not set(split["train"]) & set(split["test"])
    assert not set(split["train"]) & set(split["val"])
    assert not set(split["val"]) & set(split["test"])
    assert len(slice_episodes(year, "test")) == 120


def test_train_cursors_seeded_and_disjoint_from_test(year):
    a = slice_episodes(year, "train", seed=3)
    assert a == slice_episodes(year, "train", seed=3)
    assert a != slice_episodes(year, "train", seed=4)
    test_days = set(split_days(year)["test"])
    assert all((c // STEPS_PER_DAY) not in test_days for c in a)
    assert all(c % (STEPS_PER_DAY // 2) == 0 for c in a)


def test_split_needs_a_complete_month(desk):
    ps = generate_synthetic_year(desk, SyntheticParams(days=20), seed=0)
    with pytest.raises(ConfigError):
        slice_episodes(ps, "test")
    with pytest.raises(ConfigError):
        slice_episodes(ps, "holdout")
