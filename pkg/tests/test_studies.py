import math
from pathlib import Path

import numpy as np
import pytest

from intrkpm.studies import (COLUMNS, PLATE_LADDER, UNIT_LADDER, StudyConfig, StudyError,
                             load_config, run_level, run_study)

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.levels == len(cfg.ladder())


@pytest.mark.parametrize("bad", [
    dict(study="wave"), dict(n=3), dict(p_ref=-1), dict(fg_ratio=0.0), dict(solver="cg"),
    dict(interpolation="double"), dict(refine_levels=1), dict(enrich=True),
    dict(study="biharmonic", classic=True), dict(classic=True, fg_ratio=0.5),
    dict(penalties={"beta": 3.0}), dict(levels=5), dict(levels=0),
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValueError):
        StudyConfig(**bad).validate()


def test_ladders():
    assert UNIT_LADDER == (1 / 8, 1 / 16, 1 / 32, 1 / 64)
    assert PLATE_LADDER[0] == 0.625 and PLATE_LADDER[-1] == 0.625 / 16
    assert StudyConfig(study="plate_hole", levels=5).validate().ladder()[-1] == PLATE_LADDER[-1]


def test_load_config_with_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nstudy = three_material\nn = 2  # trailing\nenrich = yes\n"
                 "penalties = beta_d=20, h=0.1\nepsilon = 0.25\n")
    cfg = load_config(p, levels=2)
    assert (cfg.study, cfg.n, cfg.enrich, cfg.epsilon, cfg.levels) == ("three_material", 2, True, 0.25, 2)
    assert cfg.penalties == {"beta_d": 20.0, "h": 0.1}
    assert cfg.k == 2


@pytest.mark.parametrize("text", ["n 1\n", "colour = red\n", "enrich = maybe\n", "n = one\n"])
def test_load_config_errors(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_config(p)


def test_header_echoes_config():
    head = StudyConfig(penalties={"h": 0.5, "c_pen": 4.0}).header()
    assert "# study=poisson" in head
    assert "# penalties=c_pen=4.0,h=0.5" in head


@pytest.fixture(scope="module")
def poisson3():
    return run_study(StudyConfig(study="poisson", n=1, levels=3, epsilon=0.0))


def test_poisson_three_levels(poisson3):
    rep = poisson3
    assert [r.h for r in rep.rows] == list(UNIT_LADDER[:3])
    assert all(r.nu > 0 and r.NP == (round(1 / r.h) + 1) ** 2 for r in rep.rows)
    assert np.all(np.diff(rep.series("L2")) < 0)
    assert 1.5 < rep.rates["L2"] < 2.5 and 0.7 < rep.rates["H1"] < 1.3
    assert math.isnan(rep.rows[0].H2)


def test_csv_layout(poisson3):
    lines = poisson3.csv_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert body[0].split(",") == list(COLUMNS)
    rows = [l.split(",") for l in body[1:]]
    assert len(rows) == 3 and all(len(r) == len(COLUMNS) for r in rows)
    assert rows[0][-3:] == ["", "", ""]
    assert float(rows[-1][COLUMNS.index("rate_L2")]) == pytest.approx(poisson3.rates["L2"], abs=1e-9)
    assert rows[-1][COLUMNS.index("rate_H2")] == "nan"


def test_deterministic_for_fixed_seed(tmp_path):
    out = tmp_path / "a.csv"
    texts = []
    for _ in range(2):
        run_study(StudyConfig(study="poisson", n=2, levels=3, seed=5, out=str(out)))
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_seed_changes_nodes():
    a = run_level(StudyConfig(seed=1).validate(), 1 / 8)
    b = run_level(StudyConfig(seed=2).validate(), 1 / 8)
    assert a.L2 != b.L2


def test_keep_returns_mesh_and_values():
    res = run_level(StudyConfig().validate(), 1 / 8, keep=True)
    coords, vals = res.values["u"]
    assert res.mesh is not None and len(coords) == len(vals) == res.nu


def test_failing_level_carries_context(monkeypatch):
    import intrkpm.studies as st

    def boom(*a, **k):
        raise ArithmeticError("singular")

    monkeypatch.setattr(st, "_poisson_like", boom)
    with pytest.raises(StudyError, match=r"study=poisson n=1 h=0.125: ArithmeticError: singular"):
        run_study(StudyConfig(levels=1))


def test_enrichment_beats_plain_on_three_materials():
    # with a foreground finer than the nodes the plain basis cannot follow the kinks
    kw = dict(study="three_material", levels=3, fg_ratio=0.5)
    plain = run_study(StudyConfig(**kw))
    enr = run_study(StudyConfig(enrich=True, **kw))
    assert np.all(enr.series("L2") < 0.5 * plain.series("L2"))
    assert enr.rates["H1"] > plain.rates["H1"] + 0.1
