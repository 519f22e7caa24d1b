import numpy as np
import pytest

from drsmd.estimators import EstimatorTag
from drsmd.identification import (
    CATALOG,
    CatalogModel,
    Verdict,
    catalog_monte_carlo,
    catalog_identification,
    catalog_variant,
    draw_catalog,
    identification_report,
)
from drsmd.kernel import KernelSpec, kernel_matrix
from drsmd.nuisance import NuisanceFits

RAW = KernelSpec(1.0, standardize_instruments=False)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_instrument_two_treatments_not_identified(seed):
    (rep,) = catalog_identification("M1", "single", n=2000, seed=seed)
    assert rep.verdict in (Verdict.SINGULAR, Verdict.NEAR_SINGULAR)


def test_healthy_scalar_design_identified(rng):
    n = 500
    Z = rng.normal(size=n)
    Pt = (Z + rng.normal(size=n))[:, None]
    rep = identification_report(NuisanceFits.raw(rng.normal(size=n), Pt), None, kernel_matrix(Z, RAW),
                                EstimatorTag.SMD)
    assert rep.verdict is Verdict.IDENTIFIED
    assert rep.rank_statistic > 3


def test_interaction_with_independent_covariate_is_rank_one():
    (rep,) = catalog_identification("M3", "identint1", n=2000, seed=0)
    s = rep.singular_values
    assert s[0] > 0.5
    assert s[-1] < 0.01 * s[0]
    assert rep.verdict is Verdict.NEAR_SINGULAR


def test_smallest_singular_value_ordering():
    m1 = catalog_identification("M1", "single", n=2000, seed=0)[0].singular_values[-1]
    m2 = catalog_identification("M2", "ident2", n=2000, seed=0)[0].singular_values[-1]
    assert m1 < 0.1 * m2


@pytest.mark.parametrize("variant", ["ident1", "ident2"])
def test_two_instruments_identify_two_treatments(variant):
    reps = catalog_identification("M2", variant, n=2000, seed=0)
    assert reps[0].verdict is Verdict.IDENTIFIED


def test_debiasing_never_loses_identification():
    for name, v in CATALOG.items():
        if v.model is not CatalogModel.M4:
            continue
        for seed in (0, 1):
            reps = {r.estimator_tag: r.verdict for r in catalog_identification(v.model, name, seed=seed)}
            if reps[EstimatorTag.RSMD] is Verdict.IDENTIFIED:
                assert reps[EstimatorTag.DRSMD] is Verdict.IDENTIFIED


def test_exactly_singular_matrix():
    n = 50
    rep = identification_report(NuisanceFits.raw(np.zeros(n), np.zeros((n, 2))), None,
                                kernel_matrix(np.linspace(0, 1, n), RAW), EstimatorTag.SMD)
    assert rep.verdict is Verdict.SINGULAR


def test_report_serialises():
    (rep,) = catalog_identification("M1", "single", n=300, seed=0)
    d = rep.to_dict()
    assert d["verdict"] == rep.verdict.value
    assert len(d["singular_values"]) == 2
    assert "condition number" in rep.summary()


def test_unknown_variant():
    with pytest.raises(ValueError):
        catalog_variant("M1", "ident2")


def test_catalog_overrides():
    v = catalog_variant("M4", "identint4", x_mean=0.0)
    assert v.x_mean == 0.0 and v.z_mean == 1.0


def test_catalog_draw_shapes():
    d = draw_catalog(CATALOG["identint4"], 100, 0)
    assert d.P.shape == (100, 2) and d.X.shape == (100, 1)
    np.testing.assert_array_equal(d.P[:, 1], d.P[:, 0] * d.X[:, 0])


def test_catalog_run_smoke():
    rows = catalog_monte_carlo("M2", "ident2", n=300, reps=1, seed=0)
    # four estimators, two coefficients each
    assert len(rows) == 8
    assert all(r.reps == 1 for r in rows)
    assert all(np.isfinite(r.med_bias) for r in rows)
