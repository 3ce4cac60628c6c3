import numpy as np
import pytest
from scipy.special import expit, logit

from deduct.data_model import Dataset
from deduct.errors import DegenerateSelection, SeparationDetected
from deduct.selection import fit_selection

NA = np.nan


def _dropouts(z, s):
    """All-dropout dataset with one covariate and no w columns."""
    z = np.asarray(z, dtype=float)
    s = np.asarray(s)
    n = z.size
    return Dataset.from_arrays(
        c=np.full(n, 2.0),
        r_obs=np.zeros(n),
        z=z[:, None],
        w=np.empty((n, 0)),
        s=s,
        x=np.where(s == 1, 1.0, NA),
        delta=np.where(s == 1, 1.0, NA),
    )


def _loglik(b0, b1, z, s):
    p = expit(b0 + b1 * z)
    return np.sum(s * np.log(p) + (1 - s) * np.log1p(-p))


Z = np.linspace(-2.0, 2.0, 12)
S = np.array([0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 1])


def test_matches_grid_search():
    data = _dropouts(Z, S)
    model = fit_selection(data)
    assert model.converged
    z, s = data.z[:, 0], data.s.astype(float)
    b0, b1 = model.coefficients

    grid = np.linspace(-3.0, 3.0, 121)
    values = np.array([[_loglik(a, b, z, s) for b in grid] for a in grid])
    best = np.unravel_index(np.argmax(values), values.shape)
    assert _loglik(b0, b1, z, s) >= values.max() - 1e-12
    assert abs(b0 - grid[best[0]]) <= 0.15
    assert abs(b1 - grid[best[1]]) <= 0.15


def test_intercept_only_is_logit_of_mean():
    data = _dropouts(Z, S)
    model = fit_selection(data, intercept_only=True)
    assert model.coefficients.shape == (1,)
    assert model.coefficients[0] == pytest.approx(logit(S.mean()), abs=1e-8)
    assert model.predict(np.zeros((3, 1))) == pytest.approx(np.full(3, S.mean()))


def test_no_variation_in_s():
    with pytest.raises(DegenerateSelection):
        fit_selection(_dropouts(Z, np.zeros(12, dtype=int)))


def test_separation(caplog):
    s = (Z > 0).astype(int)
    data = _dropouts(Z, s)
    with pytest.raises(SeparationDetected):
        fit_selection(data)
    model = fit_selection(data, strict=False)
    p = model.predict(data.z)
    assert np.all((p > 0) & (p < 1))
    assert "separates" in caplog.text


def test_summary_names_columns(gm1_data):
    model = fit_selection(gm1_data)
    summary = model.summary()
    assert summary["columns"] == ["intercept", "Z", "L"]
    assert len(summary["coefficients"]) == 3
