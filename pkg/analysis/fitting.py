"""
Gaussian fits used for source widths, halo profiles and correlation curves.

Fits are least squares through scipy.optimize.curve_fit, weighted by the
per-point standard errors when given. The model is

    amplitude * exp(-(x - center)^2 / (2 width^2)) + background(x)

with the background absent, constant, or linear, and the center either free
or pinned.
"""

from dataclasses import dataclass, field, asdict
from typing import Dict, Optional

import numpy as np
from scipy.optimize import curve_fit

from utils.error_formatter import FitError

BACKGROUNDS = ('none', 'constant', 'linear')


@dataclass
class GaussianFit:
    amplitude: float
    center: float
    width: float
    background: float = 0.0
    slope: float = 0.0
    errors: Dict[str, float] = field(default_factory=dict)
    n_points: int = 0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (self.amplitude * np.exp(-(x - self.center) ** 2 / (2.0 * self.width ** 2))
                + self.background + self.slope * x)

    def scaled(self, unit: float) -> Dict[str, float]:
        """Parameters with the x axis expressed in `unit` (e.g. k_r)."""
        return {
            'amplitude': self.amplitude,
            'center': self.center / unit,
            'width': self.width / unit,
            'background': self.background,
            'slope': self.slope * unit,
        }

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _moment_guess(x: np.ndarray, y: np.ndarray, center: Optional[float]):
    weights = np.clip(y, 0.0, None)
    total = weights.sum()
    if total <= 0:
        raise FitError("Degenerate profile: no positive weight to fit")
    mean = center if center is not None else float(np.sum(weights * x) / total)
    var = float(np.sum(weights * (x - mean) ** 2) / total)
    spacing = float(np.min(np.diff(np.unique(x)))) if len(np.unique(x)) > 1 else 1.0
    width = np.sqrt(var) if var > 0 else spacing
    return float(np.max(y)), mean, max(width, 0.25 * spacing)


def _point_errors(sigma: Optional[np.ndarray], keep: np.ndarray) -> Optional[np.ndarray]:
    if sigma is None:
        return None
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float).ravel(), keep.shape)[keep]
    usable = np.isfinite(sigma) & (sigma > 0)
    if not usable.any():
        return None
    return np.where(usable, sigma, sigma[usable].min())


def fit_gaussian(x: np.ndarray, y: np.ndarray, center: Optional[float] = None,
                 background: str = 'none', p0: Optional[Dict[str, float]] = None,
                 sigma: Optional[np.ndarray] = None) -> GaussianFit:
    """
    Fit a Gaussian to (x, y).

    Args:
        x, y: samples; non-finite pairs are dropped
        center: pin the center to this value when given
        background: 'none', 'constant' or 'linear'
        p0: optional initial guesses keyed by parameter name
        sigma: standard errors of y; absolute, so parameter errors keep their
            scale. Zero or non-finite entries take the smallest positive one.

    Raises:
        FitError: too few points, degenerate data, or optimizer failure
    """
    if background not in BACKGROUNDS:
        raise FitError(f"Unknown background model '{background}'")

    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    weights = _point_errors(sigma, keep)

    n_free = 2 + (center is None) + {'none': 0, 'constant': 1, 'linear': 2}[background]
    if x.size < n_free:
        raise FitError("Not enough points for Gaussian fit",
                       context={'points': int(x.size), 'parameters': n_free})

    amp0, center0, width0 = _moment_guess(x, y, center)
    guesses = {'amplitude': amp0, 'center': center0, 'width': width0,
               'background': 0.0, 'slope': 0.0}
    guesses.update(p0 or {})

    names = ['amplitude', 'width']
    if center is None:
        names.append('center')
    if background in ('constant', 'linear'):
        names.append('background')
    if background == 'linear':
        names.append('slope')

    def model(xv, *params):
        values = dict(zip(names, params))
        c = values.get('center', center)
        out = values['amplitude'] * np.exp(-(xv - c) ** 2 / (2.0 * values['width'] ** 2))
        return out + values.get('background', 0.0) + values.get('slope', 0.0) * xv

    start = [guesses[name] for name in names]
    try:
        popt, pcov = curve_fit(model, x, y, p0=start, sigma=weights,
                               absolute_sigma=weights is not None, maxfev=20000)
    except (RuntimeError, ValueError) as e:
        raise FitError(f"Gaussian fit did not converge: {e}", context={'points': int(x.size)})

    values = dict(zip(names, popt))
    width = abs(float(values['width']))
    if not np.isfinite(width) or width <= 0:
        raise FitError("Gaussian fit returned a non-positive width")

    perr = np.sqrt(np.abs(np.diag(pcov))) if np.all(np.isfinite(pcov)) else np.full(len(names), np.nan)

    return GaussianFit(
        amplitude=float(values['amplitude']),
        center=float(values.get('center', center)),
        width=width,
        background=float(values.get('background', 0.0)),
        slope=float(values.get('slope', 0.0)),
        errors={name: float(err) for name, err in zip(names, perr)},
        n_points=int(x.size),
    )
