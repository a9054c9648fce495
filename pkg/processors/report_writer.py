"""
Report emission

Writes the files of one run directory. Every CSV and gnuplot script starts
with `# config_hash=<hash> seed=<seed>` and every JSON document carries the
same two keys, so any file can be traced back to its configuration.

Layout:
    config.json, summary.json, quadrants.json, validation_report.json
    profiles/halo_profile.csv|.gp, profiles/slice_<plane>_t<i>.csv|.gp,
    profiles/quadrant_variance.csv|.gp
    correlations/g2_<kind>_<axis>.csv, correlations/g2.gp
"""

import json
import math
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from analysis.observables import CorrelationCurve, DensitySlice, HaloProfile
from utils.logger import get_logger

logger = get_logger(__name__)

FORMATS = ('csv', 'json', 'gnuplot')


def _jsonable(value: Any) -> Any:
    """numpy scalars and arrays to plain Python; NaN and inf to None."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return {'re': value.real, 'im': value.imag}
    return value


class ReportWriter:
    """Writes CSV, JSON and gnuplot files into one run directory."""

    def __init__(self, directory: str, config_hash: str, seed: int,
                 formats: Sequence[str] = FORMATS):
        self.directory = directory
        self.config_hash = config_hash
        self.seed = int(seed)
        self.formats = set(formats)
        self.written: List[str] = []

    @property
    def header(self) -> str:
        return f"# config_hash={self.config_hash} seed={self.seed}"

    def _path(self, relative: str) -> str:
        path = os.path.join(self.directory, relative)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    # ------------------------------------------------------------------
    # primitives

    def write_json(self, relative: str, data: Dict[str, Any], always: bool = False) -> Optional[str]:
        if not always and 'json' not in self.formats:
            return None
        path = self._path(relative)
        document = {'config_hash': self.config_hash, 'seed': self.seed}
        document.update(_jsonable(data))
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(document, f, ensure_ascii=False, indent=2, sort_keys=True)
        self.written.append(relative)
        return path

    def write_csv(self, relative: str, columns: Dict[str, Sequence[float]],
                  comments: Sequence[str] = ()) -> Optional[str]:
        if 'csv' not in self.formats:
            return None
        path = self._path(relative)
        names = list(columns)
        data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.header + '\n')
            for comment in comments:
                f.write(f"# {comment}\n")
            f.write(','.join(names) + '\n')
            for row in data:
                f.write(','.join(f"{v:.10g}" for v in row) + '\n')
        self.written.append(relative)
        return path

    def write_grid_csv(self, relative: str, names: Sequence[str], x: np.ndarray, y: np.ndarray,
                       values: np.ndarray, comments: Sequence[str] = ()) -> Optional[str]:
        """x, y, value rows with a blank line after every x block (gnuplot pm3d layout)."""
        if 'csv' not in self.formats:
            return None
        path = self._path(relative)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.header + '\n')
            for comment in comments:
                f.write(f"# {comment}\n")
            f.write(','.join(names) + '\n')
            for i, xv in enumerate(x):
                for j, yv in enumerate(y):
                    f.write(f"{xv:.10g},{yv:.10g},{values[i, j]:.10g}\n")
                f.write('\n')
        self.written.append(relative)
        return path

    def write_gnuplot(self, relative: str, lines: Sequence[str]) -> Optional[str]:
        if 'gnuplot' not in self.formats or 'csv' not in self.formats:
            return None
        path = self._path(relative)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.header + '\n')
            f.write('set datafile separator ","\n')
            f.write('\n'.join(lines) + '\n')
        self.written.append(relative)
        return path

    # ------------------------------------------------------------------
    # run artifacts

    def config(self, data: Dict[str, Any]) -> str:
        return self.write_json('config.json', data, always=True)

    def summary(self, data: Dict[str, Any]) -> str:
        return self.write_json('summary.json', data, always=True)

    def halo_profile(self, profile: HaloProfile, time: float):
        k_r = profile.k_r
        columns = {
            'k_over_kr': profile.k / k_r,
            'density': profile.density,
            'standard_error': profile.standard_error,
            'bin_count': profile.counts,
        }
        if profile.fit is not None:
            columns['fit'] = profile.fit.evaluate(profile.k)
        self.write_csv('profiles/halo_profile.csv', columns, [f"t={time:.6e} s"])
        plot = 'plot "halo_profile.csv" using 1:2:3 with yerrorbars title "simulation"'
        if profile.fit is not None:
            plot += ', "" using 1:5 with lines title "Gaussian fit"'
        self.write_gnuplot('profiles/halo_profile.gp', [
            'set key autotitle columnhead',
            'set xlabel "k / k_r"',
            'set ylabel "angle-averaged density"',
            'set xrange [0.6:1.4]',
            plot,
        ])

    def correlations(self, curves: Dict[str, CorrelationCurve], k_r: float, time: float):
        plots = []
        for name, curve in curves.items():
            columns = {
                'delta_k_over_kr': curve.delta_k / k_r,
                'g2': curve.g2,
                'standard_error': curve.standard_error,
            }
            if curve.fit is not None:
                columns['fit'] = 1.0 + curve.fit.evaluate(curve.delta_k)
            comments = [f"t={time:.6e} s"]
            if curve.dropped:
                comments.append(f"dropped_lags={curve.dropped}")
            self.write_csv(f"correlations/g2_{name}.csv", columns, comments)
            plots.append((name, curve.fit is not None))

        lines = ['set key autotitle columnhead', 'set xlabel "delta k / k_r"', 'set ylabel "g2"',
                 'set multiplot layout 2,3']
        for name, fitted in plots:
            plot = f'set title "{name}"; plot "g2_{name}.csv" using 1:2:3 with yerrorbars notitle'
            if fitted:
                plot += ', "" using 1:4 with lines notitle'
            lines.append(plot)
        lines.append('unset multiplot')
        self.write_gnuplot('correlations/g2.gp', lines)

    def density_slice(self, cut: DensitySlice, k_r: float, index: int, time: float):
        axes = {'kz0': ('kx_over_kr', 'ky_over_kr'), 'kx0': ('ky_over_kr', 'kz_over_kr')}[cut.plane]
        stem = f"profiles/slice_{cut.plane}_t{index}"
        self.write_grid_csv(f"{stem}.csv", list(axes) + ['density'], cut.k1 / k_r, cut.k2 / k_r,
                            cut.values, [f"t={time:.6e} s"])
        self.write_gnuplot(f"{stem}.gp", [
            'set view map',
            'set size ratio -1',
            f'set xlabel "{axes[0]}"',
            f'set ylabel "{axes[1]}"',
            f'splot "{os.path.basename(stem)}.csv" skip 1 using 1:2:3 with pm3d notitle',
        ])

    def quadrant_series(self, series: List[Dict[str, float]]):
        if not series:
            return
        names = list(series[0])
        columns = {name: [row[name] for row in series] for name in names}
        self.write_csv('profiles/quadrant_variance.csv', columns)
        value_columns = [i for i, name in enumerate(names) if name.startswith('V_') and not name.endswith('_se')]
        plot = ', '.join(
            f'"quadrant_variance.csv" using 1:{i + 1}:{i + 2} with yerrorlines title "{names[i]}"'
            for i in value_columns)
        self.write_gnuplot('profiles/quadrant_variance.gp', [
            'set xlabel "t (s)"',
            'set ylabel "relative number variance"',
            'set arrow from graph 0, first 1 to graph 1, first 1 nohead dashtype 2',
            f'plot {plot}',
        ])

    def quadrants(self, data: Dict[str, Any]):
        self.write_json('quadrants.json', data)

    def validation_report(self, data: Dict[str, Any]):
        self.write_json('validation_report.json', data, always=True)
