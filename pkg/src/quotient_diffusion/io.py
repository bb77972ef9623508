"""Deterministic CSV/JSON writers, run records and a minimal SVG emitter."""

import csv
import hashlib
import json
import os
import platform
import time

import numpy as np

SAMPLES_HEADER = ["model", "sample_index", "point_index", "x", "y", "z"]
LOSSES_HEADER = ["model", "epoch", "loss"]
TRAJECTORY_HEADER = [
    "model",
    "sample_index",
    "step",
    "t",
    "point_index",
    "x",
    "y",
    "z",
    "step_norm",
    "vertical_norm",
    "ang_mom_norm",
    "frame_rot_angle",
]


def fmt(value):
    """Shortest round-trip text for a float; empty string for ``None``."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _coords(point):
    return list(point) + [None] * (3 - len(point))


def sample_rows(model, clouds):
    for i, cloud in enumerate(np.asarray(clouds)):
        for j, p in enumerate(cloud):
            yield [model, i, j, *_coords(p)]


def loss_rows(model, losses):
    for epoch, value in enumerate(losses):
        yield [model, epoch, value]


def trajectory_rows(model, traj, indices):
    """Rows for the trajectories ``indices``; diagnostics describe the step leaving each state."""
    K = len(traj.times) - 1
    for i in indices:
        for k in range(K + 1):
            diag = (
                [traj.step_norm[k, i], traj.vertical_norm[k, i], traj.ang_mom_norm[k, i], traj.frame_rot_angle[k, i]]
                if k < K
                else [None] * 4
            )
            for j, p in enumerate(traj.states[k, i]):
                yield [model, int(i), k, traj.times[k], j, *_coords(p), *diag]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if np.isfinite(value) else str(value)
    return obj


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def package_version():
    from . import __version__

    return __version__


def write_run_record(out_dir, command, config, metrics, files, started):
    """Write ``run_record.json`` listing every emitted file with its SHA-256."""
    record = {
        "command": command,
        "config": config,
        "version": package_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_clock_s": time.time() - started,
        "metrics": metrics,
        "files": {os.path.basename(f): sha256_file(f) for f in sorted(files)},
    }
    return write_json(os.path.join(out_dir, "run_record.json"), record)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]


class SvgPanel:
    """A square panel mapping data coordinates ``[-extent, extent]^2`` to pixels."""

    def __init__(self, x0, y0, size, extent, title=""):
        self.x0, self.y0, self.size, self.extent, self.title = x0, y0, size, extent, title
        self.items = []

    def _px(self, x, y):
        s = self.size / (2 * self.extent)
        return self.x0 + (x + self.extent) * s, self.y0 + (self.extent - y) * s

    def scatter(self, pts, color="#1f77b4", radius=1.2, opacity=0.4):
        for x, y in np.asarray(pts)[:, :2]:
            px, py = self._px(x, y)
            self.items.append(
                f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{radius}" fill="{color}" fill-opacity="{opacity}"/>'
            )

    def polyline(self, pts, color="#000000", width=1.2):
        coords = " ".join("{:.2f},{:.2f}".format(*self._px(x, y)) for x, y in np.asarray(pts)[:, :2])
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def render(self):
        head = [
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.size}" height="{self.size}" '
            'fill="white" stroke="#888888"/>',
            f'<text x="{self.x0 + 6}" y="{self.y0 - 6}" font-family="sans-serif" font-size="13">{self.title}</text>',
        ]
        return "\n".join(head + self.items)


def write_svg(path, panels, width, height):
    body = "\n".join(p.render() for p in panels)
    with open(path, "w") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n{body}\n</svg>\n'
        )
    return path
