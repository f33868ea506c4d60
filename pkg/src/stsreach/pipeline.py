"""End-to-end orchestration: plan -> lqr -> reach-{x,y,u} -> validate.

Every stage persists its products under ``<out>/cache`` (npz, keyed by the
scenario hash) so a later invocation can resume from them, and writes its
human-facing CSVs to ``<out>``.  Angles and angular rates are written in
degrees; everything else in SI units.  All floats use 17 significant digits,
so identical inputs give byte-identical files.
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, model, reach
from .errors import StageError, STSReachError
from .lqr import ClosedLoop, GainSchedule, design
from .planning import ReferenceTrajectory, build_reference

log = logging.getLogger(__name__)

STAGES = ("plan", "lqr", "reach-x", "reach-y", "reach-u", "validate")
REACH_STAGES = ("reach-x", "reach-y", "reach-u")
SPACES = ("x", "y", "u")
FMT = "%.17g"

# columns converted from rad (rad/s) to deg (deg/s) in the CSV files
_DEG = {"x": np.ones(6, bool), "y": np.zeros(4, bool), "u": np.zeros(4, bool)}
_UNITS = {
    "x": ("deg",) * 3 + ("deg/s",) * 3,
    "y": ("m", "m", "m/s", "m/s"),
    "u": ("Nm", "Nm", "N", "N"),
}


def _labels(space):
    names = {"x": model.STATE_NAMES, "y": model.OUTPUT_NAMES, "u": model.INPUT_NAMES}[space]
    return [f"{n}_{u}" for n, u in zip(names, _UNITS[space])]


def _to_file_units(space, arr):
    arr = np.array(arr, dtype=float)
    arr[..., _DEG[space]] = np.degrees(arr[..., _DEG[space]])
    return arr


@dataclass
class RunReport:
    scenario: object
    reach: dict = field(default_factory=dict)
    nominal: dict = field(default_factory=dict)
    containment: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    riccati_terminal_ok: bool = None
    falsification: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def manifest(self):
        sc = self.scenario
        return {
            "config_hash": sc.config_hash(),
            "scenario": sc.to_file_dict(),
            "seeds": {"bounds": sc.seed_bounds, "validate": sc.seed_validate},
            "samples": {"bounds": sc.n_bounds, "validate": sc.n_validate},
            "grid": {"t0_s": sc.t0, "tf_s": sc.tf, "hz": sc.grid_hz, "samples": sc.n_grid},
            "backend": kernels.BACKEND,
            "workers": sc.n_workers,
            "riccati_terminal_equals_S": self.riccati_terminal_ok,
            "containment": {s: {"checked": r.checked, "inside": r.inside, "fraction": r.fraction}
                            for s, r in self.containment.items()},
            "falsification": self.falsification,
            "timings_s": self.timings,
            "files": sorted(self.files),
        }


class _Store:
    """npz artifacts under out/cache, invalidated when the config hash changes."""

    def __init__(self, out_dir, config_hash):
        self.dir = os.path.join(out_dir, "cache")
        os.makedirs(self.dir, exist_ok=True)
        self.hash = config_hash
        meta = os.path.join(self.dir, "config_hash")
        old = open(meta).read().strip() if os.path.exists(meta) else None
        if old != config_hash:
            if old is not None:
                log.info("scenario changed, discarding cached artifacts")
            for name in os.listdir(self.dir):
                if name.endswith(".npz"):
                    os.remove(os.path.join(self.dir, name))
            with open(meta, "w") as fh:
                fh.write(config_hash + "\n")

    def path(self, name):
        return os.path.join(self.dir, name + ".npz")

    def has(self, name):
        return os.path.exists(self.path(name))

    def save(self, name, **arrays):
        tmp = self.path(name) + ".tmp.npz"
        np.savez(tmp, **arrays)
        os.replace(tmp, self.path(name))

    def load(self, name):
        with np.load(self.path(name)) as data:
            return {k: data[k] for k in data.files}


def _write_csv(path, header, rows):
    # adding 0.0 turns -0.0 into 0.0 so signed zeros never reach the files
    np.savetxt(path, np.asarray(rows, dtype=float) + 0.0, delimiter=",", header=",".join(header), comments="", fmt=FMT)


def _resolve(stages):
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}; choose from {list(STAGES)}")
    return [s for s in STAGES if s in stages]


class Pipeline:
    def __init__(self, scenario, out_dir):
        self.sc = scenario
        self.out = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.store = _Store(out_dir, scenario.config_hash())
        self.report = RunReport(scenario)
        self.box = reach.ParamBox(np.array(scenario.p_lower), np.array(scenario.p_upper))
        self.p_nom = np.array(scenario.p_nominal)
        self._ref = self._cl = None
        self._bundles = None
        self._cache = None
        self._nominal = None

    # --- artifacts with resume ---------------------------------------------
    def _timed(self, key, func, *args):
        t0 = time.perf_counter()
        out = func(*args)
        self.report.timings[key] = self.report.timings.get(key, 0.0) + time.perf_counter() - t0
        return out

    def reference(self):
        if self._ref is None:
            if self.store.has("reference"):
                d = self.store.load("reference")
                self._ref = ReferenceTrajectory(d["t"], d["x"], d["thetaddot"], d["z"], d["zdot"], d["zddot"], d["u"])
            else:
                self.stage_plan()
        return self._ref

    def closed_loop(self):
        if self._cl is None:
            if self.store.has("design"):
                d = self.store.load("design")
                self._cl = ClosedLoop(self.reference(), GainSchedule(d["t"], d["K"]), d["steps"])
                self.report.riccati_terminal_ok = bool(d["terminal_ok"])
            else:
                self.stage_lqr()
        return self._cl

    def bundles(self):
        if self._bundles is None:
            cl = self.closed_loop()
            if self.store.has("bundles"):
                d = self.store.load("bundles")
                self._bundles = [reach.TrajectoryBundle(p, d["t"], x, S) for p, x, S in zip(d["p"], d["x"], d["S"])]
            else:
                P = reach.latin_hypercube(self.sc.n_bounds, self.box, self.sc.seed_bounds)
                self._bundles = self._timed("bundle_solve", reach.compute_bundles, P, self.sc.x0, cl.t, cl,
                                            1, self.sc.n_workers)
                self.store.save("bundles", t=cl.t, p=np.array([b.p for b in self._bundles]),
                                x=np.array([b.x for b in self._bundles]), S=np.array([b.S for b in self._bundles]))
        return self._bundles

    def vertex_cache(self):
        if self._cache is None:
            cl = self.closed_loop()
            self._cache = reach.VertexCache(cl, self.sc.x0, cl.t, self.box, workers=self.sc.n_workers)
            if self.store.has("vertices"):
                d = self.store.load("vertices")
                self._cache.load(zip(d["signature"].tolist(), d["x"]))
        return self._cache

    def _save_vertices(self):
        items = self._cache.items()
        self.store.save("vertices", signature=np.array([s for s, _ in items], dtype=np.int64),
                        x=np.array([X for _, X in items]))

    def nominal_states(self):
        if self._nominal is None:
            cl = self.closed_loop()
            self._nominal = reach.state_flow(self.p_nom, self.sc.x0, cl.t, cl)
        return self._nominal

    def space(self, name):
        if name == "x":
            return reach.state_space()
        if name == "y":
            return reach.output_space()
        return reach.input_space(self.closed_loop())

    # --- stages ------------------------------------------------------------
    def stage_plan(self):
        ref = self._timed("plan", build_reference, self.sc)
        self.store.save("reference", t=ref.t, x=ref.x, thetaddot=ref.thetaddot, z=ref.z,
                        zdot=ref.zdot, zddot=ref.zddot, u=ref.u)
        self._ref = ref
        rows = np.column_stack([ref.t, _to_file_units("x", ref.x), ref.u])
        self._csv("reference.csv", ["t_s"] + _labels("x") + _labels("u"), rows)

    def stage_lqr(self):
        ref = self.reference()
        _, ric, gains, cl = self._timed("lqr", design, ref, self.p_nom, self.sc.weights, self.sc.substeps)
        ok = bool(np.array_equal(ric.P[-1], self.sc.weights.S))
        if not ok:
            raise STSReachError("Riccati terminal value differs from S")
        self.report.riccati_terminal_ok = ok
        self.store.save("design", t=ref.t, K=gains.K, P=ric.P, steps=cl.steps, terminal_ok=ok)
        self._cl = cl
        header = ["t_s"] + [f"K{i + 1}{j + 1}" for i in range(4) for j in range(6)]
        self._csv("gains.csv", header, np.column_stack([gains.t, gains.K.reshape(len(gains.t), -1)]))

    def _bounds(self, name):
        bounds = self._timed(f"bounds_{name}", reach.sample_sensitivity_bounds, self.bundles(), self.space(name))
        if name == "x" and self.sc.falsification_budget > 0:
            bounds = self._timed("falsification", self._falsify, bounds)
        return bounds

    def _falsify(self, bounds):
        cl = self.closed_loop()
        lower, upper = bounds.lower.copy(), bounds.upper.copy()
        for k in range(1, len(bounds.t)):
            def evaluate(p, k=k):
                return reach.augmented_flow(p, self.sc.x0, cl.t, cl).S[k]
            res = reach.falsify_bounds(lower[k], upper[k], self.box, evaluate,
                                       self.sc.falsification_budget, seed=self.sc.seed_bounds + k)
            lower[k], upper[k] = res.lower, res.upper
            self.report.falsification.append({"t_s": float(bounds.t[k]), "J_F": res.cost,
                                              "iterations": res.iterations, "evaluations": res.evaluations,
                                              "exhausted": res.exhausted})
        return reach.SensitivityBounds(bounds.space, bounds.t, lower, upper)

    def stage_reach(self, name):
        if self.store.has(f"reach_{name}"):
            d = self.store.load(f"reach_{name}")
            box = reach.ReachBox(name, self.space(name).labels, d["t"], d["lower"], d["upper"])
        else:
            bounds = self._bounds(name)
            cache = self.vertex_cache()
            box = self._timed(f"over_approx_{name}", reach.over_approximate, self.space(name), bounds, self.box, cache)
            self._save_vertices()
            self.store.save(f"reach_{name}", t=box.t, lower=box.lower, upper=box.upper,
                            s_lower=bounds.lower, s_upper=bounds.upper)
        nominal = self.space(name).value(self.nominal_states(), self.p_nom)
        self.report.reach[name] = box
        self.report.nominal[name] = nominal
        header = ["t_s"] + [f"lo_{c}" for c in _labels(name)] + [f"hi_{c}" for c in _labels(name)] \
            + [f"nominal_{c}" for c in _labels(name)]
        rows = np.column_stack([box.t, _to_file_units(name, box.lower), _to_file_units(name, box.upper),
                                _to_file_units(name, nominal)])
        self._csv(f"reach_{name}.csv", header, rows)

    def stage_validate(self):
        cl = self.closed_loop()
        if self.store.has("validation"):
            d = self.store.load("validation")
            P, X = d["p"], d["x"]
        else:
            P = reach.latin_hypercube(self.sc.n_validate, self.box, self.sc.seed_validate)
            X = np.array(self._timed("validation_solve", reach.compute_states, P, self.sc.x0, cl.t, cl,
                                     1, self.sc.n_workers))
            self.store.save("validation", p=P, x=X)
        summary, violations = [], []
        for name in SPACES:
            if name not in self.report.reach:
                self.stage_reach(name)
            box = self.report.reach[name]
            sp = self.space(name)
            values = np.array([sp.value(Xs, p) for Xs, p in zip(X, P)])
            rep = reach.containment_check(box, values)
            self.report.containment[name] = rep
            margin = np.minimum(values - box.lower, box.upper - values)
            for i in range(sp.dim):
                summary.append([SPACES.index(name), i, margin[:, :, i].size, int((margin[:, :, i] >= 0).sum()),
                                float(margin[:, :, i].min())])
            for v in rep.violations:
                violations.append([SPACES.index(name), sp.labels.index(v.coordinate), v.sample, v.time,
                                   v.value, v.margin])
        self._csv("validation.csv", ["space", "coordinate", "checked", "inside", "min_margin"],
                  np.array(summary, dtype=float))
        self._csv("violations.csv", ["space", "coordinate", "sample", "t_s", "value", "margin"],
                  np.array(violations, dtype=float).reshape(-1, 6))

    def _csv(self, name, header, rows):
        _write_csv(os.path.join(self.out, name), header, rows)
        if name not in self.report.files:
            self.report.files.append(name)

    def run(self, stages):
        for stage in _resolve(stages):
            try:
                if stage == "plan":
                    self.stage_plan()
                elif stage == "lqr":
                    self.stage_lqr()
                elif stage in REACH_STAGES:
                    self.stage_reach(stage[-1])
                else:
                    self.stage_validate()
            except StageError:
                raise
            except (STSReachError, ValueError, np.linalg.LinAlgError) as exc:
                raise StageError(stage, exc) from exc
        export_report(self.report, self.out)
        return self.report


def run(scenario, stages=STAGES, out_dir="out"):
    """Run the requested stages; missing upstream products come from the cache or are recomputed."""
    return Pipeline(scenario, out_dir).run(stages)


def export_report(report, out_dir):
    """Write manifest.json next to the CSVs already produced by the stages."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(report.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [os.path.join(out_dir, f) for f in sorted(report.files)] + [path]


def summarize(report):
    """Short text summary of deviations from nominal and containment."""
    lines = []
    for name, box in report.reach.items():
        nom = report.nominal[name]
        dev = np.maximum(box.upper - nom, nom - box.lower).max(axis=0)
        dev = _to_file_units(name, dev)
        parts = ", ".join(f"{c} {d:.4g}" for c, d in zip(_labels(name), dev))
        lines.append(f"reach-{name}: max deviation from nominal: {parts}")
    for name, rep in report.containment.items():
        lines.append(f"validate-{name}: {rep.inside}/{rep.checked} inside (fraction {rep.fraction:.6f})")
    return "\n".join(lines)
