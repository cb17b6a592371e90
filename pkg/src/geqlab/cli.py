"""Command-line entry points for reproducible experiment runs.

Every verb is a pure function of (config file, master seed): rerunning the
same command into a fresh directory reproduces every artifact byte for byte.
Each output directory receives the resolved configuration
(``resolved_config.json``) and a manifest (``manifest.json``) listing the
SHA-256 of every artifact, so a run can be audited after the fact.

Module seeds are never taken from the config directly; they are derived by
hashing (master seed, purpose label, index), so adding a new consumer never
shifts the streams of existing ones.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys

# Heavy imports (numpy and the library modules) happen inside functions so
# that --threads can pin the BLAS pool sizes through the environment before
# numpy is first loaded.

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_SECTIONS = {
    "generator", "teacher", "student", "moments", "ode", "sgd",
    "replica", "erm", "audit", "seeds", "output",
}

_GENERATOR_TYPES = {"identity", "single_layer", "multi_layer", "inverse_pair"}


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# config access helpers


def _load_config(path):
    try:
        with open(path, "r") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for key in cfg:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r} in config")
    return cfg


def _section(cfg, name, *, required=True):
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing required section {name!r}")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    return sec


def _check_keys(sec, name, allowed, required):
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section {name!r}")
    for key in required:
        if key not in sec:
            raise ConfigError(f"missing required key {key!r} in section {name!r}")


def _get(sec, name, key, types, default=None):
    if key not in sec:
        return default
    value = sec[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise ConfigError(
            f"key {key!r} in section {name!r} has the wrong type: got "
            f"{type(value).__name__}")
    return value


def _number_list(sec, name, key):
    raw = sec[key]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"key {key!r} in section {name!r} must be a non-empty list")
    out = []
    for item in raw:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigError(f"key {key!r} in section {name!r} must hold numbers")
        out.append(float(item))
    return out


def _activation(sec, name, key, default=None):
    from .activations import ActivationKind

    raw = _get(sec, name, key, str, default)
    if raw is None:
        raise ConfigError(f"missing required key {key!r} in section {name!r}")
    try:
        return ActivationKind[raw.upper()]
    except KeyError:
        valid = ", ".join(k.name.lower() for k in ActivationKind)
        raise ConfigError(
            f"key {key!r} in section {name!r}: unknown activation {raw!r} "
            f"(valid: {valid})") from None


# ---------------------------------------------------------------------------
# object builders


def _weight_law(sec, name, default_scale):
    """Weight law from the optional "law" sub-object of a generator section."""
    from .generators import WeightLaw

    law = sec.get("law", {})
    if not isinstance(law, dict):
        raise ConfigError(f"key 'law' in section {name!r} must be a JSON object")
    _check_keys(law, name + ".law", {"kind", "scale", "mu", "normalize_rows"}, ())
    kind = _get(law, name, "kind", str, "iid")
    normalize = _get(law, name, "normalize_rows", bool, False)
    if kind == "iid":
        scale = _get(law, name, "scale", float, default_scale)
        return WeightLaw.iid(scale, normalize_rows=normalize)
    if kind == "shifted":
        if "mu" not in law:
            raise ConfigError(f"shifted law in section {name!r} needs key 'mu'")
        return WeightLaw.shifted(_get(law, name, "mu", float),
                                 normalize_rows=normalize)
    raise ConfigError(f"unknown weight law kind {kind!r} in section {name!r}")


def _build_generator(cfg, master):
    import numpy as np

    from .generators import Identity, InversePair, MultiLayer, SingleLayer
    from .generators import sample_weights
    from .seeds import derive_seed

    sec = _section(cfg, "generator")
    gtype = _get(sec, "generator", "type", str)
    if gtype not in _GENERATOR_TYPES:
        raise ConfigError(
            f"generator type must be one of {sorted(_GENERATOR_TYPES)}, "
            f"got {gtype!r}")
    D = _get(sec, "generator", "D", int)
    if D is None or D < 1:
        raise ConfigError("generator needs a positive integer 'D'")
    seed = derive_seed(master, "generator")

    if gtype == "identity":
        _check_keys(sec, "generator", {"type", "D"}, ("type", "D"))
        return Identity(D)

    if gtype == "single_layer":
        _check_keys(sec, "generator", {"type", "D", "N", "kind", "law"},
                    ("type", "D", "N", "kind"))
        N = _get(sec, "generator", "N", int)
        if N is None or N < 1:
            raise ConfigError("single_layer generator needs a positive 'N'")
        law = _weight_law(sec, "generator", 1.0 / np.sqrt(D))
        A = sample_weights(law, N, D, seed)
        return SingleLayer(A, _activation(sec, "generator", "kind"))

    if gtype == "multi_layer":
        _check_keys(sec, "generator", {"type", "D", "widths", "kinds", "law"},
                    ("type", "D", "widths", "kinds"))
        widths = [int(w) for w in _number_list(sec, "generator", "widths")]
        kinds_raw = sec["kinds"]
        if not isinstance(kinds_raw, list) or len(kinds_raw) != len(widths):
            raise ConfigError("generator 'kinds' must list one kind per width")
        layers = []
        fan_in = D
        for i, (width, kname) in enumerate(zip(widths, kinds_raw)):
            if width < 1:
                raise ConfigError("generator widths must be positive")
            law = _weight_law(sec, "generator", 1.0 / np.sqrt(fan_in))
            mat = sample_weights(law, width, fan_in, derive_seed(master, "generator", i))
            layers.append((mat, _activation({"kind": kname}, "generator", "kind")))
            fan_in = width
        return MultiLayer(tuple(layers))

    _check_keys(sec, "generator", {"type", "D", "law"}, ("type", "D"))
    law = _weight_law(sec, "generator", 1.0 / np.sqrt(D))
    return InversePair(sample_weights(law, D, D, seed))


def _build_teacher(cfg, master, D, index=0):
    import numpy as np

    from .generators import Teacher, WeightLaw, sample_weights
    from .seeds import derive_seed

    sec = _section(cfg, "teacher")
    _check_keys(sec, "teacher", {"M", "kind", "v"}, ("M", "kind"))
    M = _get(sec, "teacher", "M", int)
    if M is None or M < 1:
        raise ConfigError("teacher needs a positive integer 'M'")
    kind = _activation(sec, "teacher", "kind")
    W = sample_weights(WeightLaw.iid(1.0), M, D, derive_seed(master, "teacher", index))
    if "v" in sec:
        v = np.asarray(_number_list(sec, "teacher", "v"), dtype=float)
        if v.shape != (M,):
            raise ConfigError("teacher 'v' must list one weight per hidden unit")
    else:
        v = np.ones(M)
    return Teacher(W, v, kind)


def _build_student(cfg, master, N):
    import numpy as np

    from .generators import WeightLaw, sample_weights
    from .seeds import derive_seed

    sec = _section(cfg, "student")
    _check_keys(sec, "student", {"K", "kind", "w_scale", "v_scale", "rows"},
                ("K", "kind"))
    K = _get(sec, "student", "K", int)
    if K is None or K < 1:
        raise ConfigError("student needs a positive integer 'K'")
    kind = _activation(sec, "student", "kind")
    rows = _get(sec, "student", "rows", str, "normal")
    if rows not in ("normal", "orthonormal"):
        raise ConfigError("student 'rows' must be 'normal' or 'orthonormal'")
    if rows == "orthonormal":
        if K > N:
            raise ConfigError("orthonormal student rows need K <= N")
        z = sample_weights(WeightLaw.iid(1.0), N, K, derive_seed(master, "student-w"))
        W0, _ = np.linalg.qr(z)
        W0 = W0.T
    else:
        w_scale = _get(sec, "student", "w_scale", float, 1e-3)
        W0 = sample_weights(WeightLaw.iid(w_scale), K, N,
                            derive_seed(master, "student-w"))
    v_scale = _get(sec, "student", "v_scale", float, 1.0)
    v0 = v_scale * sample_weights(WeightLaw.iid(1.0), 1, K,
                                  derive_seed(master, "student-v"))[0]
    return W0, v0, kind


def _build_moments(cfg, master, gen):
    import numpy as np

    from .moments import estimate_moments, moments_from_matrices
    from .seeds import derive_seed

    sec = _section(cfg, "moments")
    _check_keys(sec, "moments", {"n_samples", "exact", "center"}, ())
    if _get(sec, "moments", "exact", bool, False):
        from .generators import Identity

        if not isinstance(gen, Identity):
            raise ConfigError("moments 'exact' is only available for the "
                              "identity generator")
        eye = np.eye(gen.D)
        return moments_from_matrices(eye, eye)
    n = _get(sec, "moments", "n_samples", int)
    if n is None or n < 1:
        raise ConfigError("moments needs a positive integer 'n_samples' "
                          "(or 'exact': true)")
    return estimate_moments(gen, n, derive_seed(master, "moments"),
                            center=_get(sec, "moments", "center", bool, False))


def _ode_config(cfg, *, t_max=None, record_times=None):
    from .ode_dynamics import OdeConfig, QuadVariant

    sec = _section(cfg, "ode")
    _check_keys(sec, "ode", {"dt", "eta", "t_max", "quad_variant", "record_every"},
                ("eta",) if t_max is not None else ("eta", "t_max"))
    eta = _get(sec, "ode", "eta", float)
    if t_max is None:
        t_max = _get(sec, "ode", "t_max", float)
    variant_raw = _get(sec, "ode", "quad_variant", str, "per_eigenvalue")
    try:
        variant = QuadVariant[variant_raw.upper()]
    except KeyError:
        raise ConfigError(
            f"unknown quad_variant {variant_raw!r} (valid: per_eigenvalue, "
            f"spectrum_averaged)") from None
    return OdeConfig(
        eta=eta,
        t_max=t_max,
        dt=_get(sec, "ode", "dt", float, 0.01),
        record_every=_get(sec, "ode", "record_every", float, 0.1),
        quad_variant=variant,
        record_times=record_times,
    )


def _sgd_config(cfg, master):
    from .seeds import derive_seed
    from .sgd_simulator import RunConfig

    sec = _section(cfg, "sgd")
    _check_keys(sec, "sgd", {"eta", "steps", "n_test", "points_per_decade"},
                ("eta", "steps"))
    steps = _get(sec, "sgd", "steps", int)
    if steps is None or steps < 1:
        raise ConfigError("sgd needs a positive integer 'steps'")
    return RunConfig(
        eta=_get(sec, "sgd", "eta", float),
        steps=steps,
        seed=derive_seed(master, "sgd"),
        n_test=_get(sec, "sgd", "n_test", int, 10_000),
        points_per_decade=_get(sec, "sgd", "points_per_decade", int, 20),
    )


def _replica_params(cfg):
    from .replica_solver import Loss

    sec = _section(cfg, "replica")
    _check_keys(sec, "replica",
                {"alpha_grid", "lambda", "damping", "tol", "max_iter", "loss",
                 "rho"},
                ("alpha_grid", "lambda"))
    loss_raw = _get(sec, "replica", "loss", str, "square")
    try:
        loss = Loss(loss_raw)
    except ValueError:
        raise ConfigError(f"unknown replica loss {loss_raw!r} "
                          f"(valid: square, logistic)") from None
    lam = _get(sec, "replica", "lambda", float)
    if lam is None or lam <= 0:
        raise ConfigError("replica needs a positive 'lambda'")
    return {
        "alpha_grid": _number_list(sec, "replica", "alpha_grid"),
        "lam": lam,
        "damping": _get(sec, "replica", "damping", float, 0.5),
        "tol": _get(sec, "replica", "tol", float, 1e-8),
        "max_iter": _get(sec, "replica", "max_iter", int, 5000),
        "loss": loss,
        "rho": _get(sec, "replica", "rho", float, 1.0),
    }


def _erm_params(cfg, *, need_T_grid):
    from .replica_solver import Loss

    sec = _section(cfg, "erm")
    required = ["lambda", "seeds", "Ntilde", "feature_kind"]
    if need_T_grid:
        required.append("T_grid")
    _check_keys(sec, "erm",
                {"T_grid", "lambda", "seeds", "Ntilde", "feature_kind", "loss",
                 "n_test"},
                required)
    loss_raw = _get(sec, "erm", "loss", str, "square")
    try:
        loss = Loss(loss_raw)
    except ValueError:
        raise ConfigError(f"unknown erm loss {loss_raw!r} "
                          f"(valid: square, logistic)") from None
    seeds = _get(sec, "erm", "seeds", int)
    if seeds is None or seeds < 1:
        raise ConfigError("erm needs a positive integer 'seeds'")
    Ntilde = _get(sec, "erm", "Ntilde", int)
    if Ntilde is None or Ntilde < 1:
        raise ConfigError("erm needs a positive integer 'Ntilde'")
    lam = _get(sec, "erm", "lambda", float)
    if lam is None or lam <= 0:
        raise ConfigError("erm needs a positive 'lambda'")
    T_grid = None
    if "T_grid" in sec:
        T_grid = [int(t) for t in _number_list(sec, "erm", "T_grid")]
        if any(t < 1 for t in T_grid):
            raise ConfigError("erm 'T_grid' entries must be positive")
    return {
        "T_grid": T_grid,
        "lam": lam,
        "seeds": seeds,
        "Ntilde": Ntilde,
        "feature_kind": _activation(sec, "erm", "feature_kind"),
        "loss": loss,
        "n_test": _get(sec, "erm", "n_test", int, 100_000),
    }


def _student_kind_for_loss(loss):
    """Readout used when scoring a fitted linear estimator: regression reads
    the field directly, classification takes its sign."""
    from .activations import ActivationKind
    from .replica_solver import Loss

    return ActivationKind.LINEAR if loss is Loss.SQUARE else ActivationKind.SIGN


def _feature_setup(cfg, master, gen, erm):
    """Feature map, composed source, and raw-feature moments shared by the
    replica and fitting commands."""
    import numpy as np

    from .erm_trainer import FeatureMap, FeatureSource
    from .generators import WeightLaw, sample_weights
    from .moments import estimate_moments
    from .seeds import derive_seed

    sec = _section(cfg, "moments")
    _check_keys(sec, "moments", {"n_samples", "exact", "center"}, ("n_samples",))
    n = _get(sec, "moments", "n_samples", int)
    if n is None or n < 1:
        raise ConfigError("moments needs a positive integer 'n_samples'")
    N = gen.output_dim
    F = sample_weights(WeightLaw.iid(1.0 / np.sqrt(N)), erm["Ntilde"], N,
                       derive_seed(master, "fmap"))
    fmap = FeatureMap(F, erm["feature_kind"])
    source = FeatureSource(gen, fmap)
    ms = estimate_moments(source, n, derive_seed(master, "feature-moments"))
    return fmap, source, ms


# ---------------------------------------------------------------------------
# shared experiment pieces


def _run_erm_sweep(cfg, master, gen, fmap, ms_feat, erm, T_grid):
    """Fit per (T, seed) with a fresh teacher each seed; rows in CSV order."""
    import numpy as np

    from .erm_trainer import (build_dataset, generalization_error_mc,
                              logistic_fit, measure_overlaps, ridge_fit)
    from .replica_solver import Loss, test_error
    from .seeds import derive_seed

    sec = _section(cfg, "teacher")
    if _get(sec, "teacher", "M", int) != 1:
        raise ConfigError("fitting experiments need a single-unit teacher "
                          "(teacher M = 1)")
    student_kind = _student_kind_for_loss(erm["loss"])
    D = gen.latent_dim
    rows = []
    for ti, T in enumerate(T_grid):
        for sd in range(erm["seeds"]):
            teacher = _build_teacher(cfg, master, D, index=sd)
            ds = build_dataset(gen, teacher, fmap, T,
                               derive_seed(master, f"erm-train-{ti}", sd))
            if erm["loss"] is Loss.SQUARE:
                w_hat = ridge_fit(ds, erm["lam"])
            else:
                w_hat = logistic_fit(ds, erm["lam"])
            m_star, q_star = measure_overlaps(w_hat, ms_feat, teacher)
            rho_hat = float(teacher.W[0] @ teacher.W[0]) / D
            eps_pred = test_error(rho_hat, m_star, q_star, student_kind,
                                  teacher.kind)
            eps_mc, stderr = generalization_error_mc(
                w_hat, gen, teacher, fmap, student_kind, erm["n_test"],
                seed=derive_seed(master, f"erm-test-{ti}", sd))
            rows.append({
                "alpha": T / erm["Ntilde"], "seed": sd, "Ntilde": erm["Ntilde"],
                "lambda": erm["lam"], "eps_mc": eps_mc,
                "eps_mc_stderr": stderr, "m_star": m_star, "q_star": q_star,
                "eps_from_overlaps": eps_pred,
            })
    return rows


def _run_replica_sweep(cfg, gen, ms_feat, rep):
    from .replica_solver import ChannelSpec, SpectralInputs, solve_sweep

    teacher_kind = _activation(_section(cfg, "teacher"), "teacher", "kind")
    channel = ChannelSpec(rep["loss"], teacher_kind, rho=rep["rho"])
    inputs = SpectralInputs(ms_feat.Omega, ms_feat.Phi @ ms_feat.Phi.T,
                            rep["lam"], rep["alpha_grid"][0], ms_feat.delta)
    return solve_sweep(inputs, channel, rep["alpha_grid"],
                       _student_kind_for_loss(rep["loss"]),
                       damping=rep["damping"], tol=rep["tol"],
                       max_iter=rep["max_iter"])


# ---------------------------------------------------------------------------
# commands: each returns (artifact names, exit code)


def cmd_moments(cfg, master, out_dir):
    import csv

    from .moments import save_moments

    gen = _build_generator(cfg, master)
    ms = _build_moments(cfg, master, gen)
    save_moments(ms, os.path.join(out_dir, "moments.geqmat"))
    with open(os.path.join(out_dir, "spectrum.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "rho"])
        for i, r in enumerate(ms.rho):
            writer.writerow([i, repr(float(r))])
    return ["moments.geqmat", "spectrum.csv"], 0


def cmd_ode(cfg, master, out_dir):
    from .ode_dynamics import init_state, integrate, write_trajectory_csv

    gen = _build_generator(cfg, master)
    ms = _build_moments(cfg, master, gen)
    teacher = _build_teacher(cfg, master, gen.latent_dim)
    W0, v0, kind = _build_student(cfg, master, gen.output_dim)
    state = init_state(ms, W0, v0, teacher, kind)
    points = integrate(state, _ode_config(cfg))
    write_trajectory_csv(points, os.path.join(out_dir, "ode_trajectory.csv"))
    return ["ode_trajectory.csv"], 0


def cmd_sgd(cfg, master, out_dir):
    from .sgd_simulator import Student, run, write_sgd_trajectory_csv

    gen = _build_generator(cfg, master)
    ms = _build_moments(cfg, master, gen)
    teacher = _build_teacher(cfg, master, gen.latent_dim)
    W0, v0, kind = _build_student(cfg, master, gen.output_dim)
    points = run(Student(W0, v0, kind), teacher, gen, _sgd_config(cfg, master), ms)
    write_sgd_trajectory_csv(points, os.path.join(out_dir, "sgd_trajectory.csv"))
    return ["sgd_trajectory.csv"], 0


def cmd_compare(cfg, master, out_dir):
    import numpy as np

    from .ode_dynamics import init_state, integrate, write_trajectory_csv
    from .sgd_simulator import Student, run, write_sgd_trajectory_csv

    gen = _build_generator(cfg, master)
    ms = _build_moments(cfg, master, gen)
    teacher = _build_teacher(cfg, master, gen.latent_dim)
    W0, v0, kind = _build_student(cfg, master, gen.output_dim)
    sgd_cfg = _sgd_config(cfg, master)
    N = gen.output_dim
    ode_cfg = _ode_config(cfg, t_max=sgd_cfg.steps / N)
    if abs(ode_cfg.eta - sgd_cfg.eta) > 0:
        raise ConfigError("compare needs matching learning rates: "
                          "ode.eta must equal sgd.eta")

    sgd_points = run(Student(W0, v0, kind), teacher, gen, sgd_cfg, ms)
    record_times = tuple(p.t for p in sgd_points)
    ode_cfg = _ode_config(cfg, t_max=sgd_cfg.steps / N,
                          record_times=record_times)
    ode_points = integrate(init_state(ms, W0, v0, teacher, kind), ode_cfg)

    write_sgd_trajectory_csv(sgd_points, os.path.join(out_dir, "sgd_trajectory.csv"))
    write_trajectory_csv(ode_points, os.path.join(out_dir, "ode_trajectory.csv"))

    n = min(len(sgd_points), len(ode_points))
    gap = lambda attr: float(max(
        np.max(np.abs(getattr(ode_points[i], attr) - getattr(sgd_points[i], attr)))
        for i in range(n)))
    summary = {
        "n_points": n,
        "t_max": sgd_cfg.steps / N,
        "max_abs_pmse_gap": gap("pmse"),
        "max_abs_gap_Q": gap("Q"),
        "max_abs_gap_R": gap("R"),
        "max_abs_gap_v": gap("v"),
    }
    _write_json(os.path.join(out_dir, "compare_summary.json"), summary)
    return ["sgd_trajectory.csv", "ode_trajectory.csv", "compare_summary.json"], 0


def cmd_replica(cfg, master, out_dir):
    from .replica_solver import write_sweep_csv

    gen = _build_generator(cfg, master)
    rep = _replica_params(cfg)
    erm = _erm_params(cfg, need_T_grid=False)
    _, _, ms_feat = _feature_setup(cfg, master, gen, erm)
    rows = _run_replica_sweep(cfg, gen, ms_feat, rep)
    write_sweep_csv(rows, os.path.join(out_dir, "replica_sweep.csv"))
    code = 0 if all(r["converged"] for r in rows) else 3
    return ["replica_sweep.csv"], code


def cmd_erm(cfg, master, out_dir):
    from .erm_trainer import write_erm_csv

    gen = _build_generator(cfg, master)
    erm = _erm_params(cfg, need_T_grid=True)
    fmap, _, ms_feat = _feature_setup(cfg, master, gen, erm)
    rows = _run_erm_sweep(cfg, master, gen, fmap, ms_feat, erm, erm["T_grid"])
    write_erm_csv(rows, os.path.join(out_dir, "erm_sweep.csv"))
    return ["erm_sweep.csv"], 0


def cmd_replica_compare(cfg, master, out_dir):
    import numpy as np

    from .erm_trainer import write_erm_csv
    from .replica_solver import write_sweep_csv

    gen = _build_generator(cfg, master)
    rep = _replica_params(cfg)
    erm = _erm_params(cfg, need_T_grid=False)
    fmap, _, ms_feat = _feature_setup(cfg, master, gen, erm)

    replica_rows = _run_replica_sweep(cfg, gen, ms_feat, rep)
    T_grid = [max(1, round(a * erm["Ntilde"])) for a in rep["alpha_grid"]]
    erm_rows = _run_erm_sweep(cfg, master, gen, fmap, ms_feat, erm, T_grid)

    write_sweep_csv(replica_rows, os.path.join(out_dir, "replica_sweep.csv"))
    write_erm_csv(erm_rows, os.path.join(out_dir, "erm_sweep.csv"))

    per_alpha = []
    for rrow, T in zip(replica_rows, T_grid):
        alpha = T / erm["Ntilde"]
        eps_seeds = [e["eps_mc"] for e in erm_rows
                     if e["alpha"] == alpha]
        eps_mean = float(np.mean(eps_seeds))
        rel = abs(eps_mean - rrow["eps_g"]) / max(abs(rrow["eps_g"]), 1e-300)
        per_alpha.append({
            "alpha": rrow["alpha"],
            "eps_replica": rrow["eps_g"],
            "eps_erm_mean": eps_mean,
            "relative_error": rel,
            "converged": bool(rrow["converged"]),
        })
    summary = {
        "per_alpha": per_alpha,
        "max_relative_error": max(p["relative_error"] for p in per_alpha),
        "all_converged": all(p["converged"] for p in per_alpha),
    }
    _write_json(os.path.join(out_dir, "replica_compare_summary.json"), summary)
    code = 0 if summary["all_converged"] else 3
    return ["replica_sweep.csv", "erm_sweep.csv",
            "replica_compare_summary.json"], code


def cmd_get_audit(cfg, master, out_dir):
    import numpy as np

    from .generators import SingleLayer
    from .get_audit import (deterministic_k_spectra, gaussianity_cumulants,
                            get_bound, scaling_study, write_scaling_csv)
    from .seeds import derive_seed

    gen = _build_generator(cfg, master)
    if not isinstance(gen, SingleLayer):
        raise ConfigError("get-audit needs a single_layer generator")
    sec = _section(cfg, "audit", required=False)
    _check_keys(sec, "audit",
                {"beta_exponent", "delta", "N_list", "scaling_seeds", "mu",
                 "cumulant_samples"}, ())
    beta = _get(sec, "audit", "beta_exponent", float, 0.25)
    delta = _get(sec, "audit", "delta", float, 0.5)
    mu = _get(sec, "audit", "mu", float, 0.5)
    n_cum = _get(sec, "audit", "cumulant_samples", int, 20_000)
    n_seeds = _get(sec, "audit", "scaling_seeds", int, 3)
    if "N_list" in sec:
        N_list = [int(n) for n in _number_list(sec, "audit", "N_list")]
    else:
        N_list = [64, 128, 256]

    teacher = _build_teacher(cfg, master, gen.latent_dim)
    W0, _, _ = _build_student(cfg, master, gen.output_dim)
    report = get_bound(W0, teacher.W, gen.A, gen.kind)

    spectra = deterministic_k_spectra(mu, N_list[-1])
    det = {}
    for name, ks in spectra.items():
        closed, numeric = ks.eigenvalues_closed, ks.eigenvalues_numeric
        scale = float(np.max(np.abs(closed))) or 1.0
        det[name] = {
            "max_rel_err": float(np.max(np.abs(closed - numeric))) / scale,
            "leading_cosine": ks.leading_cosine,
        }

    rows, slopes = scaling_study(beta, delta, N_list, seeds=list(range(n_seeds)))
    write_scaling_csv(rows, os.path.join(out_dir, "scaling.csv"))

    samples = _generator_samples(gen, n_cum, derive_seed(master, "audit-samples"))
    cum = gaussianity_cumulants(samples, seed=derive_seed(master, "audit-dirs"))

    payload = {
        "bound_terms": {k: float(v) for k, v in report.bound_terms.items()},
        "bound_total": float(report.bound_total),
        "eig_summary": {
            name: {"lambda1": s.lambda1, "lambda2": s.lambda2,
                   "lambda6": s.lambda6, "ones_correlation": s.ones_correlation}
            for name, s in report.eig_summary.items()},
        "deterministic_spectra": {"mu": mu, "N": N_list[-1], "matrices": det},
        "scaling_slopes": {k: float(v) for k, v in slopes.items()},
        "cumulants": {
            "n_samples": n_cum,
            "max_abs_skewness": cum.max_abs_skewness,
            "max_abs_kurtosis": cum.max_abs_kurtosis,
        },
    }
    _write_json(os.path.join(out_dir, "get_audit_report.json"), payload)
    return ["get_audit_report.json", "scaling.csv"], 0


def _generator_samples(gen, n, seed):
    import numpy as np

    from .generators import latent_block

    out = np.empty((n, gen.output_dim))
    start = 0
    while start < n:
        count = min(4096, n - start)
        c = latent_block(gen.latent_dim, seed, start, count)
        out[start:start + count] = gen.apply(c)
        start += count
    return out


# ---------------------------------------------------------------------------
# run orchestration


_COMMANDS = {
    "moments": cmd_moments,
    "ode": cmd_ode,
    "sgd": cmd_sgd,
    "compare": cmd_compare,
    "replica": cmd_replica,
    "erm": cmd_erm,
    "replica-compare": cmd_replica_compare,
    "get-audit": cmd_get_audit,
}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _resolve(cfg, args):
    """Apply command-line overrides; returns (resolved config, master, out dir)."""
    resolved = copy.deepcopy(cfg)
    seeds = _section(resolved, "seeds", required=False)
    _check_keys(seeds, "seeds", {"master"}, ())
    master = args.seed if args.seed is not None else seeds.get("master")
    if master is None:
        raise ConfigError("no master seed: set seeds.master or pass --seed")
    if isinstance(master, bool) or not isinstance(master, int) or master < 0:
        raise ConfigError("the master seed must be a non-negative integer")
    resolved["seeds"] = {"master": master}

    output = _section(resolved, "output", required=False)
    _check_keys(output, "output", {"dir"}, ())
    out_dir = args.out if args.out is not None else output.get("dir")
    if not out_dir:
        raise ConfigError("no output directory: set output.dir or pass --out")
    # The destination is not part of the experiment identity: dropping it from
    # the resolved config keeps reruns byte-identical wherever they land.
    resolved.pop("output", None)
    return resolved, master, str(out_dir)


def _run(args):
    cfg = _load_config(args.config)
    resolved, master, out_dir = _resolve(cfg, args)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "resolved_config.json"), resolved)
    artifacts, code = _COMMANDS[args.command](resolved, master, out_dir)
    manifest = {
        "command": args.command,
        "artifacts": {
            name: _sha256(os.path.join(out_dir, name))
            for name in sorted(artifacts + ["resolved_config.json"])
        },
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return code


def _parser():
    parser = argparse.ArgumentParser(
        prog="geqlab",
        description="Reproducible experiment runs: estimated data moments, "
                    "theory/simulation learning curves, and audits of the "
                    "Gaussian surrogate itself.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "moments": "estimate data moments and write them with their spectrum",
        "ode": "integrate the order-parameter dynamics",
        "sgd": "run online SGD on sampled data",
        "compare": "run ODE and SGD on one recording grid and summarize gaps",
        "replica": "solve the fixed-point learning curves over alpha",
        "erm": "fit regularized estimators and measure their errors",
        "replica-compare": "replica sweep vs fitted estimators, one summary",
        "get-audit": "bound terms, audit-matrix spectra, and cumulant checks",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None,
                       help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides seeds.master)")
        p.add_argument("--threads", type=int, default=None,
                       help="pin BLAS/OpenMP thread pools to N threads")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be a positive integer", file=sys.stderr)
            return 2
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .erm_trainer import FitConvergenceError
    from .moments import MomentFormatError
    from .ode_dynamics import DegenerateFieldError

    try:
        return _run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MomentFormatError as exc:
        print(f"error: bad file format: {exc}", file=sys.stderr)
        return 4
    except (FitConvergenceError, DegenerateFieldError, RuntimeError) as exc:
        print(f"error: did not converge: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: invalid configuration value: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
