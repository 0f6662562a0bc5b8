"""Command-line front end: train / predict / analyze / cycle / selftest.

Exit codes: 0 success, 64 usage, 65 bad configuration, 66 data error,
70 numerical failure.  Failures print one ``error category=<cat>:`` line
to stderr so scripts can dispatch on the category.  Every successful run
writes a JSON manifest next to its primary output recording the
resolved configuration, content digests of all inputs, the seed, and
wall time; identical inputs therefore yield identical digests.

Config precedence is CLI ``--set key=value`` > config file > defaults.
``MAMFORGE_THREADS`` caps BLAS threads (set 1 for bitwise determinism
across machines).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .calculators import LennardJonesCalculator, PotentialCalculator
from .chemomech import (
    EnergyTriple,
    SlidingProfile,
    VoigtTensor,
    diffusion_kinetics,
    elastic_constants,
    intercalation_voltage,
    interphase_formation_energy,
    octahedral_distortion,
    potential_gradient,
    sei_formation_energy,
    sliding_traction,
    voigt_moduli,
    work_of_separation,
)
from .config import ConfigError, element_table, get_bool, get_float, get_int, load_config, resolve
from .constants import EV_A3_TO_GPA, symbol_to_z
from .cyclesim import CycleConfig, run_cycle, trace_csv
from .descriptors import AcsfParams, default_angular_set, default_radial_set
from .potential import PotentialModel, predict
from .structure import Region
from .training import TrainConfig, evaluate, history_csv, load_dataset, parity_csv, train
from .xyz import XyzError, parse_structure, write_frame

EX_USAGE = 64
EX_CONFIG = 65
EX_DATA = 66
EX_NUMERICAL = 70

_thread_limiter = None


def _apply_thread_cap() -> None:
    global _thread_limiter
    cap = os.environ.get("MAMFORGE_THREADS")
    if cap:
        from threadpoolctl import threadpool_limits

        _thread_limiter = threadpool_limits(limits=int(cap))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error category=usage: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


TRAIN_DEFAULTS = {
    "loss.w_e": "1.0", "loss.w_f": "0.0", "loss.w_q": "0.0",
    "opt.lr": "0.02", "opt.epochs": "500", "opt.seed": "0",
    "opt.optimizer": "adam", "opt.batch_size": "",
    "data.val_fraction": "0.0",
    "elec.enable": "false", "elec.cutoff": "15.0",
    "acsf.cutoff": "8.9", "acsf.radial": "", "acsf.angular": "",
    "net.hidden": "24,24",
}

CYCLE_DEFAULTS = {
    "cycle.intercalant": "Li", "cycle.axis": "2", "cycle.lo": "0.0", "cycle.hi": "5.0",
    "cycle.atoms_per_step": "1", "cycle.bias": "0.1", "cycle.x_max": "1.0",
    "cycle.seed": "0", "cycle.schedule": "charge",
    "cycle.relax_tol": "0.05", "cycle.relax_max_steps": "200",
    "cycle.relax_step_cap": "0.2", "cycle.min_insert_dist": "1.5",
    "lj.epsilon": "0.5", "lj.sigma": "2.2", "lj.cutoff": "6.0",
}


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, subcommand, cfg, inputs, outputs, seed, t0) -> None:
    manifest = {
        "tool": "mamforge",
        "version": __version__,
        "subcommand": subcommand,
        "config": dict(sorted(cfg.items())) if cfg else {},
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "wall_time_s": round(time.time() - t0, 3),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)


def _manifest_path(args, primary_output) -> str:
    if getattr(args, "manifest", None):
        return args.manifest
    if primary_output:
        return str(primary_output) + ".manifest.json"
    return "mamforge-manifest.json"


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolved_config(defaults, args) -> dict[str, str]:
    file_cfg = load_config(args.config) if getattr(args, "config", None) else {}
    return resolve(defaults, file_cfg, _parse_overrides(getattr(args, "set", None)))


def _parse_tuple_list(raw, width, key):
    out = []
    for group in raw.split(";"):
        group = group.strip()
        if not group:
            continue
        parts = [p.strip() for p in group.split(",")]
        if len(parts) != width:
            raise ConfigError(f"{key}: expected {width} comma-separated numbers per group")
        out.append(tuple(float(p) for p in parts))
    return tuple(out)


def _acsf_from_config(cfg) -> AcsfParams:
    radial = (_parse_tuple_list(cfg["acsf.radial"], 2, "acsf.radial")
              or default_radial_set())
    angular = (_parse_tuple_list(cfg["acsf.angular"], 3, "acsf.angular")
               or default_angular_set())
    return AcsfParams(cutoff=get_float(cfg, "acsf.cutoff"), radial=radial, angular=angular)


def _load_calculator(spec: str, cfg):
    """A model file path, or ``oracle:lj`` for the bundled pair potential."""
    if spec == "oracle:lj":
        return LennardJonesCalculator(
            epsilon=get_float(cfg, "lj.epsilon"),
            sigma=get_float(cfg, "lj.sigma"),
            cutoff=get_float(cfg, "lj.cutoff"),
        ), None
    model = PotentialModel.load(spec)
    return PotentialCalculator(model), model


# --- subcommands -------------------------------------------------------------


def cmd_train(args) -> int:
    t0 = time.time()
    cfg = _resolved_config(TRAIN_DEFAULTS, args)
    dataset = load_dataset(args.data)

    hidden = tuple(int(w) for w in cfg["net.hidden"].split(",") if w.strip())
    alpha = {symbol_to_z(s): v for s, v in element_table(cfg, "elec.alpha").items()}
    hardness = {symbol_to_z(s): v for s, v in element_table(cfg, "elec.hardness").items()}
    model = PotentialModel.create(
        acsf=_acsf_from_config(cfg), hidden=hidden,
        seed=get_int(cfg, "opt.seed"),
        use_electrostatics=get_bool(cfg, "elec.enable"),
        elec_cutoff=get_float(cfg, "elec.cutoff"),
        alpha=alpha, hardness=hardness,
    )
    train_cfg = TrainConfig(
        w_e=get_float(cfg, "loss.w_e"), w_f=get_float(cfg, "loss.w_f"),
        w_q=get_float(cfg, "loss.w_q"), lr=get_float(cfg, "opt.lr"),
        epochs=get_int(cfg, "opt.epochs"),
        batch_size=int(cfg["opt.batch_size"]) if cfg["opt.batch_size"] else None,
        val_fraction=get_float(cfg, "data.val_fraction"),
        optimizer=cfg["opt.optimizer"], seed=get_int(cfg, "opt.seed"),
    )
    model, history = train(model, dataset, train_cfg)
    model.save(args.model_out)
    outputs = [args.model_out]
    history_path = args.history or args.model_out + ".history.csv"
    with open(history_path, "w") as fh:
        fh.write(history_csv(history))
    outputs.append(history_path)

    metrics, rows = evaluate(model, dataset)
    parity_path = args.model_out + ".parity.csv"
    with open(parity_path, "w") as fh:
        fh.write(parity_csv(rows))
    outputs.append(parity_path)
    print(json.dumps(metrics))

    inputs = [args.data] + ([args.config] if args.config else [])
    _write_manifest(_manifest_path(args, args.model_out), "train", cfg, inputs,
                    outputs, get_int(cfg, "opt.seed"), t0)
    return 0


def cmd_predict(args) -> int:
    t0 = time.time()
    cfg = _resolved_config(dict(CYCLE_DEFAULTS), args)
    with open(args.structure) as fh:
        structure = parse_structure(fh.read())
    calc, model = _load_calculator(args.model, cfg)

    if model is not None:
        p = predict(structure, model)
        e_total, e_short, e_elec = p.e_total, p.e_short, p.e_elec
        forces, charges, stress = p.forces, p.charges, p.stress_static
    else:
        e_total, forces = calc.energy_and_forces(structure)
        e_short, e_elec = e_total, 0.0
        charges = np.zeros(structure.n_atoms)
        stress = (calc.atom_virials(structure).sum(axis=0) / structure.volume
                  if structure.periodic.all() else None)

    out_path = args.out or args.structure + ".pred.xyz"
    with open(out_path, "w") as fh:
        fh.write(write_frame(structure, energy=e_total, forces=forces, charges=charges))

    summary_path = args.summary or out_path + ".summary.csv"
    header = ["e_total_ev", "e_short_ev", "e_elec_ev", "fmax_ev_a"]
    row = [f"{e_total:.17g}", f"{e_short:.17g}", f"{e_elec:.17g}",
           f"{np.max(np.abs(forces)):.17g}"]
    if stress is not None:
        for a in "xyz":
            for b in "xyz":
                header.append(f"s{a}{b}_ev_a3")
        row.extend(f"{v:.17g}" for v in stress.ravel())
        header.append("pressure_gpa")
        row.append(f"{-np.trace(stress) / 3.0 * EV_A3_TO_GPA:.17g}")
    with open(summary_path, "w") as fh:
        fh.write(",".join(header) + "\n" + ",".join(row) + "\n")

    inputs = [args.structure] + ([args.model] if args.model != "oracle:lj" else [])
    if args.config:
        inputs.append(args.config)
    _write_manifest(_manifest_path(args, out_path), "predict", cfg, inputs,
                    [out_path, summary_path], None, t0)
    print(f"e_total = {e_total:.6f} eV; wrote {out_path}")
    return 0


ANALYZE_FIELDS = {
    "wsep": ["e1", "e2", "e12", "area"],
    "pgrad": ["u1", "u2", "d"],
    "ef": ["ed", "eelec"],
    "sei": ["esei", "ex", "eelec", "nx"],
    "voltage": ["def", "n"],
    "kinetics": ["lam", "d"],
}


def _analyze_closed_form(kind: str, row: dict[str, float]):
    if kind == "wsep":
        out = work_of_separation(EnergyTriple(row["e1"], row["e2"], row["e12"], row["area"]))
        return list(out.keys()), list(out.values())
    if kind == "pgrad":
        return ["dphi_dz_v_a"], [potential_gradient(row["u1"], row["u2"], row["d"])]
    if kind == "ef":
        return ["ef_ev"], [interphase_formation_energy(row["ed"], row["eelec"])]
    if kind == "sei":
        return ["ef_sei_ev_atom"], [sei_formation_energy(row["esei"], row["ex"],
                                                         row["eelec"], int(row["nx"]))]
    if kind == "voltage":
        return ["voltage_v"], [intercalation_voltage(row["def"], int(row["n"]))]
    if kind == "kinetics":
        out = diffusion_kinetics(row["lam"], row["d"])
        return list(out.keys()), list(out.values())
    raise ConfigError(f"unknown analyze kind {kind!r}")


def _emit_csv(args, header, rows):
    text = ",".join(header) + "\n"
    for row in rows:
        text += ",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return args.out


def cmd_analyze(args) -> int:
    t0 = time.time()
    kind = args.kind
    inputs = []
    cfg = {}

    if kind in ANALYZE_FIELDS:
        fields = ANALYZE_FIELDS[kind]
        if args.batch:
            inputs.append(args.batch)
            with open(args.batch) as fh:
                lines = [ln.strip() for ln in fh if ln.strip()]
            cols = [c.strip() for c in lines[0].split(",")]
            missing = [f for f in fields if f not in cols]
            if missing:
                raise ConfigError(f"batch file lacks columns {missing}")
            data_rows = []
            for ln in lines[1:]:
                vals = dict(zip(cols, (float(v) for v in ln.split(","))))
                data_rows.append(vals)
        else:
            vals = {}
            for f in fields:
                v = getattr(args, f"field_{f}")
                if v is None:
                    raise ConfigError(f"analyze {kind} requires --{f} (or --batch)")
                vals[f] = v
            data_rows = [vals]
        header = None
        out_rows = []
        for row in data_rows:
            header, values = _analyze_closed_form(kind, row)
            out_rows.append(values)
        out = _emit_csv(args, header, out_rows)

    elif kind == "moduli":
        if not args.cij:
            raise ConfigError("analyze moduli requires --cij <6x6 csv>")
        inputs.append(args.cij)
        c = np.loadtxt(args.cij, delimiter=",").reshape(6, 6)
        mod = voigt_moduli(VoigtTensor(c))
        out = _emit_csv(args, ["bulk_gpa", "shear_gpa", "young_gpa"],
                        [[mod.bulk, mod.shear, mod.young]])

    elif kind == "elastic":
        if not (args.structure and args.model):
            raise ConfigError("analyze elastic requires --structure and --model")
        cfg = _resolved_config(dict(CYCLE_DEFAULTS), args)
        inputs.append(args.structure)
        if args.model != "oracle:lj":
            inputs.append(args.model)
        with open(args.structure) as fh:
            s = parse_structure(fh.read())
        calc, _ = _load_calculator(args.model, cfg)
        tensor = elastic_constants(s, calc, delta=args.delta)
        mod = voigt_moduli(tensor)
        header = [f"c{i + 1}{j + 1}_gpa" for i in range(6) for j in range(6)]
        header += ["bulk_gpa", "shear_gpa", "young_gpa"]
        out = _emit_csv(args, header,
                        [list(tensor.c.ravel()) + [mod.bulk, mod.shear, mod.young]])

    elif kind == "sliding":
        if not args.profile:
            raise ConfigError("analyze sliding requires --profile <csv>")
        inputs.append(args.profile)
        data = np.loadtxt(args.profile, delimiter=",", skiprows=1).reshape(-1, 2)
        profile = SlidingProfile(data[:, 0], data[:, 1])
        traction, tau = sliding_traction(profile)
        rows = [[l, w, t] for l, w, t in zip(profile.l, profile.wsep, traction)]
        rows.append(["tau_max", "", tau])
        out = _emit_csv(args, ["l_a", "wsep_j_m2", "traction_j_m2_a"], rows)

    elif kind == "distortion":
        if not (args.structure and args.center is not None and args.ligands):
            raise ConfigError("analyze distortion requires --structure, --center, --ligands")
        inputs.append(args.structure)
        with open(args.structure) as fh:
            s = parse_structure(fh.read())
        ligands = [int(x) for x in args.ligands.split(",")]
        res = octahedral_distortion(s, args.center, ligands)
        out = _emit_csv(args, list(res.keys()), [list(res.values())])

    else:
        raise ConfigError(f"unknown analyze kind {kind!r}")

    _write_manifest(_manifest_path(args, out), f"analyze {kind}", cfg, inputs,
                    [out] if out else [], None, t0)
    return 0


def cmd_cycle(args) -> int:
    t0 = time.time()
    cfg = _resolved_config(CYCLE_DEFAULTS, args)
    with open(args.structure) as fh:
        structure = parse_structure(fh.read())
    calc, _ = _load_calculator(args.model, cfg)

    region = Region(axis=get_int(cfg, "cycle.axis"),
                    lo=get_float(cfg, "cycle.lo"), hi=get_float(cfg, "cycle.hi"))
    cycle_cfg = CycleConfig(
        intercalant_z=symbol_to_z(cfg["cycle.intercalant"]),
        region=region,
        atoms_per_step=get_int(cfg, "cycle.atoms_per_step"),
        bias=get_float(cfg, "cycle.bias"),
        relax_tol=get_float(cfg, "cycle.relax_tol"),
        relax_max_steps=get_int(cfg, "cycle.relax_max_steps"),
        relax_step_cap=get_float(cfg, "cycle.relax_step_cap"),
        x_max=get_float(cfg, "cycle.x_max"),
        min_insert_dist=get_float(cfg, "cycle.min_insert_dist"),
        seed=get_int(cfg, "cycle.seed"),
    )
    schedule = []
    for token in cfg["cycle.schedule"].split(","):
        token = token.strip()
        if not token:
            continue
        if "*" in token:
            mode, count = token.split("*", 1)
            schedule.extend([mode.strip()] * int(count))
        else:
            schedule.append(token)

    trace = run_cycle(structure, calc, cycle_cfg, schedule)
    with open(args.trace_out, "w") as fh:
        fh.write(trace_csv(trace))
    if trace.stop_reason:
        print(f"stopped early: {trace.stop_reason}")
    print(f"{len(trace.records)} steps recorded; wrote {args.trace_out}")

    inputs = [args.structure] + ([args.model] if args.model != "oracle:lj" else [])
    if args.config:
        inputs.append(args.config)
    _write_manifest(_manifest_path(args, args.trace_out), "cycle", cfg, inputs,
                    [args.trace_out], cycle_cfg.seed, t0)
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    return 0 if run_all() else 1


def build_parser() -> _Parser:
    parser = _Parser(prog="mamforge",
                     description="neural interatomic potential engine and "
                                 "electro-chemo-mechanics toolkit")
    parser.add_argument("--version", action="version",
                        version=f"mamforge {__version__}")
    sub = parser.add_subparsers(dest="subcommand")

    p_train = sub.add_parser("train", help="fit a model to a labeled dataset")
    p_train.add_argument("--data", required=True, help="multi-frame extended-XYZ file")
    p_train.add_argument("--model-out", required=True)
    p_train.add_argument("--config")
    p_train.add_argument("--history", help="training history CSV path")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_train.add_argument("--manifest")
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser("predict", help="evaluate a structure with a model")
    p_pred.add_argument("--structure", required=True)
    p_pred.add_argument("--model", required=True, help="model file or oracle:lj")
    p_pred.add_argument("--out", help="output extended-XYZ path")
    p_pred.add_argument("--summary", help="summary CSV path")
    p_pred.add_argument("--config")
    p_pred.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_pred.add_argument("--manifest")
    p_pred.set_defaults(func=cmd_predict)

    p_an = sub.add_parser("analyze", help="closed-form analyzers")
    p_an.add_argument("kind", choices=list(ANALYZE_FIELDS) +
                      ["moduli", "elastic", "sliding", "distortion"])
    for fields in ANALYZE_FIELDS.values():
        for f in fields:
            if not any(a.dest == f"field_{f}" for a in p_an._actions):
                p_an.add_argument(f"--{f}", dest=f"field_{f}", type=float)
    p_an.add_argument("--batch", help="CSV with one input row per line")
    p_an.add_argument("--cij", help="6x6 stiffness CSV (moduli)")
    p_an.add_argument("--structure")
    p_an.add_argument("--model")
    p_an.add_argument("--delta", type=float, default=1e-3)
    p_an.add_argument("--profile", help="sliding profile CSV: l_a,wsep_j_m2")
    p_an.add_argument("--center", type=int)
    p_an.add_argument("--ligands", help="six comma-separated atom indices")
    p_an.add_argument("--config")
    p_an.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_an.add_argument("--out", help="write the CSV here as well as stdout")
    p_an.add_argument("--manifest")
    p_an.set_defaults(func=cmd_analyze)

    p_cyc = sub.add_parser("cycle", help="run the charge/discharge protocol")
    p_cyc.add_argument("--structure", required=True)
    p_cyc.add_argument("--model", required=True, help="model file or oracle:lj")
    p_cyc.add_argument("--config")
    p_cyc.add_argument("--trace-out", required=True)
    p_cyc.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_cyc.add_argument("--manifest")
    p_cyc.set_defaults(func=cmd_cycle)

    p_self = sub.add_parser("selftest", help="run the acceptance suite")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        print("error category=usage: missing subcommand", file=sys.stderr)
        return EX_USAGE
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error category=config: {err}", file=sys.stderr)
        return EX_CONFIG
    except (XyzError, FileNotFoundError) as err:
        print(f"error category=data: {err}", file=sys.stderr)
        return EX_DATA
    except ValueError as err:
        print(f"error category=data: {err}", file=sys.stderr)
        return EX_DATA
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as err:
        print(f"error category=numerical: {err}", file=sys.stderr)
        return EX_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
