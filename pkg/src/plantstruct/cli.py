"""Command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant breach
(including structures that fail validation).
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__, egrtr
from .datasets import reference_bytes
from .fusion import fuse_instance
from .ingest import ParseError, RunConfig, dump_equipment, dump_ocr_codes, dump_scene_graph, \
    dump_structure, dumps_json, parse_config, parse_equipment, parse_ocr_codes, parse_registry, \
    parse_regulations, parse_scene_graph, parse_structure, parse_vocab, scene_graph_to_document
from .model import validate_structure
from .objective import PlausibilityModel, fit_plausibility
from .optimizer import InstanceTooLarge
from .pipeline import provenance_header, reconstruct, result_document

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


class InputError(Exception):
    """Unreadable or malformed input; message names the file."""


class InvariantBreach(Exception):
    pass


def _read(path: str | None, role: str, inputs: dict | None = None,
          default: str | None = None) -> bytes | None:
    if path is None:
        if default is None:
            return None
        data = reference_bytes(default)
    else:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror or exc}") from None
    if inputs is not None:
        inputs[role] = data
    return data


def _parse(fn, data, path, *args):
    try:
        return fn(data, *args)
    except ParseError as exc:
        raise InputError(f"{path or '<packaged>'}: {exc}") from None
    except ValueError as exc:
        raise InputError(f"{path or '<packaged>'}: {exc}") from None


def _emit(data: bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(out).write_bytes(data)


def _seed_override(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    from dataclasses import replace
    return replace(cfg, seed=seed)


def _load_problem(args, inputs: dict):
    """Scene graph, codes, equipment, rulebook, model and config."""
    inst = _parse(parse_scene_graph, _read(args.scene_graph, "scene_graph", inputs),
                  args.scene_graph)
    vocab = inst.vocab
    eq_data = _read(args.equipment, "equipment", inputs)
    equipment = _parse(parse_equipment, eq_data, args.equipment) if eq_data is not None else []
    ocr_data = _read(args.ocr, "ocr", inputs)
    codes = _parse(parse_ocr_codes, ocr_data, args.ocr) if ocr_data is not None else []
    rulebook = _parse(parse_regulations, _read(args.regulations, "regulations", inputs,
                                               "regulations.json"), args.regulations, vocab)
    model = _load_model(args, inputs)
    if model.vocab != vocab:
        raise InputError(f"{args.model or '<packaged>'}: class vocabularies differ from the "
                         "scene graph")
    cfg_data = _read(args.config, "config", None)
    cfg = _parse(parse_config, cfg_data, args.config) if cfg_data is not None else RunConfig()
    return inst, codes, equipment, rulebook, model, _seed_override(cfg, args.seed)


def _load_model(args, inputs: dict | None) -> PlausibilityModel:
    if args.model is None:
        vocab = parse_vocab(reference_bytes("vocab.json"))
        data = reference_bytes("registry.csv")
        if inputs is not None:
            inputs["model"] = data
        return fit_plausibility(parse_registry(data, vocab), vocab)
    return _parse(PlausibilityModel.loads, _read(args.model, "model", inputs), args.model)


def _check_result(rec, inst) -> None:
    problems = validate_structure(rec.report.best, inst)
    if problems:
        raise InvariantBreach("search returned an invalid structure: " + "; ".join(problems))


def cmd_reconstruct(args, exact: bool = False) -> int:
    inputs: dict = {}
    inst, codes, equipment, rulebook, model, cfg = _load_problem(args, inputs)
    try:
        rec = reconstruct(inst, codes, equipment, rulebook, model, cfg, exact=exact)
    except InstanceTooLarge as exc:
        raise InputError(f"{args.scene_graph}: too large for exhaustive search ({exc})") from None
    _check_result(rec, inst)
    doc = result_document(rec, rulebook, cfg, inputs)
    doc["header"]["command"] = "oracle" if exact else "reconstruct"
    _emit(dumps_json(doc), args.out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    inputs: dict = {}
    inst, codes, equipment, rulebook, _, cfg = _load_problem(args, inputs)
    fused, assignment = fuse_instance(inst, codes, equipment, rulebook, cfg.beta, cfg.gamma,
                                      cfg.match_cutoff_factor)
    doc = {"header": provenance_header(cfg, inputs)}
    doc["header"]["command"] = "fuse"
    doc.update(scene_graph_to_document(fused))
    doc["matching"] = {"pairs": [[c, d, dist] for c, d, dist in assignment.pairs],
                       "unmatched_codes": list(assignment.unmatched_codes),
                       "unmatched_detections": list(assignment.unmatched_detections)}
    _emit(dumps_json(doc), args.out)
    return EXIT_OK


def cmd_fit_model(args) -> int:
    vocab = _parse(parse_vocab, _read(args.vocab, "vocab", None, "vocab.json"), args.vocab)
    records = _parse(parse_registry, _read(args.registry, "registry", None, "registry.csv"),
                     args.registry, vocab)
    try:
        model = fit_plausibility(records, vocab, smoothing=args.smoothing)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(model.dumps(), args.out)
    return EXIT_OK


def _bench_inputs(args):
    model = _load_model(args, None)
    rulebook = _parse(parse_regulations, _read(args.regulations, "regulations", None,
                                               "regulations.json"), args.regulations, model.vocab)
    return model, rulebook


def cmd_synth(args) -> int:
    from .synth import SYNTH_STREAM, NoiseSpec, corrupt_instance, sample_structure, \
        synth_documents

    model, rulebook = _bench_inputs(args)
    rng = np.random.default_rng([args.seed, SYNTH_STREAM, 0])
    truth, clean = sample_structure(model, model.vocab, rng, identifiable=args.identifiable)
    try:
        spec = NoiseSpec(args.noise, args.p_edge_flip, args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    noisy = corrupt_instance(clean, spec)
    equipment, codes = synth_documents(truth, clean, rulebook)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "truth.json").write_bytes(dump_structure(truth, model.vocab))
    (out / "clean_scene_graph.json").write_bytes(dump_scene_graph(clean))
    (out / "scene_graph.json").write_bytes(dump_scene_graph(noisy))
    (out / "equipment.csv").write_bytes(dump_equipment(equipment))
    (out / "ocr.json").write_bytes(dump_ocr_codes(codes))
    return EXIT_OK


BENCH_COLUMNS = ("instance", "noise", "n_components", "exact", "total", "component_accuracy",
                 "section_score", "regulation_section_acc", "measurement_section_acc",
                 "R@20", "R@50", "R@100")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_bench(args) -> int:
    from .synth import run_bench

    model, rulebook = _bench_inputs(args)
    cfg_data = _read(args.config, "config", None)
    cfg = _parse(parse_config, cfg_data, args.config) if cfg_data is not None else RunConfig()
    cfg = _seed_override(cfg, args.seed)
    try:
        levels = tuple(float(x) for x in args.noise.split(",") if x.strip())
    except ValueError:
        raise InputError(f"--noise: cannot parse {args.noise!r}") from None
    if not levels or any(v < 0 for v in levels):
        raise InputError("--noise: expected non-negative comma-separated levels")
    rows = run_bench(model, rulebook, cfg, levels, args.instances, args.seed,
                     identifiable=args.identifiable, with_documents=args.with_documents)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in BENCH_COLUMNS])
    _emit(buf.getvalue().encode(), args.out)
    return EXIT_OK


def egrtr_report(seed: int, n: int, d_model: int, layers: int, n_classes: int,
                 enc_tokens: int = 6) -> tuple[dict, egrtr.RelationHeadState]:
    """Shape/range summary and gradient check of a seeded head."""
    state = egrtr.init_state(n, d_model, layers, n_rel_classes=n_classes, seed=seed)
    trace = egrtr.random_trace(n, d_model, layers, enc_tokens, seed)
    out = egrtr.forward(trace, state)
    queries = egrtr.relational_queries(trace, state)
    check = egrtr.gradient_check(out.r_a, out.r_z, queries, state)
    broadcast = all(bool(np.all(out.r_prime[l] == out.r_prime[l, 0, 0]))
                    for l in range(layers + 1))
    report = {
        "header": {"tool": "plantstruct", "version": __version__, "command": "egrtr-demo"},
        "config": {"seed": seed, "n": n, "d_model": d_model, "layers": layers,
                   "n_rel_classes": n_classes, "enc_tokens": enc_tokens,
                   "n_rel_layers": state.n_rel_layers, "h": state.h, "hidden": state.hidden},
        "shapes": {"g_rel": list(out.g_rel.shape), "g_conn": list(out.g_conn.shape),
                   "gates": list(out.gates.shape), "fused": list(out.fused.shape),
                   "experts": list(out.experts.shape)},
        "ranges": {name: [float(arr.min()), float(arr.max())]
                   for name, arr in (("g_rel", out.g_rel), ("g_conn", out.g_conn),
                                     ("gates", out.gates))},
        "broadcast_constant": broadcast,
        "gradient_check": {"step": 1e-5, "max_relative_error": check["max"],
                           "passed": check["max"] < 1e-4},
    }
    return report, state


def cmd_egrtr_demo(args) -> int:
    try:
        report, state = egrtr_report(args.seed, args.n, args.d_model, args.layers, args.classes)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.state_out:
        Path(args.state_out).write_bytes(state.dumps())
    _emit(dumps_json(report), args.out)
    return EXIT_OK if report["gradient_check"]["passed"] else EXIT_INTERNAL


def cmd_validate(args) -> int:
    inst = _parse(parse_scene_graph, _read(args.scene_graph, "scene_graph"), args.scene_graph)
    s = _parse(parse_structure, _read(args.structure, "structure"), args.structure, inst.vocab)
    problems = validate_structure(s, inst)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return EXIT_INTERNAL if problems else EXIT_OK


def _problem_flags(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--scene-graph", required=True, help="scene graph JSON")
    p.add_argument("--equipment", help="equipment list CSV")
    p.add_argument("--ocr", help="OCR codes JSON")
    p.add_argument("--regulations", help="rulebook JSON (default: packaged)")
    p.add_argument("--model", help="plausibility model JSON (default: fitted packaged registry)")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    if out:
        p.add_argument("--out", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plantstruct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("reconstruct", help="fuse evidence and anneal a hierarchy")
    _problem_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("oracle", help="exhaustive search (small instances only)")
    _problem_flags(p)
    p.set_defaults(func=lambda a: cmd_reconstruct(a, exact=True))

    p = sub.add_parser("fuse", help="write the fused scene graph")
    _problem_flags(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("fit-model", help="fit the plausibility model on a registry")
    p.add_argument("--registry", help="registry CSV (default: packaged)")
    p.add_argument("--vocab", help="vocabulary JSON (default: packaged)")
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_model)

    for name, helptext in (("synth", "sample one ground-truth plant and its documents"),
                           ("bench", "noise sweep over sampled plants")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model")
        p.add_argument("--regulations")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--identifiable", action="store_true",
                       help="reject plants whose lines share a section class")
        if name == "synth":
            p.add_argument("--noise", type=float, default=0.0, help="class-probability noise")
            p.add_argument("--p-edge-flip", type=float, default=0.0)
            p.add_argument("--out-dir", required=True)
            p.set_defaults(func=cmd_synth)
        else:
            p.add_argument("--config")
            p.add_argument("--noise", default="0,0.1,0.3,1.0",
                           help="comma-separated noise levels")
            p.add_argument("--instances", type=int, default=20)
            p.add_argument("--with-documents", action="store_true",
                           help="also fuse synthetic equipment lists")
            p.add_argument("--out")
            p.set_defaults(func=cmd_bench)

    p = sub.add_parser("egrtr-demo", help="seeded relation-head forward pass and gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--d-model", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--state-out", help="write the seeded head state JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_egrtr_demo)

    p = sub.add_parser("validate", help="check a structure file against a scene graph")
    p.add_argument("--structure", required=True)
    p.add_argument("--scene-graph", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantBreach, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
