"""Command-line client for the syncframe service.

By default each command talks to an in-process instance of the service over
an ASGI transport, so no server is needed; pass --server to target a running
one instead. `syncframe serve` starts the HTTP service.

Exit codes: 0 pass, 1 checker failure, 2 config error, 3 liveness timeout,
4 coverage failure, 5 replay divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import httpx

from .runner import EXIT_CONFIG_ERROR

SEED_ENV = "SYNCFRAME_SEED"


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # In-process bridge to the ASGI app; no listening socket involved.
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import app
    return TestClient(app)


def _post(args, path: str, payload: dict) -> dict:
    with _client(args.server) as client:
        resp = client.post(path, json=payload)
        if resp.status_code == 422:
            detail = resp.json().get("detail", resp.text)
            print(f"config error: {detail}", file=sys.stderr)
            sys.exit(EXIT_CONFIG_ERROR)
        resp.raise_for_status()
        return resp.json()


def cmd_simulate(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"config error: no such file {path}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        print(f"config error: line {exc.lineno} col {exc.colno}: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    seed_override = os.environ.get(SEED_ENV)
    if seed_override is not None:
        doc.setdefault("sim", {})["seed"] = int(seed_override)
    body = _post(args, "/simulate", {"config": doc})
    if body.get("error"):
        print(f"config error: {body['error']}", file=sys.stderr)
        return body["exit_code"]
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(body["files"].items()):
        (out_dir / name).write_text(text, "utf-8")
    for line in body["verdicts"]:
        print(line)
    print(f"digest {body['digest']}")
    if body["timed_out"] and body["unfinished"]:
        print(f"timeout with {body['unfinished']} unfinished operations", file=sys.stderr)
    return body["exit_code"]


def cmd_profile(args) -> int:
    body = _post(args, "/profile", {"mechanism": args.mechanism, "n": args.n, "seed": args.seed})
    if body.get("error"):
        print(body["error"], file=sys.stderr)
    if body.get("table"):
        print(body["table"])
        print()
        for rec in body["records"]:
            print(rec)
    if body["diffs"]:
        print("\ngolden-table mismatches:", file=sys.stderr)
        for d in body["diffs"]:
            print(f"  {d}", file=sys.stderr)
    elif not body.get("error"):
        print("\nmatches the golden table")
    return body["exit_code"]


def cmd_verify_limits(args) -> int:
    body = _post(args, "/verify-limits", {"n_max": args.n_max})
    for line in body["check_lines"]:
        print(line)
    if args.reports:
        for line in body["report_lines"]:
            print(line)
    print(f"disagreements: {body['disagreements']}")
    return body["exit_code"]


def cmd_replay(args) -> int:
    path = Path(args.trace)
    if not path.is_file():
        print(f"config error: no such file {path}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    body = _post(args, "/replay", {"trace": path.read_text("utf-8")})
    if body.get("error"):
        print(f"config error: {body['error']}", file=sys.stderr)
    elif body["exit_code"] == 0:
        print(f"replay identical: digest {body['actual_digest']}")
    else:
        print(f"replay diverged: {body['first_divergence']}", file=sys.stderr)
    return body["exit_code"]


def cmd_campaign(args) -> int:
    body = _post(args, "/campaign", {
        "mechanism": args.mechanism, "n": args.n, "f": args.f,
        "seeds": args.seeds, "jobs": args.jobs,
    })
    if body.get("error"):
        print(f"config error: {body['error']}", file=sys.stderr)
        return body["exit_code"]
    print(body["summary"])
    if args.verbose:
        for line in body["detail_lines"]:
            print(line)
    return body["exit_code"]


def cmd_serve(args) -> int:
    import uvicorn
    uvicorn.run("syncframe.service:app", host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="syncframe",
        description="simulate, check and analyze multi-writer synchronization mechanisms",
    )
    parser.add_argument("--server", default=None,
                        help="URL of a running syncframe service (default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configured simulation and its checkers")
    p.add_argument("config", help="path to a run-config JSON document")
    p.add_argument("--output-dir", default="out", help="where artifacts are written")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("profile", help="derive a mechanism's property row and diff vs golden")
    p.add_argument("mechanism")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("verify-limits", help="sweep the limit formulas against enumeration")
    p.add_argument("--n-max", type=int, required=True, dest="n_max")
    p.add_argument("--reports", action="store_true", help="also print every n|q|f report line")
    p.set_defaults(fn=cmd_verify_limits)

    p = sub.add_parser("replay", help="re-execute a trace file and compare digests")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("campaign", help="run an adversarial crash campaign")
    p.add_argument("mechanism")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_campaign)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
