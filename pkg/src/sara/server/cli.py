"""Command line front door for the session server."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading

from sara.errors import SaraError
from sara.server.service import CommunicationService, ServerConfig

log = logging.getLogger("sara.server")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sara-server",
        description="Authoritative collaborative-session server.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--tcp-port", type=int, default=7400)
    parser.add_argument("--ws-port", type=int, default=7401)
    parser.add_argument("--udp-port", type=int, default=7402)
    parser.add_argument("--mqtt-url", default=None,
                        help="external broker, e.g. mqtt://127.0.0.1:1883")
    parser.add_argument("--snapshot-dir", default=None)
    parser.add_argument("--users-db", default=None)
    parser.add_argument("--session-config", default=None,
                        help="JSON file: models, conflict settings, alignment")
    parser.add_argument("--conflict-window-ms", type=int, default=100)
    parser.add_argument("--conflict-strategy", default="LAST_WRITER_WINS")
    parser.add_argument("--gesture-table", default=None)
    parser.add_argument("--no-auto-create-sessions", action="store_true")
    parser.add_argument("--require-auth", action="store_true")
    parser.add_argument("--snapshot-interval-s", type=float, default=30.0)
    parser.add_argument("--log-level", default="INFO")
    return parser


def config_from_args(args) -> ServerConfig:
    session_config: dict = {}
    if args.session_config:
        with open(args.session_config, encoding="utf-8") as fh:
            session_config = json.load(fh)
    return ServerConfig(
        host=args.host,
        tcp_port=args.tcp_port,
        ws_port=args.ws_port,
        udp_port=args.udp_port,
        mqtt_url=args.mqtt_url,
        snapshot_dir=args.snapshot_dir,
        users_db=args.users_db,
        session_config=session_config,
        conflict_window_ms=args.conflict_window_ms,
        conflict_strategy=args.conflict_strategy,
        auto_create_sessions=not args.no_auto_create_sessions,
        require_auth=args.require_auth,
        gesture_table_path=args.gesture_table,
        snapshot_interval_s=args.snapshot_interval_s,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        config = config_from_args(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read session config: {exc}", file=sys.stderr)
        return 2
    service = CommunicationService(config)
    try:
        service.start()
    except SaraError as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        return 2
    log.info("listening tcp=%d ws=%d udp=%d%s",
             service.tcp_port, service.ws_port, service.udp_port,
             f" mqtt={args.mqtt_url}" if args.mqtt_url else "")
    stop = threading.Event()

    def on_signal(_signum, _frame):
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    try:
        stop.wait()
    finally:
        service.stop()
        log.info("stopped")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
