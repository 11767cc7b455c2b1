"""Command-line front end: keygen, craft, decode, unicast, simulate, range.

Exit codes: 0 success, 2 usage, 3 integrity (CRC) failure, 4 protocol
failure.
"""

from __future__ import annotations

import argparse
import os
import random
import secrets
import sys
import time
from pathlib import Path

from . import bitcodec as bc
from .authproto import KeyRole
from .channelsim import ScenarioError, load_scenario, run_scenario, write_metrics, write_trace
from .cipher import LONGTERM_KEY_BYTES, RC5_16_255_255, rc5_decrypt_block, rc5_encrypt_block
from .keystore import DuplicateKey, KeyStore, KeystoreError, LongTermKeyRecord, parse_iso
from .ranging import RangingError, estimate_distance
from .unicast import (UNICAST_APP_TYPE, AmbiguousSender, NotAddressed, UnicastError,
                      receive_unicast, send_unicast)

STORE_ENV = "JANUSAUTH_STORE"

EXIT_OK, EXIT_USAGE, EXIT_INTEGRITY, EXIT_PROTOCOL = 0, 2, 3, 4

FLAG_MEANING = {
    (1, 0): ("challenge (message 1)", KeyRole.LONGTERM),
    (1, 1): ("response (message 2)", KeyRole.LONGTERM),
    (0, 1): ("session traffic (message 3+)", KeyRole.SESSION),
    (0, 0): ("wide-area transmission", KeyRole.BY_MMSI),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def emit(rows, fmt: str, out=None):
    out = out or sys.stdout
    rows = [(str(k), str(v)) for k, v in rows]
    if fmt == "tsv":
        for k, v in rows:
            print(f"{k}\t{v}", file=out)
        return
    width = max((len(k) for k, _ in rows), default=0)
    for k, v in rows:
        print(f"{k:<{width}}  {v}", file=out)


def _store_path(args) -> Path:
    path = args.store or os.environ.get(STORE_ENV)
    if not path:
        raise CliError(f"no keystore given (use --store or ${STORE_ENV})")
    return Path(path)


def _load_store(args) -> KeyStore:
    try:
        return KeyStore.load(_store_path(args))
    except KeystoreError as exc:
        raise CliError(str(exc)) from exc


def _mmsi(text: str) -> int:
    try:
        return bc.mmsi_to_bits(text.zfill(9))
    except bc.CodecError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _hexbytes(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not hex") from None


# --- keygen -------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    path = _store_path(args)
    store = _load_store(args)
    if args.seed is not None:
        key = random.Random(args.seed).randbytes(LONGTERM_KEY_BYTES)
    else:
        key = secrets.token_bytes(LONGTERM_KEY_BYTES)
    epoch = parse_iso(args.epoch) if args.epoch else time.time()
    rec = LongTermKeyRecord(args.class_id, args.app_type, key, epoch, args.lifetime_days, args.peer)
    try:
        store.add_longterm(rec, replace=args.force)
    except DuplicateKey as exc:
        raise CliError(f"{exc}; use --force to replace") from exc
    except KeystoreError as exc:
        raise CliError(str(exc)) from exc
    try:
        store.save(path)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc
    print(key.hex())
    return EXIT_OK


# --- craft / decode -------------------------------------------------------------------


def _header_kwargs(args) -> dict:
    return dict(version=args.version, mobility=args.mobility, txrx=args.txrx, forward=args.forward,
                class_user_id=args.class_id, application_type=args.app_type)


def cmd_craft(args) -> int:
    try:
        if args.unicast:
            pkt = bc.UnicastPacket(routing_id=args.routing_id, encrypted_payload=int(args.payload, 16),
                                   hmac=args.hmac, syn=args.syn, ack=args.ack, **_header_kwargs(args))
            print(bc.encode_unicast(pkt).hex())
            return EXIT_OK
        if args.adb is not None:
            adb = int(args.adb, 16)
        else:
            block = args.block
            if args.timestamp_ms is not None or args.time is not None:
                ts = args.timestamp_ms if args.timestamp_ms is not None else bc.timestamp_from_posix(parse_iso(args.time))
                block = bc.pack_timestamp_block(ts, args.cd)
            if args.store or os.environ.get(STORE_ENV):
                store = _load_store(args)
                rec = store.longterm.get((args.class_id, args.app_type))
                if rec is None:
                    raise CliError(f"no key in slot ({args.class_id}, {args.app_type})")
                block = rc5_encrypt_block(RC5_16_255_255, rec.key, block)
            adb = bc.AuthAdb(block, args.syn, args.ack).to_adb()
        pkt = bc.BaselinePacket(schedule=args.schedule, adb=adb, **_header_kwargs(args))
        print(bc.encode_baseline(pkt).hex())
    except (bc.CodecError, ValueError) as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError(str(exc)) from exc
    return EXIT_OK


def _header_rows(p) -> list:
    return [("version", p.version), ("mobility", p.mobility), ("schedule", p.schedule),
            ("txrx", p.txrx), ("forward", p.forward), ("class_user_id", p.class_user_id),
            ("application_type", p.application_type)]


def cmd_decode(args) -> int:
    text = args.hex.strip().lower()
    try:
        data = bytes.fromhex(text)
    except ValueError:
        raise CliError("input is not hex") from None
    code = EXIT_OK
    rows = []
    if len(text) == 16:
        crc_ok = True
        try:
            pkt = bc.decode_baseline(data)
        except bc.IntegrityError:
            crc_ok = False
            pkt = bc.decode_baseline(data, verify=False)
            code = EXIT_INTEGRITY
            print("warning: CRC mismatch, fields shown raw", file=sys.stderr)
        auth = pkt.auth
        meaning, role = FLAG_MEANING[(auth.syn, auth.ack)]
        rows += [("kind", "baseline"), *_header_rows(pkt), ("adb", f"{pkt.adb:09x}"),
                 ("encrypted_block", f"{auth.encrypted_block:08x}"), ("syn", auth.syn), ("ack", auth.ack),
                 ("crc", f"{data[-1]:02x}"), ("crc_valid", crc_ok), ("flags", meaning), ("key", role.value)]
        if args.store or os.environ.get(STORE_ENV):
            rows += _trial_rows(_load_store(args), pkt)
    elif len(text) == 36:
        try:
            u = bc.decode_unicast(data)
            rows += [("kind", "unicast"), *_header_rows(u), ("cargo_len", u.cargo_len),
                     ("routing_id", f"{u.routing_id:06x}"), ("syn", u.syn), ("ack", u.ack),
                     ("encrypted_payload", f"{u.encrypted_payload:016x}"), ("hmac", f"{u.hmac:02x}"),
                     ("crc_valid", True)]
        except bc.IntegrityError as exc:
            code = EXIT_INTEGRITY
            print(f"warning: {exc}, fields shown raw", file=sys.stderr)
            word = int.from_bytes(data, "big")
            rows += [("kind", "unicast"), ("header", f"{word >> 88:014x}"),
                     ("header_crc", f"{data[7]:02x}"), ("encrypted_payload", data[8:16].hex()),
                     ("hmac", f"{data[16]:02x}"), ("trailer_crc", f"{data[17]:02x}"), ("crc_valid", False)]
        except bc.CodecError as exc:
            raise CliError(str(exc)) from exc
    else:
        raise CliError(f"expected 16 or 36 hex characters, got {len(text)}")
    emit(rows, args.format)
    return code


def _trial_rows(store: KeyStore, pkt: bc.BaselinePacket) -> list:
    rows = []
    slot = (pkt.class_user_id, pkt.application_type)
    records = [store.longterm[slot]] if slot in store.longterm else list(store.longterm.values())
    for rec in records:
        ts, cd = bc.unpack_timestamp_block(rc5_decrypt_block(RC5_16_255_255, rec.key, pkt.auth.encrypted_block))
        label = f"trial[{rec.class_user_id},{rec.application_type}]"
        if ts >= bc.TIMESTAMP_WINDOW_MS:
            rows.append((label, "illegal timestamp"))
            continue
        day, ms = bc.decode_timestamp(ts)
        rows += [(f"{label}.timestamp", ts), (f"{label}.window_day", day), (f"{label}.ms_of_day", ms),
                 (f"{label}.clock_descriptor", cd)]
    if not records:
        rows.append(("trial", "keystore holds no long-term keys"))
    return rows


# --- unicast --------------------------------------------------------------------------


def cmd_unicast_send(args) -> int:
    store = _load_store(args)
    try:
        payload = int(args.payload, 16)
        pkt = send_unicast(store, args.dest, payload, args.class_id, args.app_type)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    except UnicastError as exc:
        raise CliError(str(exc), EXIT_PROTOCOL) from exc
    store.save(_store_path(args))
    print(bc.encode_unicast(pkt).hex())
    return EXIT_OK


def cmd_unicast_recv(args) -> int:
    store = _load_store(args)
    try:
        pkt = bc.decode_unicast(bytes.fromhex(args.hex))
    except bc.IntegrityError as exc:
        raise CliError(str(exc), EXIT_INTEGRITY) from exc
    except (bc.CodecError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    try:
        got = receive_unicast(store, pkt, args.own)
    except AmbiguousSender as exc:
        names = ",".join(bc.bits_to_mmsi(c) for c in exc.candidates)
        raise CliError(f"ambiguous sender: {names}", EXIT_PROTOCOL) from exc
    except NotAddressed as exc:
        raise CliError(f"{exc} (relay candidate)", EXIT_PROTOCOL) from exc
    except UnicastError as exc:
        raise CliError(str(exc), EXIT_PROTOCOL) from exc
    store.save(_store_path(args))
    emit([("sender_mmsi", bc.bits_to_mmsi(got.sender_mmsi)), ("payload", f"{got.payload:016x}")], args.format)
    return EXIT_OK


# --- simulate / range -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        raise CliError(str(exc)) from exc
    if args.seed is not None:
        scenario.sea.seed = args.seed
    result = run_scenario(scenario)
    if args.trace:
        write_trace(result, args.trace)
    if args.metrics:
        write_metrics(result, args.metrics)
    if args.figures:
        from .report import plot_sequence

        out = Path(args.figures)
        out.mkdir(parents=True, exist_ok=True)
        plot_sequence(result, out / "sequence.png", title=Path(args.scenario).stem)
    emit(result.metrics.rows(), args.format)
    return EXIT_OK


def cmd_range(args) -> int:
    try:
        est = estimate_distance(args.t_a1, args.t_b1, args.t_a2, args.sound_speed, args.current)
    except RangingError as exc:
        raise CliError(f"invalid-ordering: {exc}") from exc
    emit([("distance_m", f"{est.distance_m:.3f}"), ("clock_offset_s", f"{est.clock_offset_s:.6f}"),
          ("round_trip_s", f"{est.round_trip_s:.6f}"),
          ("quantization_bound_m", f"{est.quantization_bound_m:.3f}")], args.format)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("table", "tsv"), default="table")
    store = argparse.ArgumentParser(add_help=False)
    store.add_argument("--store", help=f"keystore file (default ${STORE_ENV})")

    p = argparse.ArgumentParser(prog="janusauth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", parents=[store], help="generate a 2040-bit long-term key")
    k.add_argument("--class-id", type=int, required=True)
    k.add_argument("--app-type", type=int, required=True)
    k.add_argument("--seed", type=int)
    k.add_argument("--peer", type=_mmsi, help="MMSI of the device this key identifies")
    k.add_argument("--lifetime-days", type=int, default=60)
    k.add_argument("--epoch", help="issuance time, ISO 8601 (default now)")
    k.add_argument("--force", action="store_true")
    k.set_defaults(func=cmd_keygen)

    c = sub.add_parser("craft", parents=[store], help="build a packet and print its hex")
    for name, default in (("version", 3), ("mobility", 0), ("schedule", 0), ("txrx", 1), ("forward", 0),
                          ("class-id", 0), ("app-type", 1), ("syn", 1), ("ack", 0), ("block", 0), ("cd", 0),
                          ("routing-id", 0), ("hmac", 0)):
        c.add_argument(f"--{name}", type=int, default=default)
    c.add_argument("--adb", help="raw 34-bit ADB in hex")
    c.add_argument("--timestamp-ms", type=int, help="29-bit timestamp to place in the block")
    c.add_argument("--time", help="absolute time (ISO 8601) to encode as the timestamp")
    c.add_argument("--unicast", action="store_true")
    c.add_argument("--payload", default="0", help="64-bit encrypted payload in hex (unicast)")
    c.set_defaults(func=cmd_craft)

    d = sub.add_parser("decode", parents=[store, fmt], help="print the fields of a hex packet")
    d.add_argument("hex")
    d.set_defaults(func=cmd_decode)

    u = sub.add_parser("unicast", help="secure unicast messaging")
    usub = u.add_subparsers(dest="action", required=True)
    us = usub.add_parser("send", parents=[store])
    us.add_argument("--dest", type=_mmsi, required=True)
    us.add_argument("--payload", required=True, help="64-bit payload in hex")
    us.add_argument("--class-id", type=int, default=0)
    us.add_argument("--app-type", type=int, default=UNICAST_APP_TYPE)
    us.set_defaults(func=cmd_unicast_send)
    ur = usub.add_parser("recv", parents=[store, fmt])
    ur.add_argument("--own", type=_mmsi, required=True)
    ur.add_argument("hex")
    ur.set_defaults(func=cmd_unicast_recv)

    s = sub.add_parser("simulate", parents=[fmt], help="run a channel scenario")
    s.add_argument("scenario")
    s.add_argument("--trace")
    s.add_argument("--metrics")
    s.add_argument("--figures", help="directory for rendered figures")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("range", parents=[fmt], help="distance from three timestamps (seconds)")
    r.add_argument("t_a1", type=float)
    r.add_argument("t_b1", type=float)
    r.add_argument("t_a2", type=float)
    r.add_argument("--sound-speed", type=float, default=1500.0)
    r.add_argument("--current", type=float)
    r.set_defaults(func=cmd_range)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
