"""Authenticated mixed plaintext/ciphertext model containers.

Layout (all integers little-endian):

    magic  8B   b"TTSEAL\\x01\\x00"
    u32    manifest length, then manifest JSON (sorted keys): layer
           topology, class count, record count, plan fingerprint
    record x N, in model block order:
        u16 token length + utf-8 token ("2:core1", "0:weight", ...)
        u8  flags (bit 0: encrypted)
        u8  ndim, then ndim x u32 dims
        12B nonce            (present iff encrypted)
        u64 payload length + payload bytes
    footer: 12B nonce + 16B tag

Plain payloads are raw 32-bit little-endian reals; parameters are
narrowed to 32 bits once at seal time so round trips are bit-exact.
Encrypted payloads are AES-256-GCM ciphertext+tag with the magic and
record token as associated data; the footer authenticates the SHA-256
of every preceding byte, so any single flipped byte anywhere in the
container fails authentication.  Nonces are drawn from a seeded stream
and checked unique, making containers byte-deterministic given
(model, plan, key, seed).
"""
from __future__ import annotations

import io
import json
import os
import struct
import time
from dataclasses import dataclass, field
from hashlib import sha256

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .nnet import (
    Model,
    ParamKey,
    mandatory_block_keys,
    model_from_manifest,
    model_manifest,
    parse_param_key,
    reinit_blocks,
)
from .rngutil import derive_rng
from .selector import EncryptionPlan

MAGIC = b"TTSEAL\x01\x00"
NONCE_BYTES = 12
TAG_BYTES = 16
KEY_BYTES = 32
KEY_ENV_VAR = "TTSEAL_KEY"
TIMING_HEADER = ["category", "bytes", "median_ns", "ratio"]


class SealFormatError(Exception):
    """Container bytes do not parse as this format/version."""


class AuthenticationError(Exception):
    """Authenticated decryption failed: tampered bytes or wrong key."""


@dataclass(frozen=True)
class KeyMaterial:
    """256-bit symmetric key; the key itself never enters a container."""

    key: bytes = field(repr=False)
    key_id: str = field(init=False)

    def __post_init__(self) -> None:
        if not isinstance(self.key, bytes) or len(self.key) != KEY_BYTES:
            raise ValueError(f"key must be exactly {KEY_BYTES} bytes")
        object.__setattr__(self, "key_id", sha256(self.key).hexdigest()[:16])

    @classmethod
    def from_hex(cls, text: str) -> "KeyMaterial":
        text = text.strip()
        if len(text) != 2 * KEY_BYTES:
            raise ValueError(f"hex key must be {2 * KEY_BYTES} characters")
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise ValueError(f"invalid hex key: {exc}") from None

    @classmethod
    def load(cls, path: str) -> "KeyMaterial":
        """Key file: either 32 raw bytes or 64 hex characters."""
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == KEY_BYTES:
            return cls(raw)
        try:
            return cls.from_hex(raw.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            raise ValueError(
                f"{path}: expected {KEY_BYTES} raw bytes or {2 * KEY_BYTES} hex characters"
            ) from None

    @classmethod
    def from_env(cls, var: str = KEY_ENV_VAR) -> "KeyMaterial":
        value = os.environ.get(var)
        if not value:
            raise ValueError(f"environment variable {var} is not set")
        return cls.from_hex(value)

    @classmethod
    def generate(cls) -> "KeyMaterial":
        return cls(os.urandom(KEY_BYTES))


@dataclass(frozen=True)
class RecordInfo:
    token: str
    encrypted: bool
    shape: tuple[int, ...]
    param_bytes: int  # 32-bit payload size (excluding any AEAD tag)


@dataclass(frozen=True)
class ContainerSummary:
    records: tuple[RecordInfo, ...]
    plan_fingerprint: str
    encrypted_param_bytes: int
    plain_param_bytes: int

    @property
    def total_param_bytes(self) -> int:
        return self.encrypted_param_bytes + self.plain_param_bytes

    @property
    def encrypted_byte_ratio(self) -> float:
        return self.encrypted_param_bytes / self.total_param_bytes

    def encrypted_tokens(self) -> set[str]:
        return {r.token for r in self.records if r.encrypted}


@dataclass(frozen=True)
class TimingReport:
    """Median wall-clock decryption costs, nanoseconds, >= 10 repetitions."""

    t_selective_ns: int   # decrypt only this container's encrypted records
    t_full_ns: int        # decrypt the all-encrypted variant of the same model
    t_inference_ns: int   # selective decrypt + model assembly + forward pass
    encrypted_bytes: int
    total_bytes: int
    repetitions: int

    @property
    def selective_over_full(self) -> float:
        return self.t_selective_ns / self.t_full_ns

    @property
    def selective_over_inference(self) -> float:
        return self.t_selective_ns / self.t_inference_ns

    @property
    def encrypted_byte_ratio(self) -> float:
        return self.encrypted_bytes / self.total_bytes


def quantize_model(model: Model) -> Model:
    """Narrow every parameter block to 32-bit and back (seal-time precision)."""
    out = model.copy()
    for key, arr in out.param_items():
        out.set_block(key, arr.astype(np.float32).astype(np.float64))
    return out


def _encrypted_keys(model: Model, plan: EncryptionPlan | None, full: bool) -> set[ParamKey]:
    all_keys = {key for key, _ in model.param_items()}
    if full:
        return all_keys
    keys = set(mandatory_block_keys(model))
    if plan is not None:
        unknown = set(plan.selected) - all_keys
        if unknown:
            raise ValueError(f"plan names unknown cores: {sorted(k.token() for k in unknown)}")
        keys |= set(plan.selected)
    return keys


def plan_fingerprint(plan: EncryptionPlan | None, full: bool) -> str:
    if full:
        return "full"
    if plan is None:
        return "empty"
    desc = json.dumps({
        "selected": sorted(k.token() for k in plan.selected),
        "threshold_scaled": plan.threshold_scaled,
        "scale": repr(plan.scale),
    }, sort_keys=True)
    return sha256(desc.encode("utf-8")).hexdigest()[:16]


def seal(
    model: Model,
    plan: EncryptionPlan | None,
    key: KeyMaterial,
    rng_seed: int = 0,
    full: bool = False,
) -> bytes:
    """Serialize with the plan's cores plus the first/last layers encrypted.

    `plan=None` seals only the mandatory blocks; `full=True` encrypts
    everything.  Output is byte-deterministic given (model, plan, key,
    rng_seed).
    """
    enc_keys = _encrypted_keys(model, plan, full)
    quant = quantize_model(model)
    aead = AESGCM(key.key)
    rng = derive_rng(rng_seed, "nonce", key.key_id)
    manifest = dict(model_manifest(quant))
    manifest["plan_fingerprint"] = plan_fingerprint(plan, full)
    manifest["record_count"] = len(list(quant.param_items()))
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(mbytes)))
    buf.write(mbytes)
    seen_nonces: set[bytes] = set()
    for key_obj, arr in quant.param_items():
        token = key_obj.token().encode("utf-8")
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        encrypted = key_obj in enc_keys
        buf.write(struct.pack("<H", len(token)))
        buf.write(token)
        buf.write(struct.pack("<B", 1 if encrypted else 0))
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        if encrypted:
            nonce = rng.bytes(NONCE_BYTES)
            if nonce in seen_nonces:
                raise AssertionError("duplicate nonce drawn within a container")
            seen_nonces.add(nonce)
            buf.write(nonce)
            payload = aead.encrypt(nonce, payload, MAGIC + token)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)

    body = buf.getvalue()
    footer_nonce = rng.bytes(NONCE_BYTES)
    if footer_nonce in seen_nonces:
        raise AssertionError("duplicate nonce drawn within a container")
    footer = aead.encrypt(footer_nonce, b"", sha256(body).digest())
    return body + footer_nonce + footer


@dataclass(frozen=True)
class _Parsed:
    manifest: dict
    records: tuple[tuple[str, bool, tuple[int, ...], bytes | None, bytes], ...]
    body: bytes
    footer_nonce: bytes
    footer: bytes


def _parse(blob: bytes) -> _Parsed:
    if len(blob) < len(MAGIC) or blob[:6] != MAGIC[:6]:
        raise SealFormatError("not a sealed container (bad magic)")
    if blob[: len(MAGIC)] != MAGIC:
        raise SealFormatError(
            f"unsupported container version {blob[6:8].hex()} (expected {MAGIC[6:8].hex()})"
        )
    off = len(MAGIC)
    try:
        (mlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        manifest = json.loads(blob[off:off + mlen].decode("utf-8"))
        off += mlen
        records = []
        for _ in range(int(manifest["record_count"])):
            (tlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            token = blob[off:off + tlen].decode("utf-8")
            off += tlen
            (flags,) = struct.unpack_from("<B", blob, off)
            off += 1
            if flags not in (0, 1):
                raise SealFormatError(f"record {token}: unknown flags {flags:#x}")
            encrypted = bool(flags & 1)
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            nonce = None
            if encrypted:
                nonce = blob[off:off + NONCE_BYTES]
                if len(nonce) != NONCE_BYTES:
                    raise SealFormatError(f"record {token}: truncated nonce")
                off += NONCE_BYTES
            (plen,) = struct.unpack_from("<Q", blob, off)
            off += 8
            payload = blob[off:off + plen]
            if len(payload) != plen:
                raise SealFormatError(f"record {token}: truncated payload")
            off += plen
            records.append((token, encrypted, tuple(map(int, shape)), nonce, payload))
    except (struct.error, UnicodeDecodeError, KeyError, ValueError) as exc:
        if isinstance(exc, SealFormatError):
            raise
        raise SealFormatError(f"malformed container: {exc}") from None
    body, tail = blob[:off], blob[off:]
    if len(tail) != NONCE_BYTES + TAG_BYTES:
        raise SealFormatError(f"bad footer length {len(tail)}")
    return _Parsed(
        manifest=manifest,
        records=tuple(records),
        body=body,
        footer_nonce=tail[:NONCE_BYTES],
        footer=tail[NONCE_BYTES:],
    )


def _verify_footer(parsed: _Parsed, aead: AESGCM) -> None:
    try:
        aead.decrypt(parsed.footer_nonce, parsed.footer, sha256(parsed.body).digest())
    except InvalidTag:
        raise AuthenticationError(
            "container failed authentication (tampered bytes or wrong key)"
        ) from None


def _decrypt_record(
    aead: AESGCM, token: str, nonce: bytes, payload: bytes
) -> bytes:
    try:
        return aead.decrypt(nonce, payload, MAGIC + token.encode("utf-8"))
    except InvalidTag:
        raise AuthenticationError(
            f"record {token} failed authentication (tampered bytes or wrong key)"
        ) from None


def _block_from_payload(token: str, shape: tuple[int, ...], raw: bytes) -> np.ndarray:
    expect = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
    if len(raw) != expect:
        raise SealFormatError(f"record {token}: payload {len(raw)}B, expected {expect}B")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def unseal(blob: bytes, key: KeyMaterial) -> Model:
    """Authenticate the whole container, decrypt, rebuild the model."""
    parsed = _parse(blob)
    aead = AESGCM(key.key)
    _verify_footer(parsed, aead)
    blocks: dict[str, np.ndarray] = {}
    for token, encrypted, shape, nonce, payload in parsed.records:
        raw = _decrypt_record(aead, token, nonce, payload) if encrypted else payload
        blocks[token] = _block_from_payload(token, shape, raw)
    return model_from_manifest(parsed.manifest, blocks)


def attacker_view(blob: bytes, rng_seed: int = 0) -> Model:
    """Keyless view: plaintext blocks verbatim, encrypted ones re-drawn.

    This is the substitute's starting point; determinism follows the
    same per-block scheme as fresh initialization.
    """
    parsed = _parse(blob)
    blocks: dict[str, np.ndarray] = {}
    hidden: set[ParamKey] = set()
    for token, encrypted, shape, _nonce, payload in parsed.records:
        if encrypted:
            blocks[token] = np.zeros(shape)
            hidden.add(parse_param_key(token))
        else:
            blocks[token] = _block_from_payload(token, shape, payload)
    model = model_from_manifest(parsed.manifest, blocks)
    return reinit_blocks(model, hidden, rng_seed)


def summarize(blob: bytes) -> ContainerSummary:
    """Keyless byte accounting: what is exposed and what is sealed."""
    parsed = _parse(blob)
    records = []
    enc_total = plain_total = 0
    for token, encrypted, shape, _nonce, payload in parsed.records:
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        records.append(RecordInfo(token, encrypted, shape, nbytes))
        if encrypted:
            enc_total += nbytes
        else:
            plain_total += nbytes
    return ContainerSummary(
        records=tuple(records),
        plan_fingerprint=str(parsed.manifest.get("plan_fingerprint", "")),
        encrypted_param_bytes=enc_total,
        plain_param_bytes=plain_total,
    )


def _median_ns(fn, repetitions: int) -> int:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times))


def bench_decrypt(
    blob: bytes,
    key: KeyMaterial,
    eval_X: np.ndarray,
    repetitions: int = 10,
) -> TimingReport:
    """Median decryption costs for this container vs. its all-encrypted twin.

    Selective: decrypt exactly the encrypted records.  Full: decrypt
    every record of a full-encryption container of the same model.
    Inference: selective decrypt, rebuild the model, forward the batch.
    """
    from .nnet import forward  # local import keeps module load light

    if repetitions < 10:
        raise ValueError("repetitions must be >= 10 for stable medians")
    parsed = _parse(blob)
    aead = AESGCM(key.key)
    _verify_footer(parsed, aead)
    model = unseal(blob, key)
    full_blob = seal(model, None, key, rng_seed=derive_rng(0, "bench").integers(1 << 62), full=True)
    full_parsed = _parse(full_blob)
    X = np.atleast_2d(np.asarray(eval_X, dtype=np.float64))

    enc_records = [r for r in parsed.records if r[1]]
    full_records = [r for r in full_parsed.records if r[1]]

    def decrypt_all(records) -> None:
        for token, _enc, _shape, nonce, payload in records:
            _decrypt_record(aead, token, nonce, payload)

    def selective_infer() -> None:
        blocks = {}
        for token, encrypted, shape, nonce, payload in parsed.records:
            raw = _decrypt_record(aead, token, nonce, payload) if encrypted else payload
            blocks[token] = _block_from_payload(token, shape, raw)
        m = model_from_manifest(parsed.manifest, blocks)
        forward(m, X)

    summary = summarize(blob)
    return TimingReport(
        t_selective_ns=_median_ns(lambda: decrypt_all(enc_records), repetitions),
        t_full_ns=_median_ns(lambda: decrypt_all(full_records), repetitions),
        t_inference_ns=_median_ns(selective_infer, repetitions),
        encrypted_bytes=summary.encrypted_param_bytes,
        total_bytes=summary.total_param_bytes,
        repetitions=repetitions,
    )


def write_timing_csv(reports: dict[str, TimingReport], path: str) -> None:
    """`category,bytes,median_ns,ratio` rows, one block of three per report.

    Categories: selective (ratio vs. full), full (ratio 1), inference
    (selective share of end-to-end inference).
    """
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_HEADER)
        for name, rep in reports.items():
            prefix = f"{name}:" if name else ""
            w.writerow([f"{prefix}selective", rep.encrypted_bytes,
                        rep.t_selective_ns, repr(rep.selective_over_full)])
            w.writerow([f"{prefix}full", rep.total_bytes, rep.t_full_ns, repr(1.0)])
            w.writerow([f"{prefix}inference", rep.total_bytes,
                        rep.t_inference_ns, repr(rep.selective_over_inference)])
