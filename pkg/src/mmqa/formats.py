"""File formats: dataset JSON, binary features, binary checkpoints.

All writers are atomic (temp file + rename) and deterministic: the same
logical content always produces the same bytes, which is what makes the
reproducibility guarantees of the pipeline checkable with `cmp`.

Feature files:   magic "MMQA", version u8, u32 rows, u32 cols, float32 LE.
Checkpoint:      magic "MMCK", version u8, 32-byte config hash, u32 tensor
                 count, then per tensor (sorted by name): u16 name length,
                 name bytes, u8 rank, u32 extents, float64 LE payload.
Optimizer state lives under the reserved "__opt__/" name prefix and the
architecture scalars under "__cfg__/", so a checkpoint plus its ".vocab"
sidecar is enough to rebuild the model with no config file at hand.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .augment import Dialog
from .errors import FormatError, ValidationError
from .text import tokenize

__all__ = [
    "atomic_write_text",
    "atomic_write_bytes",
    "save_dataset",
    "load_dataset",
    "save_features",
    "load_features",
    "feature_path",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_from_model",
    "model_from_checkpoint",
    "save_scores",
    "load_scores",
    "save_answers",
]

FEATURE_MAGIC = b"MMQA"
CHECKPOINT_MAGIC = b"MMCK"
FORMAT_VERSION = 1

OPT_PREFIX = "__opt__/"
CFG_PREFIX = "__cfg__/"

_CELLS = ("gru", "lstm")
_POOLINGS = ("max", "average")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------- datasets

def _dialog_to_json(dialog: Dialog) -> dict:
    return {
        "video_id": dialog.video_id,
        "summary": " ".join(dialog.summary),
        "turns": [
            {"question": " ".join(q), "answer": " ".join(a)} for q, a in dialog.turns
        ],
    }


def save_dataset(path: str, dialogs) -> None:
    doc = {"dialogs": [_dialog_to_json(d) for d in dialogs]}
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _require(mapping: dict, key: str, kind, where: str):
    if key not in mapping:
        raise ValidationError(f"{where} is missing the {key!r} field")
    value = mapping[key]
    if not isinstance(value, kind):
        raise ValidationError(f"{where}: {key!r} must be {kind.__name__}")
    return value


def load_dataset(path: str) -> list:
    """Parse and validate a dialog dataset; order is preserved."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(
                f"cannot parse {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("dialogs"), list):
        raise FormatError(f"{path}: expected a top-level object with a 'dialogs' list")
    dialogs = []
    seen = set()
    for i, item in enumerate(doc["dialogs"]):
        if not isinstance(item, dict):
            raise ValidationError(f"{path}: dialog {i} is not an object")
        vid = _require(item, "video_id", str, f"dialog {i}")
        where = f"dialog {vid!r}"
        unknown = set(item) - {"video_id", "summary", "turns"}
        if unknown:
            raise ValidationError(f"{where} has unknown fields: {sorted(unknown)}")
        if vid in seen:
            raise ValidationError(f"duplicate video_id {vid!r}")
        seen.add(vid)
        summary = tokenize(_require(item, "summary", str, where))
        if not summary:
            raise ValidationError(f"{where} has an empty summary")
        raw_turns = _require(item, "turns", list, where)
        turns = []
        for j, turn in enumerate(raw_turns):
            if not isinstance(turn, dict) or set(turn) != {"question", "answer"}:
                raise ValidationError(
                    f"{where} turn {j} must be an object with question and answer"
                )
            q = tokenize(_require(turn, "question", str, f"{where} turn {j}"))
            a = tokenize(_require(turn, "answer", str, f"{where} turn {j}"))
            if not q or not a:
                raise ValidationError(f"{where} turn {j} has an empty question or answer")
            turns.append((q, a))
        dialogs.append(Dialog(video_id=vid, summary=summary, turns=turns))
    return dialogs


# ---------------------------------------------------------------- features

def save_features(path: str, matrix) -> None:
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"feature matrix must be 2-D and non-empty, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("feature matrix contains non-finite values")
    n, f = arr.shape
    header = FEATURE_MAGIC + struct.pack("<BII", FORMAT_VERSION, n, f)
    atomic_write_bytes(path, header + arr.astype("<f4").tobytes(order="C"))


def load_features(path: str) -> np.ndarray:
    """Read a feature file back as float64 (float32 payload widens exactly)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, n, f = struct.unpack("<BII", blob[4:13])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 13 + 4 * n * f
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob) - 13} bytes, expected {expected - 13}"
        )
    if n < 1 or f < 1:
        raise ValidationError(f"{path}: empty feature matrix ({n}x{f})")
    arr = np.frombuffer(blob[13:], dtype="<f4").reshape(n, f)
    if not np.isfinite(arr).all():
        raise ValidationError(f"{path}: feature matrix contains non-finite values")
    return arr.astype(np.float64)


def feature_path(features_dir: str, video_id: str, modality: str) -> str:
    """Features are keyed by the id before any '#' expansion suffix."""
    base = video_id.split("#")[0]
    return os.path.join(features_dir, f"{base}.{modality}.feat")


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path: str, tensors: dict, config_hash: bytes) -> None:
    if len(config_hash) != 32:
        raise ValidationError(f"config hash must be 32 bytes, got {len(config_hash)}")
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", FORMAT_VERSION), bytes(config_hash),
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.ndim not in (1, 2):
            raise ValidationError(f"tensor {name!r} has unsupported rank {arr.ndim}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValidationError(f"tensor name too long: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path: str):
    """Returns (tensors dict in file order, 32-byte config hash)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(count: int, what: str):
        nonlocal pos
        if pos + count > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = view[pos:pos + count]
        pos += count
        return chunk

    if bytes(take(4, "magic")) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version = take(1, "version")[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    config_hash = bytes(take(32, "config hash"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        rank = take(1, "rank")[0]
        if rank not in (1, 2):
            raise FormatError(f"{path}: tensor {name!r} has unsupported rank {rank}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        size = int(np.prod(shape))
        data = np.frombuffer(take(8 * size, f"payload of {name!r}"), dtype="<f8")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = data.reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return tensors, config_hash


def _cfg_scalar(value: float) -> np.ndarray:
    return np.asarray([float(value)], dtype=np.float64)


def checkpoint_from_model(model, optimizer=None) -> dict:
    """Flatten a model (and optionally Adam state) into named tensors."""
    out = {name: t.data for name, t in model.parameters().items()}
    d = model.width
    hidden = d // 2
    out[CFG_PREFIX + "embed_width"] = _cfg_scalar(model.embedding.width)
    out[CFG_PREFIX + "hidden_width"] = _cfg_scalar(hidden)
    out[CFG_PREFIX + "decoder_hidden"] = _cfg_scalar(model.decoder.hidden_width)
    out[CFG_PREFIX + "cell"] = _cfg_scalar(_CELLS.index(model.question_rnn.kind))
    out[CFG_PREFIX + "pooling"] = _cfg_scalar(_POOLINGS.index(model.pooling))
    out[CFG_PREFIX + "literal_decoder"] = _cfg_scalar(
        1.0 if model.decoder.layer1.literal_update else 0.0
    )
    out[CFG_PREFIX + "freeze_embeddings"] = _cfg_scalar(
        1.0 if model.freeze_embeddings else 0.0
    )
    out[CFG_PREFIX + "flow_width"] = _cfg_scalar(
        model.flow_rnn.input_width if model.flow_rnn else 0
    )
    out[CFG_PREFIX + "rgb_width"] = _cfg_scalar(
        model.rgb_rnn.input_width if model.rgb_rnn else 0
    )
    out[CFG_PREFIX + "audio_width"] = _cfg_scalar(
        model.audio_rnn.input_width if model.audio_rnn else 0
    )
    if optimizer is not None:
        out[OPT_PREFIX + "t"] = _cfg_scalar(optimizer.t)
        for name, m in optimizer.m.items():
            out[f"{OPT_PREFIX}m/{name}"] = m
        for name, v in optimizer.v.items():
            out[f"{OPT_PREFIX}v/{name}"] = v
    return out


def _cfg_int(tensors: dict, key: str, path: str) -> int:
    full = CFG_PREFIX + key
    if full not in tensors:
        raise FormatError(f"{path}: checkpoint lacks architecture field {key!r}")
    return int(tensors[full][0])


def model_from_checkpoint(path: str):
    """Rebuild a model from a checkpoint and its '<path>.vocab' sidecar.

    Returns (model, tensors, config_hash); `tensors` still holds the raw
    optimizer and architecture entries for callers that need them.
    """
    from .model import Model
    from .text import Vocabulary

    tensors, config_hash = load_checkpoint(path)
    vocab_path = path + ".vocab"
    if not os.path.exists(vocab_path):
        raise FormatError(f"missing vocabulary sidecar {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    model = Model.create(
        np.random.default_rng(0),
        vocab,
        embed_width=_cfg_int(tensors, "embed_width", path),
        hidden_width=_cfg_int(tensors, "hidden_width", path),
        decoder_hidden=_cfg_int(tensors, "decoder_hidden", path),
        cell=_CELLS[_cfg_int(tensors, "cell", path)],
        pooling=_POOLINGS[_cfg_int(tensors, "pooling", path)],
        literal_decoder=bool(_cfg_int(tensors, "literal_decoder", path)),
        freeze_embeddings=bool(_cfg_int(tensors, "freeze_embeddings", path)),
        flow_width=_cfg_int(tensors, "flow_width", path),
        rgb_width=_cfg_int(tensors, "rgb_width", path),
        audio_width=_cfg_int(tensors, "audio_width", path),
    )
    params = model.parameters()
    for name, tensor in params.items():
        if name not in tensors:
            raise ValidationError(f"{path}: checkpoint lacks parameter {name!r}")
        value = tensors[name]
        if value.shape != tensor.data.shape:
            if name == "embedding.matrix":
                raise ValidationError(
                    f"vocabulary mismatch: checkpoint embedding is {value.shape}, "
                    f"sidecar vocabulary implies {tensor.data.shape}"
                )
            raise ValidationError(
                f"{path}: parameter {name!r} is {value.shape}, expected {tensor.data.shape}"
            )
        tensor.data[...] = value
    extras = [n for n in tensors
              if n not in params and not n.startswith((OPT_PREFIX, CFG_PREFIX))]
    if extras:
        raise ValidationError(f"{path}: unknown tensors {sorted(extras)[:5]}")
    return model, tensors, config_hash


# ------------------------------------------------------------ small outputs

def save_scores(path: str, scores: dict) -> None:
    """One 'name<TAB>value' line per metric, in the given order."""
    lines = [f"{name}\t{float(value)!r}\n" for name, value in scores.items()]
    atomic_write_text(path, "".join(lines))


def load_scores(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            if not line:
                continue
            name, _, value = line.partition("\t")
            out[name] = float(value)
    return out


def save_answers(path: str, answers) -> None:
    """One generated answer per line, tokens space-joined."""
    atomic_write_text(path, "".join(" ".join(tokens) + "\n" for tokens in answers))
