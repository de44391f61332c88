"""Portable weight containers, vocabularies, and utterance manifests.

Container format (``.cont``)
----------------------------
Fixed little-endian layout, designed so any training ecosystem can write
it with a few lines of code:

====================  =======================================================
bytes 0..3            magic ``ILMC``
bytes 4..7            uint32 format version (currently 1)
bytes 8..15           uint64 header length in bytes
header                UTF-8 JSON, compact separators, sorted keys
padding               zero bytes up to the next 64-byte file offset
payload               tensor data, concatenated in header order: row-major
                      (C order) little-endian float32
trailer               uint64 checksum: first 8 bytes of SHA-256(payload)
====================  =======================================================

The header object holds ``kind`` (rnnt | aed | lm | features), ``dtype``
(always "float32"), ``hyperparams`` (see below), ``vocab`` (null for
feature containers) and ``tensors``, a list of ``{"name", "shape"}``
records sorted by name; the payload follows that order, which makes two
saves of equal containers byte-identical.

Fused LSTM weight blocks stack the four gates as (input, forget, cell,
output) along the row axis; a single bias vector carries the sum of any
input/recurrent bias pair the trainer used.

Tensor names by kind (L = layer index from 0):

* rnnt: ``enc.l{L}.{w_x,w_h,b}``, ``enc.l{L}.ln.{g,b}``,
  ``enc.l{L}.proj.{w,b}``; ``pred.embed``, ``pred.l{L}.*`` (same shape
  family as enc); ``joint.{W_e,b_e,W_p,b_p,W_j,b_j}``.  Hyperparams:
  feat_dim, enc_layers, enc_hidden, enc_proj, embed_dim, pred_layers,
  pred_hidden, pred_proj, joint_dim, activation ("tanh" | "relu").
  ``joint.W_j`` has |V|+1 rows; the last row is the blank logit.
* aed: ``enc.l{L}.{fwd,bwd}.{w_x,w_h,b}``, ``enc.l{L}.proj.{w,b}``,
  ``enc.l{L}.ln.{g,b}``; ``dec.embed``, ``dec.l{L}.{w_x,w_h,b}``,
  ``dec.out.{w,b}``; ``attn.{w_q,w_k,b,v}``.  Hyperparams: feat_dim,
  enc_layers, enc_hidden, enc_proj, embed_dim, dec_layers, dec_hidden,
  attn_dim.  Output rows = |V|; the decoder consumes the sum of token
  embedding and attention context, so enc_proj == embed_dim.
* lm: ``lm.embed``, ``lm.l{L}.{w_x,w_h,b}``, ``lm.proj.{w,b}``,
  ``lm.out.{w,b}``.  Hyperparams: embed_dim, layers, hidden.  Output
  rows = |V|; input and output embeddings may be tied by value but both
  tensors are always present.
* features: single tensor ``feat`` of shape (T, feat_dim); hyperparams:
  feat_dim; vocab null.

Manifests are JSON lines, one utterance per line:
``{"id": str, "ref": [token, ...], "feat": "relative/path.cont"}``.
Feature paths resolve relative to the manifest's directory.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ilmfuse.errors import FormatError, ValidationError

MAGIC = b"ILMC"
FORMAT_VERSION = 1
_ALIGN = 64

KINDS = ("rnnt", "aed", "lm", "features")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory with reserved start/end ids.

    Regular token ids run 0..|V|-1 and include sos_id and eos_id.  The
    blank id used by the RNN-T joint output is |V|, one past the regular
    range; it has no token string and is never embedded.
    """

    tokens: tuple
    sos_id: int = 0
    eos_id: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 2:
            raise ValidationError("vocabulary needs at least sos and eos tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("vocabulary token strings are not unique")
        if not (0 <= self.sos_id < len(self.tokens)):
            raise ValidationError(f"sos_id {self.sos_id} out of range")
        if not (0 <= self.eos_id < len(self.tokens)):
            raise ValidationError(f"eos_id {self.eos_id} out of range")
        if self.sos_id == self.eos_id:
            raise ValidationError("sos_id and eos_id must differ")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise ValidationError(f"token {token!r} not in vocabulary") from None

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "sos_id": self.sos_id, "eos_id": self.eos_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        try:
            return cls(tuple(obj["tokens"]), int(obj["sos_id"]), int(obj["eos_id"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed vocabulary object: {exc}") from exc


def _lstm_layer_shapes(prefix: str, in_dim: int, hidden: int) -> dict:
    return {
        f"{prefix}.w_x": (4 * hidden, in_dim),
        f"{prefix}.w_h": (4 * hidden, hidden),
        f"{prefix}.b": (4 * hidden,),
    }


def _require_int(hp: dict, key: str) -> int:
    if key not in hp:
        raise ValidationError(f"hyperparams missing {key!r}")
    v = hp[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ValidationError(f"hyperparam {key!r} must be a positive integer, got {v!r}")
    return v


def required_tensor_shapes(kind: str, hyperparams: dict, vocab) -> dict:
    """Exact tensor name → shape table implied by kind and hyperparams."""
    hp = hyperparams
    shapes: dict = {}
    if kind == "features":
        t = _require_int(hp, "frames")
        d = _require_int(hp, "feat_dim")
        return {"feat": (t, d)}
    if vocab is None:
        raise ValidationError(f"kind {kind!r} requires a vocabulary")
    v = vocab.size
    if kind == "rnnt":
        feat = _require_int(hp, "feat_dim")
        eh, ep = _require_int(hp, "enc_hidden"), _require_int(hp, "enc_proj")
        in_dim = feat
        for i in range(_require_int(hp, "enc_layers")):
            shapes.update(_lstm_layer_shapes(f"enc.l{i}", in_dim, eh))
            shapes[f"enc.l{i}.ln.g"] = (eh,)
            shapes[f"enc.l{i}.ln.b"] = (eh,)
            shapes[f"enc.l{i}.proj.w"] = (ep, eh)
            shapes[f"enc.l{i}.proj.b"] = (ep,)
            in_dim = ep
        emb = _require_int(hp, "embed_dim")
        ph, pp = _require_int(hp, "pred_hidden"), _require_int(hp, "pred_proj")
        shapes["pred.embed"] = (v, emb)
        in_dim = emb
        for i in range(_require_int(hp, "pred_layers")):
            shapes.update(_lstm_layer_shapes(f"pred.l{i}", in_dim, ph))
            shapes[f"pred.l{i}.ln.g"] = (ph,)
            shapes[f"pred.l{i}.ln.b"] = (ph,)
            shapes[f"pred.l{i}.proj.w"] = (pp, ph)
            shapes[f"pred.l{i}.proj.b"] = (pp,)
            in_dim = pp
        j = _require_int(hp, "joint_dim")
        if hp.get("activation") not in ACTIVATIONS:
            raise ValidationError(
                f"hyperparam 'activation' must be one of {ACTIVATIONS}, got {hp.get('activation')!r}"
            )
        shapes.update(
            {
                "joint.W_e": (j, ep),
                "joint.b_e": (j,),
                "joint.W_p": (j, pp),
                "joint.b_p": (j,),
                "joint.W_j": (v + 1, j),
                "joint.b_j": (v + 1,),
            }
        )
        return shapes
    if kind == "aed":
        feat = _require_int(hp, "feat_dim")
        eh, ep = _require_int(hp, "enc_hidden"), _require_int(hp, "enc_proj")
        emb = _require_int(hp, "embed_dim")
        if ep != emb:
            raise ValidationError(
                f"decoder sums context and embedding, so enc_proj ({ep}) must equal embed_dim ({emb})"
            )
        in_dim = feat
        for i in range(_require_int(hp, "enc_layers")):
            shapes.update(_lstm_layer_shapes(f"enc.l{i}.fwd", in_dim, eh))
            shapes.update(_lstm_layer_shapes(f"enc.l{i}.bwd", in_dim, eh))
            shapes[f"enc.l{i}.proj.w"] = (ep, 2 * eh)
            shapes[f"enc.l{i}.proj.b"] = (ep,)
            shapes[f"enc.l{i}.ln.g"] = (ep,)
            shapes[f"enc.l{i}.ln.b"] = (ep,)
            in_dim = ep
        dh = _require_int(hp, "dec_hidden")
        shapes["dec.embed"] = (v, emb)
        in_dim = emb
        for i in range(_require_int(hp, "dec_layers")):
            shapes.update(_lstm_layer_shapes(f"dec.l{i}", in_dim, dh))
            in_dim = dh
        shapes["dec.out.w"] = (v, dh)
        shapes["dec.out.b"] = (v,)
        a = _require_int(hp, "attn_dim")
        shapes.update(
            {"attn.w_q": (a, dh), "attn.w_k": (a, ep), "attn.b": (a,), "attn.v": (a,)}
        )
        return shapes
    if kind == "lm":
        emb = _require_int(hp, "embed_dim")
        h = _require_int(hp, "hidden")
        shapes["lm.embed"] = (v, emb)
        in_dim = emb
        for i in range(_require_int(hp, "layers")):
            shapes.update(_lstm_layer_shapes(f"lm.l{i}", in_dim, h))
            in_dim = h
        shapes["lm.proj.w"] = (emb, h)
        shapes["lm.proj.b"] = (emb,)
        shapes["lm.out.w"] = (v, emb)
        shapes["lm.out.b"] = (v,)
        return shapes
    raise ValidationError(f"unknown container kind {kind!r}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float32)
    out.setflags(write=False)
    return out


@dataclass
class ModelContainer:
    """Validated, immutable bundle of weights plus metadata."""

    kind: str
    hyperparams: dict
    tensors: dict
    vocab: Vocabulary | None = None
    checksum: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown container kind {self.kind!r}")
        self.tensors = {name: _freeze(t) for name, t in self.tensors.items()}
        expected = required_tensor_shapes(self.kind, self.hyperparams, self.vocab)
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise ValidationError(f"container missing tensors: {', '.join(missing)}")
        extra = sorted(set(self.tensors) - set(expected))
        if extra:
            raise ValidationError(f"container has unexpected tensors: {', '.join(extra)}")
        for name, shape in expected.items():
            got = self.tensors[name].shape
            if got != shape:
                raise ValidationError(f"tensor {name!r} has shape {got}, expected {shape}")

    def __eq__(self, other):
        if not isinstance(other, ModelContainer):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.hyperparams == other.hyperparams
            and self.vocab == other.vocab
            and set(self.tensors) == set(other.tensors)
            and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)
        )

    def tensor(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _header_bytes(container: ModelContainer) -> bytes:
    header = {
        "kind": container.kind,
        "dtype": "float32",
        "hyperparams": container.hyperparams,
        "vocab": container.vocab.to_json() if container.vocab is not None else None,
        "tensors": [
            {"name": name, "shape": list(container.tensors[name].shape)}
            for name in sorted(container.tensors)
        ],
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def payload_checksum(payload: bytes) -> int:
    """uint64 from the first 8 bytes of SHA-256 over the raw payload."""
    return struct.unpack("<Q", hashlib.sha256(payload).digest()[:8])[0]


def save_container(container: ModelContainer, path) -> int:
    """Write a container; returns its payload checksum."""
    header = _header_bytes(container)
    prefix_len = len(MAGIC) + 4 + 8 + len(header)
    pad = (-prefix_len) % _ALIGN
    payload = b"".join(
        container.tensors[name].astype("<f4", copy=False).tobytes(order="C")
        for name in sorted(container.tensors)
    )
    checksum = payload_checksum(payload)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(b"\x00" * pad)
        fh.write(payload)
        fh.write(struct.pack("<Q", checksum))
    return checksum


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise OSError(f"truncated container: expected {n} bytes of {what}, got {len(data)}")
    return data


def load_container(path) -> ModelContainer:
    """Read and fully validate a container file."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        if header_len > 1 << 30:
            raise FormatError(f"{path}: implausible header length {header_len}")
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
        pad = (-(16 + header_len)) % _ALIGN
        padding = _read_exact(fh, pad, "padding")
        if padding != b"\x00" * pad:
            raise FormatError(f"{path}: nonzero padding bytes")
        if not isinstance(header, dict):
            raise FormatError(f"{path}: header must be a JSON object")
        if header.get("dtype") != "float32":
            raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        specs = header.get("tensors")
        if not isinstance(specs, list):
            raise FormatError(f"{path}: header 'tensors' must be a list")
        names = [s.get("name") for s in specs]
        if names != sorted(names) or len(set(names)) != len(names):
            raise FormatError(f"{path}: tensor list must be sorted by unique name")
        total = 0
        parsed = []
        for s in specs:
            shape = tuple(s.get("shape", ()))
            if not shape or not all(isinstance(d, int) and d >= 1 for d in shape):
                raise FormatError(f"{path}: bad shape {shape} for tensor {s.get('name')!r}")
            count = int(np.prod(shape))
            parsed.append((s["name"], shape, count))
            total += count
        payload = _read_exact(fh, total * 4, "payload")
        (stored,) = struct.unpack("<Q", _read_exact(fh, 8, "checksum"))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after checksum")
    actual = payload_checksum(payload)
    if actual != stored:
        raise FormatError(
            f"{path}: payload checksum mismatch (stored {stored:#018x}, computed {actual:#018x})"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    tensors = {}
    offset = 0
    for name, shape, count in parsed:
        tensors[name] = flat[offset : offset + count].reshape(shape)
        offset += count
    vocab_obj = header.get("vocab")
    vocab = Vocabulary.from_json(vocab_obj) if vocab_obj is not None else None
    kind = header.get("kind")
    if kind not in KINDS:
        raise FormatError(f"{path}: unknown kind {kind!r}")
    return ModelContainer(
        kind=kind,
        hyperparams=header.get("hyperparams", {}),
        tensors=tensors,
        vocab=vocab,
        checksum=actual,
    )


def save_features(features: np.ndarray, path) -> int:
    """Write one (T, feat_dim) feature matrix as a single-tensor container."""
    feat = np.ascontiguousarray(features, dtype=np.float32)
    if feat.ndim != 2 or feat.shape[0] < 1 or feat.shape[1] < 1:
        raise ValidationError(f"features must be (T>=1, d>=1), got shape {feat.shape}")
    container = ModelContainer(
        kind="features",
        hyperparams={"frames": int(feat.shape[0]), "feat_dim": int(feat.shape[1])},
        tensors={"feat": feat},
    )
    return save_container(container, path)


def load_features(path) -> np.ndarray:
    container = load_container(path)
    if container.kind != "features":
        raise ValidationError(f"{path}: expected a features container, got kind {container.kind!r}")
    return container.tensor("feat")


@dataclass(frozen=True)
class Utterance:
    uid: str
    ref: tuple
    feat_path: str
    features: np.ndarray | None = None


@dataclass(frozen=True)
class UtteranceSet:
    utterances: tuple

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


def load_utterance_set(manifest_path, vocab: Vocabulary | None = None, load_feats: bool = True):
    """Parse a JSONL manifest; optionally load features and check refs.

    With a vocabulary, every reference token must be a known token string;
    violations report the token and 1-based manifest line number.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    utterances = []
    seen = set()
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{manifest_path}:{lineno}: not valid JSON: {exc}") from exc
            if not isinstance(record, dict) or not {"id", "ref", "feat"} <= set(record):
                raise FormatError(
                    f"{manifest_path}:{lineno}: record needs 'id', 'ref' and 'feat' fields"
                )
            uid = str(record["id"])
            if uid in seen:
                raise ValidationError(f"{manifest_path}:{lineno}: duplicate utterance id {uid!r}")
            seen.add(uid)
            ref = record["ref"]
            if not isinstance(ref, list) or not all(isinstance(t, str) for t in ref):
                raise FormatError(f"{manifest_path}:{lineno}: 'ref' must be a list of strings")
            if vocab is not None:
                for token in ref:
                    if token not in vocab.tokens:
                        raise ValidationError(
                            f"{manifest_path}:{lineno}: reference token {token!r} not in vocabulary"
                        )
            feat_path = os.path.normpath(os.path.join(base, record["feat"]))
            feats = None
            if load_feats:
                if not os.path.exists(feat_path):
                    raise OSError(f"{manifest_path}:{lineno}: feature file not found: {feat_path}")
                feats = load_features(feat_path)
            utterances.append(Utterance(uid, tuple(ref), feat_path, feats))
    return UtteranceSet(tuple(utterances))
