"""The network-coding function as a small state machine.

The blocks of the function map onto plain functions over an immutable
:class:`FunctionState`:

* logic / coding: :func:`configure`, :func:`send`
* feedback: :func:`on_feedback` (per-hop EWMA loss estimate)
* adaptation: :func:`adapt` (runs the rate optimizer, owns the ``active`` flag)
* storage: the bounded generation store inside the state, :func:`acknowledge`
* signaling: :class:`SchemeDescriptor` packing, :func:`signaling_handshake`

Every transition returns a new state, so a recorded :class:`EventLog` replays
to the same state bit for bit.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ErasureSpec
from .codec import CodedPacket, CodingParams, Decoder, encode
from .errors import (
    BackpressureError,
    ConfigurationError,
    DomainError,
    InsufficientRankError,
    NegotiationError,
    StructuralError,
)
from .gf import FieldParams, get_field
from .optimizer import RateGrid, UtilityConfig, optimize_rate
from .rng import derive_seed

MAGIC = 0x4E43
VERSION = 1
FLAG_CODED = 0x01
FLAG_SYSTEMATIC = 0x02
HEADER = struct.Struct(">HBB4s")

SESSION_MODES = ("intra_session",)
COHERENCE_MODES = ("coherent",)
TRANSFER_MODES = ("file", "streaming")
COEFFICIENT_MODES = ("random", "deterministic")

DEFAULT_ALPHA = 0.1
DEFAULT_CAPACITY = 64
DEFAULT_PRIOR = (0.2, 0.0)


@dataclass(frozen=True)
class SchemeDescriptor:
    session_mode: str = "intra_session"
    coherence: str = "coherent"
    transfer: str = "file"
    systematic: bool = True
    coefficient_mode: str = "random"
    field: FieldParams = FieldParams()

    def __post_init__(self):
        for name, allowed in (
            ("session_mode", SESSION_MODES),
            ("coherence", COHERENCE_MODES),
            ("transfer", TRANSFER_MODES),
            ("coefficient_mode", COEFFICIENT_MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigurationError(f"{name} must be one of {allowed}")

    @property
    def q(self):
        return self.field.q

    def pack(self):
        """4 bytes: mode bits, q, reduction polynomial without its leading term."""
        bits = (
            SESSION_MODES.index(self.session_mode)
            | COHERENCE_MODES.index(self.coherence) << 2
            | TRANSFER_MODES.index(self.transfer) << 4
            | int(self.systematic) << 5
            | COEFFICIENT_MODES.index(self.coefficient_mode) << 6
        )
        low = self.field.reduction_polynomial ^ (1 << self.q)
        return struct.pack(">BBH", bits, self.q, low)

    @classmethod
    def unpack(cls, data):
        if len(data) != 4:
            raise StructuralError("scheme descriptor must be 4 bytes")
        bits, q, low = struct.unpack(">BBH", data)
        try:
            return cls(
                session_mode=SESSION_MODES[bits & 0x3],
                coherence=COHERENCE_MODES[(bits >> 2) & 0x3],
                transfer=TRANSFER_MODES[(bits >> 4) & 0x1],
                systematic=bool(bits >> 5 & 1),
                coefficient_mode=COEFFICIENT_MODES[(bits >> 6) & 0x1],
                field=FieldParams(q, low | (1 << q)),
            )
        except (IndexError, DomainError) as exc:
            raise StructuralError(f"malformed scheme descriptor: {exc}") from exc


@dataclass(frozen=True)
class LossEstimate:
    per_hop_estimate: ErasureSpec
    samples: tuple
    smoothing: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0 < self.smoothing <= 1:
            raise DomainError("EWMA factor must lie in (0, 1]")
        if len(self.samples) != self.per_hop_estimate.hops:
            raise StructuralError("one sample counter per hop")


@dataclass(frozen=True)
class StoredGeneration:
    generation_id: int
    shape: tuple
    data: bytes

    def source(self, q):
        dt = np.uint8 if q <= 8 else np.uint16
        return np.frombuffer(self.data, dtype=dt).reshape(self.shape)


@dataclass(frozen=True)
class FunctionState:
    scheme: SchemeDescriptor
    coding: CodingParams
    loss: LossEstimate
    cfg: UtilityConfig
    grid: RateGrid
    active: bool = False
    store: tuple = ()
    capacity: int = DEFAULT_CAPACITY
    next_generation_id: int = 0

    def digest(self):
        """SHA-256 over a canonical encoding of the whole state."""
        doc = {
            "scheme": self.scheme.pack().hex(),
            "coding": [self.coding.n, self.coding.m, self.coding.L, self.coding.q, self.coding.systematic],
            "loss": [[float(d).hex() for d in self.loss.per_hop_estimate.per_hop],
                     list(self.loss.samples), float(self.loss.smoothing).hex()],
            "active": self.active,
            "store": [[g.generation_id, list(g.shape), g.data.hex()] for g in self.store],
            "capacity": self.capacity,
            "next": self.next_generation_id,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _grid_params(state_or_scheme, params):
    scheme = state_or_scheme
    return CodingParams(params.n, params.m, params.L, scheme.q, scheme.systematic)


def configure(scheme=None, cfg=None, grid=None, prior=DEFAULT_PRIOR, alpha=DEFAULT_ALPHA,
              capacity=DEFAULT_CAPACITY):
    """Fresh, inactive function state.

    The loss estimate starts at ``prior`` and coding starts at the
    least-redundancy grid candidate until :func:`adapt` runs.
    """
    scheme = scheme if scheme is not None else SchemeDescriptor()
    cfg = cfg if cfg is not None else UtilityConfig()
    grid = grid if grid is not None else RateGrid()
    if scheme.coefficient_mode == "deterministic" and scheme.transfer == "streaming":
        raise ConfigurationError("deterministic coefficients are not supported for streaming transfer")
    if grid.q != scheme.q:
        raise ConfigurationError(f"grid uses q={grid.q} but the scheme field has q={scheme.q}")
    if capacity < 1:
        raise ConfigurationError("store capacity must be >= 1")
    for params in grid.candidates():
        if scheme.coefficient_mode == "deterministic" and params.m > get_field(scheme.q).order:
            raise ConfigurationError("block too long for deterministic coefficients in this field")
    spec = ErasureSpec(prior)
    loss = LossEstimate(spec, (0,) * spec.hops, alpha)
    start = _grid_params(scheme, grid.candidates()[-1])
    return FunctionState(scheme, start, loss, cfg, grid, False, (), capacity, 0)


def on_feedback(state, hop, losses, total):
    """EWMA update of one hop's erasure estimate from a loss report."""
    if not 0 <= hop < state.loss.per_hop_estimate.hops:
        raise StructuralError(f"hop index {hop} out of range")
    if total <= 0 or not 0 <= losses <= total:
        raise DomainError("feedback needs total > 0 and 0 <= losses <= total")
    a = state.loss.smoothing
    est = list(state.loss.per_hop_estimate.per_hop)
    est[hop] = min(1.0, max(0.0, (1 - a) * est[hop] + a * (losses / total)))
    samples = list(state.loss.samples)
    samples[hop] += 1
    loss = LossEstimate(ErasureSpec(tuple(est)), tuple(samples), a)
    return replace(state, loss=loss)


def adapt(state):
    """Re-optimize the coding rate for the current loss estimate.

    Returns ``(new_state, result)``.  An infeasible grid switches the function
    off and keeps the previous coding parameters.
    """
    result = optimize_rate(state.loss.per_hop_estimate, state.cfg, state.grid)
    if not result.feasible:
        return replace(state, active=False), result
    coding = _grid_params(state.scheme, result.params)
    return replace(state, coding=coding, active=result.activated), result


@dataclass(frozen=True)
class Frame:
    coded: bool
    systematic: bool
    scheme: SchemeDescriptor
    body: bytes

    def pack(self):
        flags = (FLAG_CODED if self.coded else 0) | (FLAG_SYSTEMATIC if self.systematic else 0)
        return HEADER.pack(MAGIC, VERSION, flags, self.scheme.pack()) + self.body

    @classmethod
    def parse(cls, data):
        if len(data) < HEADER.size:
            raise StructuralError("truncated frame header")
        magic, version, flags, desc = HEADER.unpack(data[: HEADER.size])
        if magic != MAGIC:
            raise StructuralError(f"bad magic {magic:#06x}")
        if version != VERSION:
            raise StructuralError(f"unsupported frame version {version}")
        return cls(bool(flags & FLAG_CODED), bool(flags & FLAG_SYSTEMATIC),
                   SchemeDescriptor.unpack(desc), data[HEADER.size :])

    def packet(self):
        if not self.coded:
            raise StructuralError("passthrough frame carries no coded packet")
        return CodedPacket.from_bytes(self.body, self.scheme.q)

    def passthrough(self):
        """``(generation_id, index, payload)`` of an uncoded frame."""
        if self.coded:
            raise StructuralError("coded frame is not a passthrough frame")
        gen, idx = struct.unpack(">IH", self.body[:6])
        pkt = CodedPacket.from_bytes(struct.pack(">IH", gen, 0) + self.body[6:], self.scheme.q)
        return gen, idx, pkt.payload


def _symbols(payload, q):
    dt = ">u1" if q <= 8 else ">u2"
    return np.asarray(payload).astype(dt).tobytes()


def frame_packets(scheme, packets):
    return [
        Frame(True, scheme.systematic, scheme, p.to_bytes(scheme.q)).pack() for p in packets
    ]


def no_congestion_control(state, frames):
    """Congestion-control hook; no algorithm is defined, frames pass unchanged."""
    return frames


def send(state, payloads, seed=0, congestion=no_congestion_control):
    """Frame one generation of ``n`` payloads.

    Active: encode with the adopted parameters and frame all ``m`` packets.
    Inactive: frame the payloads as they are.  Either way the generation is
    kept in the store until :func:`acknowledge`.  Returns ``(state, frames)``.
    """
    if len(state.store) >= state.capacity:
        raise BackpressureError(f"generation store full ({state.capacity})")
    gf = get_field(state.scheme.q)
    src = np.asarray(payloads)
    params = state.coding
    if src.ndim != 2 or src.shape != (params.n, params.s):
        raise StructuralError(f"expected {params.n} payloads of {params.s} symbols, got {src.shape}")
    if src.size and (src.min() < 0 or src.max() >= gf.order):
        raise StructuralError("payload symbol outside the field")
    src = src.astype(gf.dtype)
    gen = state.next_generation_id
    if state.active:
        packets, _ = encode(params, src, derive_seed(seed, gen), gen, state.scheme.coefficient_mode)
        frames = frame_packets(state.scheme, packets)
    else:
        frames = [
            Frame(False, False, state.scheme,
                  struct.pack(">IH", gen, i) + _symbols(row, state.scheme.q)).pack()
            for i, row in enumerate(src)
        ]
    stored = StoredGeneration(gen, src.shape, src.tobytes())
    state = replace(state, store=state.store + (stored,), next_generation_id=gen + 1)
    return state, congestion(state, frames)


def acknowledge(state, generation_id):
    """Evict an acknowledged generation from the store."""
    keep = tuple(g for g in state.store if g.generation_id != generation_id)
    if len(keep) == len(state.store):
        raise StructuralError(f"generation {generation_id} is not stored")
    return replace(state, store=keep)


class Receiver:
    """Sink side: collects frames per generation and decodes when possible."""

    def __init__(self, params):
        self.params = params
        self._decoders = {}
        self._plain = {}

    def accept(self, raw):
        frame = Frame.parse(raw)
        if frame.coded:
            pkt = frame.packet()
            dec = self._decoders.setdefault(pkt.generation_id, Decoder(self.params))
            dec.add(pkt)
        else:
            gen, idx, payload = frame.passthrough()
            self._plain.setdefault(gen, {})[idx] = payload

    def extend(self, frames):
        for raw in frames:
            self.accept(raw)

    def generation(self, generation_id):
        """Decoded source block, or raises :class:`InsufficientRankError`."""
        if generation_id in self._decoders:
            return self._decoders[generation_id].source()
        rows = self._plain.get(generation_id, {})
        if len(rows) < self.params.n:
            raise InsufficientRankError(len(rows), self.params.n)
        return np.stack([rows[i] for i in range(self.params.n)])

    def decoded(self, generation_id):
        try:
            self.generation(generation_id)
        except InsufficientRankError:
            return False
        return True


def relay_forward(frames, params, seed=0):
    """Decode-and-re-encode relay: forwards a fresh encoding of each generation
    it managed to decode and drops the rest."""
    rx = Receiver(params)
    rx.extend(frames)
    out = []
    schemes = {}
    for raw in frames:
        fr = Frame.parse(raw)
        if fr.coded:
            schemes.setdefault(fr.packet().generation_id, fr.scheme)
    for gen, scheme in schemes.items():
        if rx.decoded(gen):
            packets, _ = encode(params, rx.generation(gen), derive_seed(seed, gen), gen,
                                scheme.coefficient_mode)
            out.extend(frame_packets(scheme, packets))
    return out


def erase(frames, delta, rng):
    """Drop each frame independently with probability ``delta``."""
    keep = rng.random(len(frames)) >= delta
    return [f for f, k in zip(frames, keep) if k]


def _fallbacks(desc):
    base = replace(desc, systematic=True, coefficient_mode="random")
    return {desc, base, replace(desc, systematic=True)}


def _preference(desc):
    # systematic, random coefficients and file transfer first; then smaller fields
    return (not desc.systematic, desc.coefficient_mode != "random", desc.transfer != "file",
            desc.q, desc.field.reduction_polynomial)


def signaling_handshake(initiator, responder_supported, initiator_supported=None):
    """Agree on a coding scheme with a peer.

    The initiator's descriptor wins if the responder supports it.  Otherwise
    the responder's most preferred option that the initiator also supports is
    chosen; the initiator supports its own descriptor and the systematic
    fallbacks of it unless ``initiator_supported`` says otherwise.  A list for
    ``responder_supported`` is taken in preference order.
    """
    if initiator in responder_supported:
        return initiator
    mine = set(initiator_supported) if initiator_supported is not None else _fallbacks(initiator)
    if isinstance(responder_supported, (list, tuple)):
        ordered = list(responder_supported)
    else:
        ordered = sorted(responder_supported, key=_preference)
    for desc in ordered:
        if desc in mine:
            return desc
    raise NegotiationError("no coding scheme supported by both ends")


# Event log: one JSON object per line.

def _apply(state, event):
    kind = event["op"]
    if kind == "feedback":
        return on_feedback(state, event["hop"], event["losses"], event["total"])
    if kind == "adapt":
        return adapt(state)[0]
    if kind == "send":
        return send(state, np.asarray(event["payloads"]), event["seed"])[0]
    if kind == "ack":
        return acknowledge(state, event["generation_id"])
    raise StructuralError(f"unknown event {kind!r}")


@dataclass
class EventLog:
    """Records the events applied to a function and replays them."""

    events: list = field(default_factory=list)

    def feedback(self, state, hop, losses, total):
        return self._record(state, {"op": "feedback", "hop": int(hop), "losses": int(losses),
                                    "total": int(total)})

    def adapt(self, state):
        new, result = adapt(state)
        self.events.append({"op": "adapt"})
        return new, result

    def send(self, state, payloads, seed=0):
        new, frames = send(state, payloads, seed)
        self.events.append({"op": "send", "payloads": np.asarray(payloads).tolist(), "seed": int(seed)})
        return new, frames

    def acknowledge(self, state, generation_id):
        return self._record(state, {"op": "ack", "generation_id": int(generation_id)})

    def _record(self, state, event):
        new = _apply(state, event)
        self.events.append(event)
        return new

    def dumps(self):
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    @staticmethod
    def loads(text):
        return EventLog([json.loads(line) for line in text.splitlines() if line.strip()])

    def replay(self, state):
        for event in self.events:
            state = _apply(state, event)
        return state
