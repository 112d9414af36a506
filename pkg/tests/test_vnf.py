import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncfv.channel import p_delivery
from ncfv.errors import (
    BackpressureError,
    ConfigurationError,
    DomainError,
    NegotiationError,
    StructuralError,
)
from ncfv.gf import DEFAULT_POLYNOMIALS, FieldParams
from ncfv.optimizer import RateGrid, UtilityConfig, optimize_rate, reference_grid
from ncfv.rng import stream
from ncfv.vnf import (
    EventLog,
    Frame,
    Receiver,
    SchemeDescriptor,
    acknowledge,
    adapt,
    configure,
    erase,
    no_congestion_control,
    on_feedback,
    relay_forward,
    send,
    signaling_handshake,
)

SMALL_GRID = RateGrid(mode="fixed_n", fixed_value=4, counterpart_values=(5, 6, 8), L=16)


def small_state(**kw):
    kw.setdefault("grid", SMALL_GRID)
    kw.setdefault("cfg", UtilityConfig(rho0=0.5))
    return configure(**kw)


def payloads(state, seed=0):
    return stream(seed, 99).integers(0, 256, (state.coding.n, state.coding.s))


descriptors = st.builds(
    SchemeDescriptor,
    transfer=st.sampled_from(["file", "streaming"]),
    systematic=st.booleans(),
    coefficient_mode=st.sampled_from(["random", "deterministic"]),
    field=st.integers(1, 16).map(lambda q: FieldParams(q, DEFAULT_POLYNOMIALS[q])),
)


def test_default_descriptor():
    d = SchemeDescriptor()
    assert d.systematic and d.coefficient_mode == "random" and d.q == 8
    assert d.session_mode == "intra_session" and d.coherence == "coherent"
    assert len(d.pack()) == 4


@given(descriptors)
def test_descriptor_roundtrip(d):
    assert SchemeDescriptor.unpack(d.pack()) == d


def test_descriptor_errors():
    with pytest.raises(ConfigurationError):
        SchemeDescriptor(session_mode="inter_session")
    with pytest.raises(StructuralError):
        SchemeDescriptor.unpack(b"\x00\x08")
    with pytest.raises(StructuralError):
        SchemeDescriptor.unpack(struct.pack(">BBH", 0, 8, 0))  # x^8 alone is reducible


def test_configure_defaults_and_roundtrip():
    s = configure()
    assert not s.active and s.scheme == SchemeDescriptor() and s.coding.q == 8
    assert s.loss.per_hop_estimate.per_hop == (0.2, 0.0)
    assert s.capacity == 64 and s.loss.smoothing == 0.1


def test_configure_rejections():
    with pytest.raises(ConfigurationError):
        configure(SchemeDescriptor(transfer="streaming", coefficient_mode="deterministic"))
    with pytest.raises(ConfigurationError):
        configure(SchemeDescriptor(field=FieldParams(4)))  # default grid uses q=8
    with pytest.raises(ConfigurationError):
        configure(capacity=0)


def test_feedback_alpha_one_tracks_latest():
    s = small_state(alpha=1.0)
    s = on_feedback(s, 1, 3, 10)
    assert s.loss.per_hop_estimate.per_hop[1] == pytest.approx(0.3)
    s = on_feedback(s, 1, 1, 10)
    assert s.loss.per_hop_estimate.per_hop[1] == pytest.approx(0.1)
    assert s.loss.samples == (0, 2)


def test_zero_loss_drives_estimate_down():
    s = small_state()
    prev = s.loss.per_hop_estimate.per_hop[0]
    for _ in range(50):
        s = on_feedback(s, 0, 0, 20)
        cur = s.loss.per_hop_estimate.per_hop[0]
        assert cur <= prev
        prev = cur
    assert prev < 0.2 * 0.9**49


def test_bernoulli_feedback_converges():
    s = small_state(prior=(0.0, 0.0))
    rng = stream(2024, 0)
    for _ in range(500):
        s = on_feedback(s, 0, int(rng.binomial(200, 0.2)), 200)
    assert abs(s.loss.per_hop_estimate.per_hop[0] - 0.2) <= 0.02


def test_feedback_errors():
    s = small_state()
    with pytest.raises(StructuralError):
        on_feedback(s, 2, 0, 1)
    with pytest.raises(DomainError):
        on_feedback(s, 0, 5, 4)
    with pytest.raises(DomainError):
        on_feedback(s, 0, 0, 0)


def test_adapt_first_call_is_pass_through():
    s = configure(grid=reference_grid(), cfg=UtilityConfig(rho0=0.5))
    s2, res = adapt(s)
    assert res == optimize_rate((0.2, 0.0), UtilityConfig(rho0=0.5), reference_grid())
    assert s2.active == res.activated and s2.coding.rate == res.r_star


def test_adapt_lowers_rate_as_losses_grow():
    s = configure(grid=reference_grid(), cfg=UtilityConfig(rho0=0.5), alpha=0.5)
    s, first = adapt(s)
    for _ in range(10):
        s = on_feedback(s, 1, 3, 10)
    s, later = adapt(s)
    assert later.r_star <= first.r_star
    assert s.coding.rate == later.r_star < first.r_star


def test_below_threshold_deactivates_and_bypasses():
    s = small_state(cfg=UtilityConfig(rho0=0.5, u0=10.0))
    s, res = adapt(s)
    assert not res.activated and not s.active
    s, frames = send(s, payloads(s))
    parsed = [Frame.parse(f) for f in frames]
    assert len(frames) == s.coding.n and not any(p.coded for p in parsed)
    for i, p in enumerate(parsed):
        gen, idx, row = p.passthrough()
        assert gen == 0 and idx == i
        assert np.array_equal(row, payloads(s)[i])


def test_active_without_redundancy_sends_systematic_frames():
    grid = RateGrid(mode="fixed_n", fixed_value=4, counterpart_values=(4,), L=16)
    s, res = adapt(small_state(grid=grid, prior=(0.0,)))
    assert s.active
    s, frames = send(s, payloads(s))
    pkts = [Frame.parse(f).packet() for f in frames]
    assert len(pkts) == 4
    assert np.array_equal(np.stack([p.coefficients for p in pkts]), np.eye(4))


def test_send_decode_roundtrip_and_store():
    s, _ = adapt(small_state())
    src = payloads(s, 3)
    s, frames = send(s, src, seed=5)
    assert len(frames) == s.coding.m
    rx = Receiver(s.coding)
    rx.extend(frames[::-1])
    assert np.array_equal(rx.generation(0), src)
    assert np.array_equal(s.store[0].source(8), src)
    s = acknowledge(s, 0)
    assert s.store == ()
    with pytest.raises(StructuralError):
        acknowledge(s, 0)


def test_send_rejects_bad_payloads():
    s, _ = adapt(small_state())
    with pytest.raises(StructuralError):
        send(s, np.zeros((3, 2)))
    with pytest.raises(StructuralError):
        send(s, np.full((4, 2), 300))


def test_backpressure():
    s, _ = adapt(small_state(capacity=2))
    s, _ = send(s, payloads(s))
    s, _ = send(s, payloads(s))
    with pytest.raises(BackpressureError):
        send(s, payloads(s))
    s = acknowledge(s, 0)
    s, _ = send(s, payloads(s))
    assert [g.generation_id for g in s.store] == [1, 2]


def test_frame_header_layout():
    s, _ = adapt(small_state())
    _, frames = send(s, payloads(s))
    raw = frames[0]
    assert raw[:2] == b"\x4e\x43" and raw[2] == 1
    assert raw[3] & 0x01 and raw[3] & 0x02
    assert raw[4:8] == s.scheme.pack()


def test_frame_parse_errors():
    with pytest.raises(StructuralError):
        Frame.parse(b"\x4e\x43")
    with pytest.raises(StructuralError):
        Frame.parse(b"\x00\x00\x01\x00" + SchemeDescriptor().pack())
    with pytest.raises(StructuralError):
        Frame.parse(b"\x4e\x43\x09\x00" + SchemeDescriptor().pack())


def test_deterministic_scheme_frames_any_n_decode():
    scheme = SchemeDescriptor(coefficient_mode="deterministic")
    s, _ = adapt(small_state(scheme=scheme, prior=(0.3, 0.3)))
    src = payloads(s)
    s, frames = send(s, src)
    rx = Receiver(s.coding)
    rx.extend(frames[-s.coding.n:])
    assert np.array_equal(rx.generation(0), src)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["fb", "send", "ack"]), max_size=12), st.booleans())
def test_active_flag_changes_only_in_adapt(ops, start_active):
    s = small_state(cfg=UtilityConfig(rho0=0.5, u0=-10.0 if start_active else 10.0))
    s, _ = adapt(s)
    flag = s.active
    for i, op in enumerate(ops):
        if op == "fb":
            s = on_feedback(s, i % 2, i % 3, 5)
        elif op == "send" and len(s.store) < s.capacity:
            s, _ = send(s, payloads(s, i), seed=i)
        elif op == "ack" and s.store:
            s = acknowledge(s, s.store[0].generation_id)
        assert s.active == flag


def test_handshake_rules():
    sys8 = SchemeDescriptor()
    nonsys = SchemeDescriptor(systematic=False)
    assert signaling_handshake(sys8, {sys8, nonsys}) == sys8
    assert signaling_handshake(nonsys, {sys8}) == sys8
    with pytest.raises(NegotiationError):
        signaling_handshake(nonsys, {SchemeDescriptor(field=FieldParams(4))})
    with pytest.raises(NegotiationError):
        signaling_handshake(sys8, set(), {sys8})
    # an ordered list sets the responder's preference
    det = SchemeDescriptor(coefficient_mode="deterministic")
    mine = {det, sys8}
    assert signaling_handshake(nonsys, [det, sys8], mine) == det


def test_event_log_replay_bit_identical():
    base = small_state()
    log = EventLog()
    s = base
    s = log.feedback(s, 1, 2, 10)
    s, _ = log.adapt(s)
    for g in range(3):
        s, _ = log.send(s, payloads(s, g), seed=g)
    s = log.acknowledge(s, 1)
    text = log.dumps()
    assert text.count("\n") == len(log.events) == 6
    again = EventLog.loads(text).replay(base)
    assert again == s and again.digest() == s.digest()


def test_event_log_unknown_event():
    with pytest.raises(StructuralError):
        EventLog([{"op": "reboot"}]).replay(small_state())


def test_congestion_hook_is_identity():
    frames = [b"a", b"b"]
    assert no_congestion_control(None, frames) is frames


def test_end_to_end_over_two_hops_matches_analytic():
    s, _ = adapt(small_state(prior=(0.2, 0.1)))
    params = s.coding
    trials, ok = 3000, 0
    for t in range(trials):
        s, frames = send(s, payloads(s, t), seed=t)
        rng = stream(77, t)
        hop1 = erase(frames, 0.2, rng)
        hop2 = erase(relay_forward(hop1, params, seed=t), 0.1, rng)
        rx = Receiver(params)
        rx.extend(hop2)
        gid = s.store[-1].generation_id
        if rx.decoded(gid):
            assert np.array_equal(rx.generation(gid), s.store[-1].source(8))
            ok += 1
        s = acknowledge(s, gid)
    p = p_delivery(params, (0.2, 0.1)).p_success
    assert abs(ok / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials) + params.n / 256
