import numpy as np
import pytest
from hypothesis import given, strategies as st

from defg import gen
from defg.errors import DegenerateMessageError, GraphSchemaError, InvariantViolation
from defg.graph import build_graph
from defg.spa import (
    MessageState,
    SpaConfig,
    beliefs,
    check_messages,
    flood_iteration,
    init_messages,
    run_spa,
    update_message,
)
from defg.tensor import psd_check

F = np.array([[2, 1j], [-1j, 1]])


def two_factor():
    return build_graph([("e", "double", 2, ("f", "h"))], [("f", ["e"], F), ("h", ["e"], np.eye(2))])


def through_chain():
    # u -- a -- f -- b -- v where f copies (x, x') from a to b
    copy = np.einsum("ab,cd->abcd", np.eye(2), np.eye(2))
    return build_graph(
        [("a", "double", 2, ("u", "f")), ("b", "double", 2, ("f", "v"))],
        [("u", ["a"], np.eye(2)), ("f", ["a", "b"], copy), ("v", ["b"], np.eye(2))],
    )


def test_config_validation():
    for bad in (dict(max_iters=0), dict(conv_tol=0), dict(damping=1.0), dict(normalization="l2")):
        with pytest.raises(ValueError):
            SpaConfig(**bad)


def test_init_modes():
    g = gen.random_denfg(gen.make_rng(4), 4, 1)
    for mode in ("uniform", "delta"):
        st_ = init_messages(g, mode)
        for (eid, _), m in st_.messages.items():
            e = g.edges[eid]
            if e.is_double:
                np.testing.assert_allclose(m, np.eye(e.alphabet) / e.alphabet)
            else:
                np.testing.assert_allclose(m, np.full(e.alphabet, 1 / e.alphabet))
    a, b = init_messages(g, "seeded", seed=7), init_messages(g, "seeded", seed=7)
    for k in a.messages:
        np.testing.assert_array_equal(a.messages[k], b.messages[k])
        m = a.messages[k]
        if g.edges[k[0]].is_double:
            assert np.trace(m).real == pytest.approx(1.0) and psd_check(m)
            assert np.linalg.eigvalsh(m).min() > 0
        else:
            assert m.sum() == pytest.approx(1.0) and m.min() > 0
    with pytest.raises(ValueError):
        init_messages(g, "seeded")
    with pytest.raises(ValueError):
        init_messages(g, "random")


def test_update_message_hand_example():
    g = two_factor()
    st_ = init_messages(g)
    msg = update_message(g, st_, "e", "h")
    assert msg.target == "h" and msg.slot == 1
    np.testing.assert_allclose(msg.payload, F / 3)
    np.testing.assert_allclose(update_message(g, st_, "e", "f").payload, np.eye(2) / 2)
    with pytest.raises(ValueError):
        update_message(g, st_, "e", "nobody")


def test_unnormalized_update_keeps_scale():
    g = two_factor()
    msg = update_message(g, init_messages(g), "e", "h", SpaConfig(normalization="none"))
    np.testing.assert_allclose(msg.payload, F)


def test_damping_is_convex_combination():
    g = two_factor()
    st0 = init_messages(g)
    st1, _ = flood_iteration(g, st0, SpaConfig(damping=0.5))
    np.testing.assert_allclose(st1.messages["e", 1], 0.5 * np.eye(2) / 2 + 0.5 * F / 3)


def test_residual_is_max_l1_change():
    g = two_factor()
    st0 = init_messages(g)
    _, res = flood_iteration(g, st0, SpaConfig())
    assert res == pytest.approx(np.abs(F / 3 - np.eye(2) / 2).sum())


def test_two_factor_converges_in_two_iterations():
    r = run_spa(two_factor())
    assert r.converged and r.iterations == 2 and r.residuals[-1] == 0


def test_self_loop_needs_slot():
    data = gen.random_factor_tensor(np.random.default_rng(2), [2, 2])
    g = build_graph([("loop", "double", 2, ("f", "f"))], [("f", ["loop", "loop"], data)])
    st_ = init_messages(g)
    with pytest.raises(ValueError, match="self-loop"):
        update_message(g, st_, "loop", "f")
    m0 = update_message(g, st_, "loop", 0).payload
    # toward slot 0 leaves through port 1; port 0 receives the slot-0 message
    raw = np.einsum("abcd,ac->bd", data, st_.messages["loop", 0])
    np.testing.assert_allclose(m0, raw / np.trace(raw))


def test_degenerate_message():
    g = build_graph([("e", "double", 2, ("f", "h"))], [("f", ["e"], np.zeros((2, 2))), ("h", ["e"], np.eye(2))])
    with pytest.raises(DegenerateMessageError) as info:
        run_spa(g)
    assert info.value.edge == "e" and info.value.iteration == 1


def test_verify_rejects_non_psd_graph():
    g = build_graph([("e", "double", 2, ("f", "h"))], [("f", ["e"], np.diag([1.0, -1.0])), ("h", ["e"], np.eye(2))])
    with pytest.raises(GraphSchemaError, match="factor 'f'"):
        run_spa(g, SpaConfig(verify=True))


def test_verify_catches_bad_messages():
    g = through_chain()
    st_ = init_messages(g)
    st_.messages["a", 1] = np.diag([1.5, -0.5]).astype(complex)
    with pytest.raises(InvariantViolation, match="edge 'b'"):
        run_spa(g, SpaConfig(verify=True), init=st_)


def test_check_messages_flags_negative_single():
    g = build_graph([("s", "single", 2, ("f", "h"))], [("f", ["s"], [1.0, 1.0]), ("h", ["s"], [1.0, 1.0])])
    st_ = MessageState({("s", 0): np.array([1.2, -0.2]), ("s", 1): np.array([0.5, 0.5])})
    (msg,) = check_messages(g, st_)
    assert "negative" in msg


def test_callback_runs_every_iteration():
    seen = []
    r = run_spa(through_chain(), callback=lambda s: seen.append(s.iteration))
    assert seen == list(range(1, r.iterations + 1))


def test_max_iters_reports_not_converged():
    g = gen.cycle_denfg(gen.random_cycle_factor(gen.make_rng(1), 2), 4)
    r = run_spa(g, SpaConfig(max_iters=1))
    assert not r.converged and r.iterations == 1


@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(0, 2), st.sampled_from(["uniform", "seeded"]))
def test_messages_stay_valid(seed, n, extra, init):
    g = gen.random_denfg(gen.make_rng(seed), n, extra if n > 1 else 0)
    r = run_spa(g, SpaConfig(max_iters=30, verify=True), init=init, seed=seed)
    for (eid, _), m in r.state.messages.items():
        e = g.edges[eid]
        if e.is_double:
            assert np.trace(m).real == pytest.approx(1.0)
            np.testing.assert_array_equal(m, m.conj().T)
        else:
            assert m.sum() == pytest.approx(1.0) and not np.iscomplexobj(m)


def test_beliefs_normalized():
    g = gen.random_tree_denfg(gen.make_rng(11), 4)
    for eid, b in beliefs(g, run_spa(g).state).items():
        total = np.trace(b) if g.edges[eid].is_double else b.sum()
        assert total == pytest.approx(1.0)
