import numpy as np
import pytest

from emoavatar import tensor as T
from emoavatar.errors import DimensionError, DomainError
from emoavatar.head import (
    REGIONS,
    AvatarState,
    HeadParams,
    HeadTemplate,
    make_default_template,
    rodrigues,
    synthesize_blocks_t,
    synthesize_sequence,
    synthesize_vertices,
)


@pytest.fixture(scope="module")
def template():
    return make_default_template(seed=7, vertex_count=96, expression_dims=6)


def test_rodrigues_zero_is_identity():
    np.testing.assert_array_equal(rodrigues([0.0, 0.0, 0.0]), np.eye(3))


def test_rodrigues_quarter_turn():
    r = rodrigues([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(r @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


def test_rodrigues_orthonormal_100_samples():
    g = np.random.default_rng(3)
    for _ in range(100):
        w = g.normal(size=3) * g.uniform(0, np.pi)
        r = rodrigues(w)
        assert np.abs(r @ r.T - np.eye(3)).max() < 1e-10
        assert abs(np.linalg.det(r) - 1.0) < 1e-10


def test_rest_pose_is_mean_exactly(template):
    p = HeadParams(np.zeros(template.expression_dims), np.zeros(3))
    np.testing.assert_array_equal(synthesize_vertices(template, p), template.mean_vertices)


def test_blendshape_linearity_without_jaw(template):
    g = np.random.default_rng(5)
    e = template.expression_dims
    p1, p2 = g.normal(size=e), g.normal(size=e)
    zero_jaw = np.zeros(3)
    d1 = synthesize_vertices(template, HeadParams(p1, zero_jaw)) - template.mean_vertices
    d2 = synthesize_vertices(template, HeadParams(p2, zero_jaw)) - template.mean_vertices
    d12 = synthesize_vertices(template, HeadParams(p1 + p2, zero_jaw)) - template.mean_vertices
    np.testing.assert_allclose(d12, d1 + d2, atol=1e-12)


def test_single_vertex_half_turn():
    tpl = HeadTemplate(
        mean_vertices=np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]]),
        exp_basis=np.zeros((4, 3, 1)),
        jaw_pivot=np.zeros(3),
        jaw_axis_frame=np.eye(3),
        skin_weights=np.ones(4),
        region_labels=np.full(4, REGIONS.index("jaw")),
    )
    out = synthesize_vertices(tpl, HeadParams(np.zeros(1), [0.0, 0.0, np.pi]))
    np.testing.assert_allclose(out[0], [-1.0, 0.0, 0.0], atol=1e-12)


def test_jaw_moves_only_weighted_vertices(template):
    p = HeadParams(np.zeros(template.expression_dims), [0.3, 0.1, -0.2])
    moved = synthesize_vertices(template, p)
    delta = np.linalg.norm(moved - template.mean_vertices, axis=1)
    assert np.all(delta[template.skin_weights == 0.0] == 0.0)
    assert np.any(delta[template.skin_weights > 0.5] > 1e-3)


def test_template_determinism():
    t1 = make_default_template(seed=11, vertex_count=96, expression_dims=6)
    t2 = make_default_template(seed=11, vertex_count=96, expression_dims=6)
    assert np.array_equal(t1.mean_vertices, t2.mean_vertices)
    assert np.array_equal(t1.exp_basis, t2.exp_basis)
    assert np.array_equal(t1.skin_weights, t2.skin_weights)
    assert np.array_equal(t1.region_labels, t2.region_labels)


def test_topmost_vertex_is_brow_with_zero_weight(template):
    top = int(np.argmax(template.mean_vertices[:, 1]))
    assert template.region_labels[top] == REGIONS.index("brow")
    assert template.skin_weights[top] == 0.0


def test_basis_column_norms_in_range(template):
    e = template.expression_dims
    norms = np.linalg.norm(template.exp_basis.reshape(-1, e), axis=0)
    assert np.all(norms >= 0.1) and np.all(norms <= 10.0)


def test_all_regions_populated(template):
    for name in REGIONS:
        assert template.region_vertices(name).size > 0, name


def test_dimension_mismatch_names_dims(template):
    bad = HeadParams(np.zeros(template.expression_dims + 1), np.zeros(3))
    with pytest.raises(DimensionError, match=str(template.expression_dims)):
        synthesize_vertices(template, bad)


def test_jaw_magnitude_validated():
    with pytest.raises(DomainError):
        HeadParams(np.zeros(4), [np.pi, np.pi, 0.0])


def test_avatar_state_clamps_and_validates():
    verts = np.zeros((4, 3))
    state = AvatarState(verts, np.array([[2.0, -1.0, 0.5]] * 4))
    assert state.colors.max() <= 1.0 and state.colors.min() >= 0.0
    with pytest.raises(DomainError):
        AvatarState(np.full((4, 3), np.nan), np.zeros((4, 3)))


def test_batched_synthesis_matches_rodrigues_path(template):
    g = np.random.default_rng(9)
    frames = 5
    e = template.expression_dims
    exp = g.normal(size=(frames, e)) * 0.5
    jaw = g.normal(size=(frames, 3)) * 0.4
    p_seq = np.concatenate([exp, jaw], axis=1)

    expected = synthesize_sequence(template, p_seq)
    vx, vy, vz = synthesize_blocks_t(None, template, T.const(exp), T.const(jaw))
    got = np.stack([vx.data, vy.data, vz.data], axis=2)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_batched_synthesis_grad_check(template):
    g = np.random.default_rng(13)
    e = template.expression_dims
    frames = 2

    base_exp = g.normal(size=(frames, e)) * 0.3
    base_jaw = g.normal(size=(frames, 3)) * 0.3

    def f_exp(tape, x):
        vx, vy, vz = synthesize_blocks_t(tape, template, x, T.const(base_jaw))
        s = T.add(tape, T.reduce_sumsq(tape, vx), T.reduce_sumsq(tape, vy))
        return T.add(tape, s, T.reduce_sumsq(tape, vz))

    def f_jaw(tape, x):
        vx, vy, vz = synthesize_blocks_t(tape, template, T.const(base_exp), x)
        s = T.add(tape, T.reduce_sumsq(tape, vx), T.reduce_sumsq(tape, vy))
        return T.add(tape, s, T.reduce_sumsq(tape, vz))

    assert T.grad_check(f_exp, base_exp) < 1e-5
    assert T.grad_check(f_jaw, base_jaw) < 1e-5


def test_batched_synthesis_grad_at_zero_jaw(template):
    # the rotation coefficients switch to their Taylor branch at zero angle
    e = template.expression_dims

    def f_jaw(tape, x):
        vx, vy, vz = synthesize_blocks_t(tape, template, T.const(np.zeros((1, e))), x)
        s = T.add(tape, T.reduce_sumsq(tape, vx), T.reduce_sumsq(tape, vy))
        return T.add(tape, s, T.reduce_sumsq(tape, vz))

    assert T.grad_check(f_jaw, np.zeros((1, 3))) < 1e-5
