"""Receptive-field algebra and the empirical measurement machinery."""

import numpy as np
import pytest

from rfsearch.errors import OutOfBoundsPosition, ZeroMass
from rfsearch.genotype import Genotype, chain_genotype, edge_pairs, uniform_genotype
from rfsearch.ops import OpKind
from rfsearch.rf import (
    EMPTY,
    GLOBAL,
    ERFMap,
    RFSupport,
    _apply_op,
    _union,
    compute_erf,
    compute_erf_averaged,
    dag_forward_fn,
    dependency_support,
    erf_radius,
    is_box_only,
    rasterize,
    theoretical_rf,
    verify_rf,
)
from rfsearch.rng import stream
from rfsearch.tensor import Tensor


def genotype_from_ops(n_nodes, ops):
    pairs = edge_pairs(n_nodes)
    return Genotype(n_nodes=n_nodes, edges=[(i, j, op) for (i, j), op in zip(pairs, ops)])


class TestSupportAlgebra:
    def test_pool_grows_box(self):
        assert _apply_op(OpKind.MaxPool5, RFSupport("box", 1, 1)) == RFSupport("box", 5, 5)
        assert _apply_op(OpKind.AvgPool3, RFSupport("box", 3, 3)) == RFSupport("box", 5, 5)

    def test_pool_grows_cross(self):
        assert _apply_op(OpKind.MaxPool3, RFSupport("cross", 1, 1)) == RFSupport("cross", 3, 3)

    def test_strip_of_box_is_cross(self):
        assert _apply_op(OpKind.StripPool, RFSupport("box", 3, 3)) == RFSupport("cross", 3, 3)

    def test_strip_of_cross_is_global(self):
        assert _apply_op(OpKind.StripPool, RFSupport("cross", 1, 1)) == GLOBAL

    def test_zero_annihilates(self):
        assert _apply_op(OpKind.Zero, RFSupport("box", 7, 7)) == EMPTY

    def test_identity_passes_through(self):
        s = RFSupport("cross", 5, 3)
        assert _apply_op(OpKind.NoisyIdentity, s) == s

    def test_union_boxes(self):
        a, b = RFSupport("box", 3, 7), RFSupport("box", 5, 1)
        assert _union(a, b) == RFSupport("box", 5, 7)

    def test_union_with_empty(self):
        assert _union(EMPTY, RFSupport("box", 3, 3)) == RFSupport("box", 3, 3)

    def test_union_global_absorbs(self):
        assert _union(GLOBAL, RFSupport("box", 3, 3)) == GLOBAL

    def test_union_box_cross_is_cross(self):
        out = _union(RFSupport("box", 5, 5), RFSupport("cross", 3, 3))
        assert out.kind == "cross" and out.rh == 5


class TestTheoretical:
    def test_max3_chain_extent(self):
        for n in range(2, 6):
            profile = theoretical_rf(chain_genotype(n, OpKind.MaxPool3), (16, 16))
            assert profile.output == RFSupport("box", 2 * (n - 1) + 1, 2 * (n - 1) + 1)

    def test_strip_genotype_is_cross(self):
        g = genotype_from_ops(2, [OpKind.StripPool])
        assert theoretical_rf(g, (16, 16)).output.kind == "cross"

    def test_all_zero_is_empty(self):
        g = uniform_genotype(3, OpKind.Zero)
        assert theoretical_rf(g, (8, 8)).output == EMPTY

    def test_describe_format(self):
        text = theoretical_rf(chain_genotype(3, OpKind.AvgPool3), (8, 8)).describe()
        assert text.startswith("format = rfsearch-rf-profile")
        assert "output = box(5,5)" in text


class TestRasterize:
    def test_box_center(self):
        mask = rasterize(RFSupport("box", 3, 3), (7, 7), (3, 3))
        assert mask.sum() == 9 and mask[3, 3] and not mask[0, 0]

    def test_box_clips_at_border(self):
        mask = rasterize(RFSupport("box", 5, 5), (6, 6), (0, 0))
        assert mask.sum() == 9  # 3x3 corner remains

    def test_cross(self):
        mask = rasterize(RFSupport("cross", 1, 1), (5, 5), (2, 2))
        assert mask.sum() == 5 + 5 - 1

    def test_global_and_empty(self):
        assert rasterize(GLOBAL, (4, 4), (0, 0)).all()
        assert not rasterize(EMPTY, (4, 4), (0, 0)).any()


class TestEmpirical:
    def test_avg_chain_gradient_support_exact(self):
        """Average pooling has dense window gradients, so ERF support == theory."""
        g = chain_genotype(3, OpKind.AvgPool3)
        fwd = dag_forward_fn(g)
        x = Tensor(stream(0, "e").standard_normal((1, 1, 16, 16)).astype(np.float32))
        erf = compute_erf(fwd, x, (0, 8, 8))
        theo = rasterize(theoretical_rf(g, (16, 16)).output, (16, 16), (8, 8))
        assert np.array_equal(erf.support(), theo)

    def test_max_gradient_contained(self):
        g = chain_genotype(3, OpKind.MaxPool5)
        fwd = dag_forward_fn(g)
        x = Tensor(stream(1, "e").standard_normal((1, 1, 16, 16)).astype(np.float32))
        erf = compute_erf(fwd, x, (0, 8, 8))
        theo = rasterize(theoretical_rf(g, (16, 16)).output, (16, 16), (8, 8))
        assert not (erf.support() & ~theo).any()

    def test_dependency_probe_max_chain_exact(self):
        g = chain_genotype(3, OpKind.MaxPool3)
        fwd = dag_forward_fn(g)
        x = Tensor(stream(2, "e").standard_normal((1, 1, 12, 12)).astype(np.float32))
        dep = dependency_support(fwd, x, (0, 6, 6))
        theo = rasterize(theoretical_rf(g, (12, 12)).output, (12, 12), (6, 6))
        assert np.array_equal(dep, theo)

    def test_out_of_bounds_position(self):
        fwd = dag_forward_fn(chain_genotype(2, OpKind.MaxPool3))
        x = Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32))
        with pytest.raises(OutOfBoundsPosition):
            compute_erf(fwd, x, (0, 9, 0))

    def test_averaged_erf_deterministic(self):
        fwd = dag_forward_fn(chain_genotype(2, OpKind.AvgPool5))
        a = compute_erf_averaged(fwd, (1, 1, 10, 10), n_average=3, seed=5)
        b = compute_erf_averaged(fwd, (1, 1, 10, 10), n_average=3, seed=5)
        assert np.array_equal(a.grid, b.grid)


class TestERFMap:
    def test_radius_of_delta(self):
        grid = np.zeros((9, 9))
        grid[4, 4] = 1.0
        assert erf_radius(ERFMap(grid, (4, 4)), 0.9) == 0

    def test_radius_grows_with_mass(self):
        grid = np.ones((9, 9))
        m = ERFMap(grid, (4, 4))
        assert erf_radius(m, 0.05) < erf_radius(m, 0.99)

    def test_zero_mass_raises(self):
        with pytest.raises(ZeroMass):
            erf_radius(ERFMap(np.zeros((4, 4)), (2, 2)), 0.5)

    def test_pgm_header_and_scaling(self):
        grid = np.array([[0.0, 2.0], [1.0, 0.5]])
        text = ERFMap(grid, (0, 0)).to_pgm()
        lines = text.splitlines()
        assert lines[0] == "P2" and lines[1] == "2 2" and lines[2] == "65535"
        assert lines[3].split() == ["0", "65535"]

    def test_csv_rows(self):
        text = ERFMap(np.zeros((3, 2)), (1, 1)).to_csv()
        assert text.splitlines()[0] == "row,col,magnitude"
        assert len(text.splitlines()) == 1 + 6


class TestVerify:
    def test_box_only_detection(self):
        assert is_box_only(chain_genotype(3, OpKind.MaxPool7))
        assert not is_box_only(chain_genotype(3, OpKind.StripPool))

    def test_verify_passes_mixed_genotype(self):
        g = genotype_from_ops(3, [OpKind.StripPool, OpKind.Zero, OpKind.AvgPool3])
        report = verify_rf(g, (12, 12), trials=2, seed=0)
        assert report.passed

    def test_verify_box_only_runs_probe(self):
        report = verify_rf(chain_genotype(3, OpKind.MaxPool5), (12, 12), trials=2, seed=0)
        assert report.box_only and report.passed
