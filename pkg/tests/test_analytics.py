import numpy as np
import pytest

from spikedistill.analytics import (EnergyModel, LayerOpCount, ann_energy, count_sops, energy, firing_rate,
                                    layer_flops, model_energy_report)
from spikedistill.errors import ContractError
from spikedistill.models import ArchConfig, SpikeFeature, build_student, build_teacher
from spikedistill.rng import stream
from spikedistill.tensor import Tensor


class TestFiringRate:
    def test_zeros(self):
        assert firing_rate(np.zeros((2, 3))) == 0.0

    def test_ones(self):
        assert firing_rate(Tensor(np.ones((4, 2)))) == 1.0

    def test_quarter(self):
        x = np.zeros(8)
        x[[1, 6]] = 1
        assert firing_rate(x) == 0.25

    def test_spike_feature(self):
        assert firing_rate(SpikeFeature(Tensor(np.ones((2, 1, 1, 2, 2))))) == 1.0

    def test_non_binary_rejected(self):
        with pytest.raises(ContractError):
            firing_rate(np.array([0.0, 0.5]))

    def test_averaged_exempt(self):
        assert firing_rate(np.array([0.0, 0.5]), averaged=True) == 0.25

    def test_averaged_out_of_range(self):
        with pytest.raises(ContractError):
            firing_rate(np.array([1.5]), averaged=True)


class TestSops:
    def test_silent(self):
        assert count_sops(LayerOpCount("l", 1e6, 0.0, 4)) == 0

    def test_half_rate(self):
        assert count_sops(LayerOpCount("l", 1e6, 0.5, 4)) == 2e6

    def test_dense_limit(self):
        assert count_sops(LayerOpCount("l", 123.0, 1.0, 1)) == 123.0

    def test_rate_validated(self):
        with pytest.raises(ContractError):
            LayerOpCount("l", 1.0, 1.5)


class TestEnergy:
    @pytest.mark.parametrize("gflops,mj", [(4.12, 18.95), (18.60, 85.56)])
    def test_ann_rows(self, gflops, mj):
        assert round(ann_energy(gflops * 1e9) * 1e3, 2) == mj

    def test_mixed(self):
        assert energy(1e9, [1e9]) * 1e3 == pytest.approx(5.5, rel=1e-12)

    def test_negative_counts(self):
        with pytest.raises(ContractError):
            energy(1.0, [-1.0])

    def test_custom_model(self):
        assert energy(1.0, [1.0], EnergyModel(e_mac=2.0, e_ac=1.0)) == 3.0


class TestReports:
    def test_layer_flops_student(self):
        s = build_student(ArchConfig())
        assert layer_flops(s.specs, (1, 28, 28)) == {
            "conv1": 16 * 28 * 28 * 1 * 9,
            "conv2": 16 * 14 * 14 * 16 * 9,
            "fc": 16 * 7 * 7 * 10,
        }

    def test_teacher_report_is_all_mac(self):
        t = build_teacher(ArchConfig(), stream(0, "init"))
        rep = model_energy_report(t)
        assert rep.energy_j == pytest.approx(4.6e-12 * sum(r.flops for r in rep.rows))

    def test_student_report(self):
        s = build_student(ArchConfig(), rng=stream(0, "init"))
        rep = model_energy_report(s, {"if1": 0.1, "if2": 0.2}, T=4)
        flops = layer_flops(s.specs, (1, 28, 28))
        expect = 4.6e-12 * flops["conv1"] + 0.9e-12 * 4 * (0.1 * flops["conv2"] + 0.2 * flops["fc"])
        assert rep.energy_j == pytest.approx(expect, rel=1e-12)
        assert "energy" in rep.text_table() and rep.kv_lines()[-1].startswith("energy_mj=")
