import numpy as np
import pytest

from fedmesh.data import Dataset, generate_synthetic
from fedmesh.params import ParamVector
from fedmesh.selection import estimate_metrics
from fedmesh.trainer import (
    AdversaryBehavior,
    ClientReport,
    LocalModelSpec,
    bce_loss,
    build_report,
    gradient,
    predict_proba,
    train_local,
)


@pytest.fixture
def two_point_dataset():
    return Dataset(np.array([[1.0], [-1.0]]), np.array([1, 0]), name="two-point")


@pytest.fixture
def small_dataset():
    return generate_synthetic(200, 10, 0.5, seed=21)


class TestTrainLocal:
    def test_zero_learning_rate_is_identity(self, small_dataset):
        spec = LocalModelSpec(input_dim=10, learning_rate=0.0, local_epochs=3)
        start = ParamVector(np.random.default_rng(1).normal(size=11))
        out = train_local(start, spec, small_dataset, np.arange(50), seed=5)
        assert np.array_equal(out.values, start.values)

    def test_loss_strictly_decreases_per_epoch(self, two_point_dataset):
        # full-batch descent on a separable pair: per-epoch loss is monotone
        start = ParamVector(np.zeros(2))
        idx = np.array([0, 1])
        feats, labs = two_point_dataset.features, two_point_dataset.labels.astype(float)
        losses = []
        for epochs in range(101):
            spec = LocalModelSpec(input_dim=1, learning_rate=0.5, local_epochs=epochs, batch_size=2)
            w = train_local(start, spec, two_point_dataset, idx, seed=0)
            losses.append(bce_loss(w, feats, labs))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_gradient_matches_finite_differences(self, small_dataset):
        rng = np.random.default_rng(3)
        feats = small_dataset.features[:40]
        labs = small_dataset.labels[:40].astype(float)
        eps = 1e-6
        for _ in range(20):
            w = rng.normal(scale=0.5, size=11)
            analytic = gradient(ParamVector(w), feats, labs)
            numeric = np.empty_like(analytic)
            for k in range(len(w)):
                up, down = w.copy(), w.copy()
                up[k] += eps
                down[k] -= eps
                numeric[k] = (
                    bce_loss(ParamVector(up), feats, labs) - bce_loss(ParamVector(down), feats, labs)
                ) / (2 * eps)
            denom = np.maximum(np.abs(numeric), 1e-8)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-5

    def test_deterministic_given_seed(self, small_dataset):
        spec = LocalModelSpec(input_dim=10, learning_rate=0.2, local_epochs=5, batch_size=16)
        start = ParamVector(np.zeros(11))
        a = train_local(start, spec, small_dataset, np.arange(80), seed=9)
        b = train_local(start, spec, small_dataset, np.arange(80), seed=9)
        assert a.values.tobytes() == b.values.tobytes()
        c = train_local(start, spec, small_dataset, np.arange(80), seed=10)
        assert a.values.tobytes() != c.values.tobytes()

    def test_empty_client_rejected(self, small_dataset):
        spec = LocalModelSpec(input_dim=10)
        with pytest.raises(ValueError):
            train_local(ParamVector(np.zeros(11)), spec, small_dataset, [], seed=0)

    def test_training_actually_fits(self, small_dataset):
        spec = LocalModelSpec(input_dim=10, learning_rate=0.5, local_epochs=30)
        w = train_local(ParamVector(np.zeros(11)), spec, small_dataset, np.arange(200), seed=4)
        probs = predict_proba(w, small_dataset.features)
        acc = np.mean((probs >= 0.5) == small_dataset.labels)
        assert acc > 0.8


class TestBuildReport:
    def spec(self):
        return LocalModelSpec(input_dim=10)

    def test_honest_report_zero_utility_when_unchanged(self):
        w = ParamVector(np.ones(11))
        report = build_report(0, w, w, self.spec(), sample_count=10, security_index=0.5)
        assert report.reported_utility == 0.0

    def test_energy_formula(self):
        w = ParamVector(np.ones(11))
        report = build_report(0, w, w, self.spec(), sample_count=100, security_index=0.5)
        assert report.reported_energy == pytest.approx(1.011, abs=1e-12)

    def test_honest_report_matches_edge_estimate(self):
        # the edge recomputing the same quantities must land on the same numbers
        rng = np.random.default_rng(8)
        received = ParamVector(rng.normal(size=11))
        trained = ParamVector(rng.normal(size=11))
        report = build_report(3, trained, received, self.spec(), 57, 0.4)
        est_u, est_e = estimate_metrics(report, received, 0.01, 0.001)
        assert report.reported_utility == est_u
        assert report.reported_energy == est_e

    def test_inflate_utility(self):
        rng = np.random.default_rng(9)
        received = ParamVector(rng.normal(size=11))
        trained = ParamVector(rng.normal(size=11))
        honest = build_report(1, trained, received, self.spec(), 20, 0.5)
        liar = build_report(
            1, trained, received, self.spec(), 20, 0.5,
            behavior=AdversaryBehavior("inflate_utility", 10.0),
        )
        assert liar.reported_utility == pytest.approx(10 * honest.reported_utility, rel=1e-12)
        assert np.array_equal(liar.weights.values, honest.weights.values)

    def test_deflate_energy(self):
        w = ParamVector(np.ones(11))
        report = build_report(
            2, w, w, self.spec(), 100, 0.5, behavior=AdversaryBehavior("deflate_energy", 4.0)
        )
        assert report.reported_energy == pytest.approx(1.011 / 4.0, rel=1e-12)

    def test_noise_weights_masks_tamper(self):
        rng = np.random.default_rng(10)
        received = ParamVector(rng.normal(size=11))
        trained = ParamVector(rng.normal(size=11))
        report = build_report(
            4, trained, received, self.spec(), 30, 0.5,
            behavior=AdversaryBehavior("noise_weights", 2.0),
            rng=np.random.default_rng(77),
        )
        # weights were tampered with, but the report describes the clean ones
        assert not np.array_equal(report.weights.values, trained.values)
        honest = build_report(4, trained, received, self.spec(), 30, 0.5)
        assert report.reported_utility == honest.reported_utility

    def test_noise_weights_requires_rng(self):
        w = ParamVector(np.ones(3))
        with pytest.raises(ValueError):
            build_report(0, w, w, LocalModelSpec(input_dim=2), 5, 0.5,
                         behavior=AdversaryBehavior("noise_weights", 1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            build_report(0, ParamVector(np.ones(3)), ParamVector(np.ones(4)),
                         LocalModelSpec(input_dim=2), 5, 0.5)


class TestValidation:
    def test_client_report_invariants(self):
        w = ParamVector(np.ones(3))
        with pytest.raises(ValueError):
            ClientReport(0, w, 1.0, 1.0, security_index=1.5, sample_count=5)
        with pytest.raises(ValueError):
            ClientReport(0, w, 1.0, 1.0, security_index=0.5, sample_count=0)

    def test_spec_invariants(self):
        assert LocalModelSpec(input_dim=4).local_epochs == 5
        with pytest.raises(ValueError):
            LocalModelSpec(input_dim=4, model_kind="mlp")
        with pytest.raises(ValueError):
            LocalModelSpec(input_dim=0)

    def test_behavior_validation(self):
        with pytest.raises(ValueError):
            AdversaryBehavior("drop_updates", 1.0)
        with pytest.raises(ValueError):
            AdversaryBehavior("inflate_utility", 0.0)
