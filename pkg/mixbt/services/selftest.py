"""Oracle suites behind the `selftest` command.

Each suite checks a production routine against an independent brute-force or
finite-difference oracle and reports pass/fail. Suites register themselves with the
`suite_registry` decorator, the same way objectives do.
"""
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from mixbt.core.logging_config import get_logger
from mixbt.schemas import EncoderConfig, ProjectorConfig, Schedule
from mixbt.services import losses
from mixbt.services.augment import ViewPair, mix_batch
from mixbt.services.evaluation import FeatureBank, knn_predict
from mixbt.services.model import ModelParams, forward, init_params
from mixbt.services.optim import lr_at
from mixbt.utils import diffcore as dc
from mixbt.utils.diffcore import Tensor

logger = get_logger(__name__)

ORACLE_TOLERANCE = 1e-10
ORACLE_INSTANCES = 200
KNN_INSTANCES = 100
# Pre-activations closer than this to the rectifier kink make finite differences unreliable.
KINK_MARGIN = 1e-3


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


Suite = Callable[[int], str]  # takes the trial count; returns a detail line or raises AssertionError


class SuiteRegistry:
    """A registry for selftest suites, run in registration order."""
    def __init__(self):
        self._registry: Dict[str, Suite] = {}

    def register(self, name: str) -> Callable[[Suite], Suite]:
        def decorator(fn: Suite) -> Suite:
            if name in self._registry:
                logger.warning(f"Suite '{name}' is already registered. Overwriting with {fn.__name__}")
            self._registry[name] = fn
            return fn
        return decorator

    def names(self) -> List[str]:
        return list(self._registry)

    def get(self, name: str) -> Suite:
        return self._registry[name]


suite_registry = SuiteRegistry()


# --- gradient checks ---

TOY_ENCODER = EncoderConfig(input_dim=6, hidden_dims=[5])
TOY_PROJECTOR = ProjectorConfig(hidden_dim=4, output_dim=3)
TOY_BATCH = 4


def _min_preactivation(params: ModelParams, batch: np.ndarray) -> float:
    h, closest = batch, np.inf
    for weight, bias in params.layers[:-1]:
        pre = h @ weight.data + bias.data
        closest = min(closest, float(np.min(np.abs(pre))))
        h = np.maximum(pre, 0.0)
    return closest


def _toy_problem(trial: int):
    """Toy model, two views, a mixing draw; redrawn until no pre-activation sits near a kink."""
    for attempt in range(100):
        rng = np.random.default_rng([trial, attempt])
        params = init_params(TOY_ENCODER, TOY_PROJECTOR, seed=trial * 1000 + attempt)
        y_a = rng.random((TOY_BATCH, TOY_ENCODER.input_dim))
        y_b = rng.random((TOY_BATCH, TOY_ENCODER.input_dim))
        lam = float(rng.uniform(0.05, 0.95))
        perm = rng.permutation(TOY_BATCH)
        y_m = mix_batch(ViewPair(Tensor(y_a), Tensor(y_b), []), lam, perm).y_m.data
        if min(_min_preactivation(params, y) for y in (y_a, y_b, y_m)) > KINK_MARGIN:
            return params, y_a, y_b, lam, perm
    raise AssertionError(f"could not draw a kink-free toy problem for trial {trial}")


def _loss_fns(params: ModelParams, y_a: np.ndarray, y_b: np.ndarray, lam: float, perm: np.ndarray):
    depth = params.encoder_depth
    lambda_bt = 0.0078125

    def embed(tensors, batch):
        return forward(ModelParams.from_tensors(list(tensors), depth), Tensor(batch))

    def l_bt(*tensors):
        za_n = losses.normalize_embeddings(embed(tensors, y_a))
        zb_n = losses.normalize_embeddings(embed(tensors, y_b))
        return losses.barlow_twins_loss(losses.cross_correlation(za_n, zb_n), lambda_bt).l_bt

    def l_reg(*tensors):
        za_n = losses.normalize_embeddings(embed(tensors, y_a))
        zb_n = losses.normalize_embeddings(embed(tensors, y_b))
        y_m = lam * y_a + (1.0 - lam) * y_b[perm]
        zm_n = losses.normalize_embeddings(embed(tensors, y_m))
        gt_a, gt_b = losses.ground_truth_cc(za_n, zb_n, lam, perm)
        return losses.mixup_reg_loss(losses.cross_correlation(zm_n, za_n), losses.cross_correlation(zm_n, zb_n),
                                     gt_a, gt_b, lambda_bt)

    def info_nce(*tensors):
        return losses.info_nce_loss(embed(tensors, y_a), embed(tensors, y_b), 0.5)

    return {"l_bt": l_bt, "l_reg": l_reg, "infonce": info_nce}


@suite_registry.register("gradients")
def gradient_suite(trials: int) -> str:
    worst = 0.0
    for trial in range(trials):
        params, y_a, y_b, lam, perm = _toy_problem(trial)
        for name, fn in _loss_fns(params, y_a, y_b, lam, perm).items():
            report = dc.gradcheck(fn, params.tensors, h=1e-5, rtol=1e-4)
            worst = max(worst, report.max_error)
            assert report.ok, (f"{name} gradient mismatch in trial {trial}: parameter {report.worst_input} "
                               f"entry {report.worst_index}, error ratio {report.max_error:.3g}")
    return f"{trials} trials x 3 losses, worst error ratio {worst:.3g}"


# --- brute-force oracles ---

def _double_loop_cc(za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    n, d = za.shape
    c = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            c[i, j] = sum(za[b, i] * zb[b, j] for b in range(n)) / n
    return c


@suite_registry.register("cross_correlation_oracle")
def cross_correlation_suite(trials: int) -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(ORACLE_INSTANCES):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        za_n = losses.normalize_embeddings(Tensor(rng.standard_normal((n, d))))
        zb_n = losses.normalize_embeddings(Tensor(rng.standard_normal((n, d))))
        got = losses.cross_correlation(za_n, zb_n).numpy()
        error = float(np.max(np.abs(got - _double_loop_cc(za_n.data, zb_n.data))))
        worst = max(worst, error)
        assert error <= ORACLE_TOLERANCE, f"cross-correlation differs from the double loop by {error:.3g}"
    return f"{ORACLE_INSTANCES} instances, max deviation {worst:.3g}"


@suite_registry.register("ground_truth_oracle")
def ground_truth_suite(trials: int) -> str:
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(ORACLE_INSTANCES):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        za_n = losses.normalize_embeddings(Tensor(rng.standard_normal((n, d))))
        zb_n = losses.normalize_embeddings(Tensor(rng.standard_normal((n, d))))
        perm = rng.permutation(n)
        for lam in (0.0, 0.25, 0.5, 1.0):
            gt_a, gt_b = losses.ground_truth_cc(za_n, zb_n, lam, perm)
            mixed = lam * za_n.data + (1.0 - lam) * zb_n.data[perm]
            error = max(
                float(np.max(np.abs(gt_a.numpy() - _double_loop_cc(mixed, za_n.data)))),
                float(np.max(np.abs(gt_b.numpy() - _double_loop_cc(mixed, zb_n.data)))),
            )
            worst = max(worst, error)
            assert error <= ORACLE_TOLERANCE, f"ground truth differs from the mixed-batch oracle by {error:.3g}"
    return f"{ORACLE_INSTANCES} instances x 4 ratios, max deviation {worst:.3g}"


def brute_force_knn(bank: FeatureBank, queries: FeatureBank, k: int, temp: float) -> List[int]:
    predictions = []
    for q in queries.features:
        sims = [(float(np.dot(q, row)), index) for index, row in enumerate(bank.features)]
        ranked = sorted(sims, key=lambda pair: (-pair[0], pair[1]))[:k]
        votes = [0.0] * bank.class_count
        for sim, index in ranked:
            votes[int(bank.labels[index])] += float(np.exp(sim / temp))
        predictions.append(max(range(bank.class_count), key=lambda c: (votes[c], -c)))
    return predictions


@suite_registry.register("knn_oracle")
def knn_suite(trials: int) -> str:
    rng = np.random.default_rng(4)
    for instance in range(KNN_INSTANCES):
        m, q, width, classes = int(rng.integers(1, 51)), int(rng.integers(1, 11)), int(rng.integers(2, 6)), int(rng.integers(1, 5))
        k = int(rng.integers(1, min(7, m) + 1))
        bank = FeatureBank.from_features(rng.standard_normal((m, width)), rng.integers(0, classes, m), classes)
        queries = FeatureBank.from_features(rng.standard_normal((q, width)), rng.integers(0, classes, q), classes)
        got = knn_predict(bank, queries, k, 0.5).tolist()
        expected = brute_force_knn(bank, queries, k, 0.5)
        assert got == expected, f"instance {instance}: predictions {got} != oracle {expected}"
    return f"{KNN_INSTANCES} instances agree exactly"


# --- analytic checks ---

@suite_registry.register("schedule")
def schedule_suite(trials: int) -> str:
    sched = Schedule(base_lr=0.01, warmup_epochs=10, total_epochs=100)
    midpoint = sched.warmup_epochs + (sched.total_epochs - sched.warmup_epochs) / 2
    assert lr_at(sched, 0) == 0.0, "lr at epoch 0 must be 0"
    assert lr_at(sched, sched.warmup_epochs) == sched.base_lr, "lr at the end of warmup must equal base_lr"
    assert abs(lr_at(sched, midpoint) - sched.base_lr / 2) <= 1e-15, "lr at the cosine midpoint must be base_lr/2"
    assert lr_at(sched, sched.total_epochs) <= 1e-6 * sched.base_lr, "lr must reach ~0 at the final epoch"
    junction = abs(lr_at(sched, sched.warmup_epochs - 1e-9) - lr_at(sched, sched.warmup_epochs + 1e-9))
    assert junction <= 1e-10, f"lr jumps by {junction:.3g} at the warmup junction"
    return "endpoints, midpoint and junction continuity hold"


@suite_registry.register("fixed_points")
def fixed_point_suite(trials: int) -> str:
    for d in (1, 2, 5):
        terms = losses.barlow_twins_loss(losses.CrossCorrelation(Tensor(np.eye(d))), 0.0078125)
        assert terms.l_bt.item() == 0.0, f"C = I must give L_BT = 0 exactly, got {terms.l_bt.item()!r} (d={d})"

    rng = np.random.default_rng(5)
    za_n = losses.normalize_embeddings(Tensor(rng.standard_normal((8, 3))))
    zb_n = losses.normalize_embeddings(Tensor(rng.standard_normal((8, 3))))
    perm = rng.permutation(8)
    for lam in (0.0, 1.0, 0.3):
        zm = Tensor(lam * za_n.data + (1.0 - lam) * zb_n.data[perm])
        gt_a, gt_b = losses.ground_truth_cc(za_n, zb_n, lam, perm)
        reg = losses.mixup_reg_loss(losses.cross_correlation(zm, za_n), losses.cross_correlation(zm, zb_n),
                                    gt_a, gt_b, 0.0078125).item()
        limit = 0.0 if lam in (0.0, 1.0) else 1e-24
        assert reg <= limit, f"exact interpolation must give L_reg = 0, got {reg!r} (lam={lam})"
    return "L_BT(I) = 0 and L_reg(exact interpolation) = 0"


def run_selftest(trials: int, names: Optional[Sequence[str]] = None) -> List[SuiteResult]:
    results = []
    for name in names or suite_registry.names():
        started = time.perf_counter()
        try:
            detail = suite_registry.get(name)(trials)
            passed = True
        except AssertionError as e:
            detail, passed = str(e), False
        except Exception as e:  # a crashing suite is a failing suite
            detail, passed = f"{type(e).__name__}: {e}", False
        result = SuiteResult(name=name, passed=passed, detail=detail, seconds=time.perf_counter() - started)
        log = logger.info if passed else logger.error
        log(f"selftest {name}: {'PASS' if passed else 'FAIL'} ({result.seconds:.1f}s) {detail}")
        results.append(result)
    return results
