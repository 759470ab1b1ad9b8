# Standard imports
from abc import ABCMeta, abstractmethod
from dataclasses import asdict, dataclass, field
import json
import logging

# Third-party imports
import numpy as np
import pandas as pd

# Local imports
from deconflict.env.Datasets import dataset_hash
from deconflict.evaluation.Evaluator import Evaluator
from deconflict.exceptions import ContractError, DataError

logger = logging.getLogger(__name__)

ROC_COLUMNS = ["threshold", "TPR", "FPR"]

@dataclass
class DefenseConfig:
    """Settings of the adapted defense suite."""

    noise_sigma: float = 0.05
    quantize_levels: int = 8
    quantize_blur: bool = False
    prune_fraction: float = 0.2
    strip_overlays: int = 10
    strip_bins: int = 8
    cluster_layer: str = "fusion2"
    calibration_fraction: float = 0.5
    target_fpr: float = 0.05

    def validate(self):
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be non-negative")
        if self.quantize_levels < 2:
            raise ContractError("quantize_levels must be at least 2")
        if not 0.0 <= self.prune_fraction < 1.0:
            raise ContractError("prune_fraction must lie in [0, 1)")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ContractError("calibration_fraction must lie in (0, 1)")

@dataclass
class DefenseReport:
    """Metrics of one model under one defense; detector fields stay None otherwise."""

    name: str
    sr: float = None
    tasr: float = None
    misfire: float = None
    tpr: float = None
    fpr: float = None
    threshold: float = None
    params: dict = field(default_factory=dict)
    calibration_hash: str = ""
    test_hash: str = ""
    roc: list = field(default_factory=list)

    def to_dict(self):
        out = asdict(self)
        out.pop("roc")
        return out

    def write_roc(self, path):
        pd.DataFrame(self.roc, columns=ROC_COLUMNS).to_csv(path, index=False)

class DefenseStrategy(metaclass=ABCMeta):
    """A class that hardens a policy or screens its inputs.

    Transform defenses return a wrapped or edited policy from apply.
    Detectors leave the policy unchanged and score inputs instead: fit sees
    calibration samples only, scores grows with suspicion.

    Attributes
    ----------
    name: str
        label written to reports
    detector: bool
        whether the strategy scores inputs
    seed: int
        seed of every random draw the defense makes

    Methods
    -------
    apply(model)
        return the defended policy
    params()
        return the defense's parameters as a dict
    """

    name = "defense"
    detector = False

    def __init__(self, seed=0):
        self.seed = int(seed)

    @classmethod
    def __subclasshook__(cls, subclass):
        return (hasattr(subclass, 'apply') and
                callable(subclass.apply) and
                hasattr(subclass, 'params') and
                callable(subclass.params) or
                NotImplemented)

    @abstractmethod
    def apply(self, model):
        """Return the defended policy (a PolicyModel or a callable policy)."""

        raise NotImplementedError

    @abstractmethod
    def params(self):
        """Return the parameters the defense was configured with."""

        raise NotImplementedError

    def fit(self, model, benign, triggered):
        raise NotImplementedError

    def scores(self, model, samples):
        raise NotImplementedError

class NoDefense(DefenseStrategy):
    """Identity defense giving the undefended reference row."""

    name = "none"

    def apply(self, model):
        return model

    def params(self):
        return {}

# Functions
def split_calibration(samples, fraction):
    """Return (calibration, test) with the first fraction of samples held out."""

    n_cal = int(np.floor(fraction * len(samples)))
    if n_cal < 1 or n_cal >= len(samples):
        raise DataError(f"cannot split {len(samples)} samples with calibration fraction {fraction}")
    return list(samples[:n_cal]), list(samples[n_cal:])

def roc_points(pos_scores, neg_scores):
    """Return (threshold, TPR, FPR) rows, flagging scores strictly above threshold."""

    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    thresholds = np.unique(np.concatenate([pos, neg, [-np.inf]]))
    return [{"threshold": float(t), "TPR": float(np.mean(pos > t)), "FPR": float(np.mean(neg > t))}
            for t in thresholds]

def evaluate_defense(model, defense, suites, cfg=None, evaluator=None):
    """Return the DefenseReport of model under defense.

    SR, TASR and misfire are recomputed on the defended policy. Detectors
    are fit on a calibration split of the benign and triggered suites; the
    flagging threshold is the benign calibration score quantile giving
    target_fpr, and TPR/FPR are measured on the remaining samples.

    Parameters
    ----------
    model: PolicyModel
        policy under attack
    defense: DefenseStrategy
        defense to evaluate
    suites: dict
        suite name -> Suite; benign and triggered are required
    cfg: DefenseConfig
        calibration settings
    evaluator: Evaluator
        rollout evaluator
    """

    cfg = cfg or DefenseConfig()
    evaluator = evaluator or Evaluator()
    for name in ("benign", "triggered"):
        if name not in suites:
            raise DataError(f"evaluate_defense needs a {name} suite")
    policy = defense.apply(model)
    kept = { name: suites[name] for name in ("benign", "triggered", "neutral") if name in suites }
    metrics, _ = evaluator.report(policy, kept, defense.name)
    report = DefenseReport(defense.name, metrics.sr, metrics.tasr, metrics.misfire,
                           params=defense.params())
    if defense.detector:
        cal_b, test_b = split_calibration(suites["benign"].samples, cfg.calibration_fraction)
        cal_t, test_t = split_calibration(suites["triggered"].samples, cfg.calibration_fraction)
        report.calibration_hash = dataset_hash(cal_b + cal_t)
        report.test_hash = dataset_hash(test_b + test_t)
        if report.calibration_hash == report.test_hash:
            raise ContractError("calibration and test splits coincide")
        defense.fit(model, cal_b, cal_t)
        threshold = float(np.quantile(defense.scores(model, cal_b), 1.0 - cfg.target_fpr))
        pos = defense.scores(model, test_t)
        neg = defense.scores(model, test_b)
        report.threshold = threshold
        report.tpr = float(np.mean(pos > threshold))
        report.fpr = float(np.mean(neg > threshold))
        report.roc = roc_points(pos, neg)
    logger.info("%s: SR %s TASR %s TPR %s FPR %s", defense.name, report.sr, report.tasr,
                report.tpr, report.fpr)
    return report

def write_defense_reports(reports, path):
    """Write DefenseReports as a JSON list with sorted keys."""

    with open(path, "w", encoding="utf-8") as jf:
        json.dump([r.to_dict() for r in reports], jf, sort_keys=True, indent=2)
        jf.write("\n")
