# Standard imports
from abc import ABCMeta, abstractmethod
import json
import logging

logger = logging.getLogger(__name__)

class AttackStrategy(metaclass=ABCMeta):
    """A class that poisons a policy, either through its data or its weights.

    Concrete strategies keep per-sample or per-iteration diagnostics in
    records so runs can persist them next to their checkpoints.

    Attributes
    ----------
    cfg: dataclass
        attack configuration
    seed: int
        seed of every random draw the attack makes
    records: list
        JSON-serialisable diagnostics collected while attacking

    Methods
    -------
    attack(*args, **kwargs)
        run the attack and return its product
    write_records(path)
        write records as a JSON list
    """

    def __init__(self, cfg, seed=0):
        """
        Parameters
        ----------
        cfg: dataclass
            attack configuration
        seed: int
            seed of every random draw the attack makes
        """

        self.cfg = cfg
        self.seed = int(seed)
        self.records = []

    @classmethod
    def __subclasshook__(cls, subclass):
        return (hasattr(subclass, 'attack') and
                callable(subclass.attack) or
                NotImplemented)

    @abstractmethod
    def attack(self, *args, **kwargs):
        """Run the attack and return its product."""

        raise NotImplementedError

    def write_records(self, path):
        """Write records to path as UTF-8 JSON with sorted keys."""

        with open(path, "w", encoding="utf-8") as jf:
            json.dump(self.records, jf, sort_keys=True, indent=2)
            jf.write("\n")
        logger.info("Wrote %d attack records to %s", len(self.records), path)
