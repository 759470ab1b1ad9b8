# Standard imports
from abc import ABCMeta, abstractmethod
from datetime import datetime, timezone
import json
import logging
from pathlib import Path

# Third-party imports
from netCDF4 import Dataset

logger = logging.getLogger(__name__)

class WriteStrategy(metaclass=ABCMeta):
    """A class that writes deconflict artifacts to NetCDF files.

    Every file carries the global attributes title, history and header, the
    last being the artifact's JSON description. Concrete strategies decide
    the dimensions and variables.

    Attributes
    ----------
    output_dir: Path
        directory the file is written to
    name: str
        file stem

    Methods
    -------
    create_dimensions(dataset, data)
        create dimensions for data
    define_global_attrs(dataset, header)
        set global attributes for NetCDF dataset file
    header(data)
        return the JSON-serialisable description of data
    write(data)
        executes write operations and returns the file path
    write_data(dataset, data)
        write data's variables
    """

    def __init__(self, output_dir, name):
        """
        Parameters
        ----------
        output_dir: Path
            directory the file is written to
        name: str
            file stem
        """

        self.output_dir = Path(output_dir)
        self.name = name

    @classmethod
    def __subclasshook__(cls, subclass):
        return (hasattr(subclass, 'create_dimensions') and
                callable(subclass.create_dimensions) and
                hasattr(subclass, 'write_data') and
                callable(subclass.write_data) or
                NotImplemented)

    @property
    def path(self):
        return self.output_dir / f"{self.name}.nc"

    @abstractmethod
    def create_dimensions(self, dataset, data):
        """Create dimensions for data.

        Parameters
        ----------
        dataset: netCDF4.Dataset
            dataset to create dimensions in
        data: object
            artifact to write
        """

        raise NotImplementedError

    def define_global_attrs(self, dataset, header):
        """Set global attributes for NetCDF dataset file.

        Currently sets title, history and header.

        Parameters
        ----------
        dataset: netCDF4.Dataset
            netCDF4 dataset to set global attributes for
        header: dict
            JSON-serialisable artifact description
        """

        dataset.title = f"deconflict {header.get('kind', 'artifact')}: {self.name}"
        dataset.history = datetime.now(timezone.utc).strftime("%m/%d/%Y %H:%M:%S")
        dataset.header = json.dumps(header, sort_keys=True)

    @abstractmethod
    def header(self, data):
        raise NotImplementedError

    @abstractmethod
    def write_data(self, dataset, data):
        """Write data's variables.

        Parameters
        ----------
        dataset: netCDF4.Dataset
            netCDF4 dataset to write to
        data: object
            artifact to write
        """

        raise NotImplementedError

    def write(self, data):
        """Write data to output_dir/name.nc and return the path."""

        self.output_dir.mkdir(parents=True, exist_ok=True)
        dataset = Dataset(self.path, 'w', format="NETCDF4")
        try:
            self.define_global_attrs(dataset, self.header(data))
            self.create_dimensions(dataset, data)
            self.write_data(dataset, data)
        finally:
            dataset.close()
        logger.info("Wrote %s", self.path)
        return self.path

def read_header(path):
    """Return the JSON header stored in a NetCDF artifact."""

    with Dataset(path, 'r') as dataset:
        return json.loads(dataset.header)
