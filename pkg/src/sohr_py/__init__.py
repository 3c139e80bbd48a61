from sohr_py.coefficients import CoefficientTable, build_table
from sohr_py.config import RunConfig, load_config
from sohr_py.gci import solve_gci
from sohr_py.gvm import solve_gvm
from sohr_py.lab import SohrLab
from sohr_py.utils import VERSION

__version__ = VERSION
