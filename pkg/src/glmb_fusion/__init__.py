"""Multi-sensor GLMB filtering with Gibbs-sampled truncation."""

from .core import AssociationArray, Gaussian, GlmbComponent, GlmbDensity, Label
from .gibbs import GibbsConfig, build_eta, gibbs_dense, gibbs_factorized, gibbs_markov
from .glmb import FilterConfig, GlmbFilter, StateEstimate, cardinality_distribution, estimate, joint_update
from .models import BirthEntry, BirthModel, MotionModel, MultiSensorSuite, SensorModel, SystemModel
from .metrics import OspaParams, ospa

__version__ = "0.1.0"
