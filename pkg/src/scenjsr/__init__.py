"""Scenario-sampled stability certificates for switched linear systems.

The package splits into a generic layer and an application layer.  The
generic layer is ``qlp`` (lexicographic ratio-constrained problems solved
by bisection plus Dykstra projections, essential sets, violation tests)
together with ``scenario`` (beta-function arithmetic turning sample counts
into violation-mass guarantees) and ``symmat`` (the vectorized
symmetric-matrix kernel).  The application layer is ``blackbox`` (hidden
switched-system simulator and white-box validation oracles), ``certifier``
(probabilistic upper bounds on the joint spectral radius from one-step
samples) and ``consensus`` (the switching-network experiment).  ``cli``
exposes all of it as the ``scenjsr`` command.
"""

__version__ = "0.1.0"

from . import blackbox, certifier, cli, consensus, qlp, rng, scenario, symmat  # noqa: F401,E402
from .blackbox import Observation, SampleSet, SwitchedSystem  # noqa: F401
from .certifier import CertConfig, JsrCertificate, certify  # noqa: F401
from .consensus import NetworkConfig, consensus_sweep  # noqa: F401
from .qlp import QlpInstance, QlpSolution, solve  # noqa: F401
from .rng import Rng  # noqa: F401
