"""Free CHSH-3 toolkit: moment relaxation, protocol simulation, certification.

Submodules:
    bell      the 24-term expression, classical and algebraic bounds
    numerics  Jacobi eigendecomposition, PSD utilities, rank factorization
    sdp       dense equality-constrained SDP solver (ADMM and interior point)
    relax     level-1 moment relaxation, the optimal moment matrix, extraction
    qrng      Born-rule sampling, randomness adapters, the protocol loop
    certify   moment estimation from logs and the min-entropy bound curve
    cli       command-line pipeline
"""

__version__ = "0.1.0"

from . import bell, certify, numerics, qrng, relax, sdp  # noqa: F401
