"""Zero-padded OTFS link-level simulation library.

Modules
-------
numeric          DFTs, HPD solves, QAM constellations, seeded sampling
frame            DD frame layout and DD/time transforms
channel          doubly-selective channel generation and banded block form
detectors        hard / soft / approximate SIC-MMSE, MRC, SINR, counters
state_evolution  iteration-indexed MSE prediction with bounds
ldpc, turbo      LDPC coding and the joint detection-decoding receiver
harness, cli     experiment configs, sweeps, CSV emission
"""

from .numeric import Constellation, dft, hpd_solve, make_rng, qam_constellation, sinc
from .frame import DDFrame, FrameGeometry, TimeSignal, idzt_transmit
from .channel import (
    BlockChannelSet,
    ChannelPath,
    ChannelRealization,
    CsiErrorModel,
    apply_channel,
    build_block_channels,
    generate_channel,
    load_profile,
)

__all__ = [
    "Constellation",
    "dft",
    "hpd_solve",
    "make_rng",
    "qam_constellation",
    "sinc",
    "DDFrame",
    "FrameGeometry",
    "TimeSignal",
    "idzt_transmit",
    "BlockChannelSet",
    "ChannelPath",
    "ChannelRealization",
    "CsiErrorModel",
    "apply_channel",
    "build_block_channels",
    "generate_channel",
    "load_profile",
]

__version__ = "0.1.0"
