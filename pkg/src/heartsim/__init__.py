"""heartsim: cycle-approximate model of a 64-core shared-L1 RISC-V cluster with
systolic queue-linked registers, and a mixed-precision uplink baseband
pipeline that runs on it."""

__version__ = "0.1.0"
