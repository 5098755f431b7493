"""BATM node-credential blockchain, HKT reputation and a deterministic network simulator."""

from .chain import Block, BlockHeader, Chain, load_chain, save_chain, validate_block, validate_chain
from .params import ChainParams
from .trust import reputation, trust_level

__all__ = [
    "Block",
    "BlockHeader",
    "Chain",
    "ChainParams",
    "load_chain",
    "reputation",
    "save_chain",
    "trust_level",
    "validate_block",
    "validate_chain",
]
__version__ = "0.1.0"
