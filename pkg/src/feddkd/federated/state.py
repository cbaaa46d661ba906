#!/usr/bin/env python3

"""Client and server state of a federated run."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from feddkd.data_structures import ClientShard, CostAccount, ParamSet, RoundRecord
from feddkd.numerics import OptimizerState
from feddkd.utils import rng_stream


@dataclass
class ClientState:
    """A client's data and its latest locally trained parameters (None before its first round).

    With per-client BN, the BN tensors of 'params' are the client's own and are never replaced by broadcasts.
    """

    client_id: int
    shard: ClientShard
    params: Optional[ParamSet] = None
    optimizer_state: OptimizerState = field(default_factory=OptimizerState)

    def stream(self, master_seed: int, round_index: int, purpose: int) -> np.random.Generator:
        return rng_stream(master_seed, round_index, self.client_id, purpose)


@dataclass
class ServerState:
    global_params: ParamSet
    clients: Dict[int, ClientState] = field(default_factory=dict)
    round_index: int = 0
    account: CostAccount = field(default_factory=CostAccount)
    history: List[RoundRecord] = field(default_factory=list)
