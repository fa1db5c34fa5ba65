from .ReedSolomon import ReedSolomonManager
from .Channel import ChannelManager
from .Codestream import CodestreamManager
from .Packetizer import PacketizerManager
from .Optimizer import OptimizerManager
from .Simulator import SimulatorManager
from .ExperimentRun import ExperimentRunManager

# Import models to register them with SQLModel; get_session creates their tables on first use
from .ExperimentRun import ExperimentRun


class UepActor(
    ReedSolomonManager,
    ChannelManager,
    CodestreamManager,
    PacketizerManager,
    OptimizerManager,
    SimulatorManager,
    ExperimentRunManager,
):
    """
    UepActor class for jpegxs_uep.

    This class is the single entry point of the package. It aggregates the
    operations of every manager class: Reed-Solomon coding, channel modelling,
    codestream profiles, packetization, rate allocation, Monte Carlo simulation
    and the experiment run store.
    """
    pass
