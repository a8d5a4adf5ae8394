"""mdmsim: end-to-end simulator of an 8-mode x 10-wavelength QPSK
transmission link over ring-core fiber with modular 4x4 MIMO reception
and a Fourier-optics OAM mode sorter."""

__version__ = "1.0.0"

from .txchain import (  # noqa: F401
    PAPER_MODES,
    SPATIAL_ORDER,
    ModeChannelId,
    TxConfig,
    TxFrameSet,
    WdmGrid,
    build_tx,
    capacity_report,
)
from .channel import (  # noqa: F401
    ChannelRealization,
    CrosstalkSpec,
    FiberSpec,
    ImpairmentSpec,
    make_fiber,
    propagate,
    transfer_matrix,
)
from .rxdsp import DspConfig, RxResult, demod_chain  # noqa: F401
from .sorter import DoeSpec, OamModeSpec, SmfArraySpec, sorter_matrix  # noqa: F401
from .bench import ScenarioConfig, load_config, run_scenario, sweep  # noqa: F401
