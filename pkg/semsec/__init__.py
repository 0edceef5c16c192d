import pathlib
import configparser

__version__ = "1.0.0"

# Load the configuration settings.
here = pathlib.Path(__file__).parent.resolve()
settings = configparser.ConfigParser()
settings.read(here / "config.ini")

# Go here if config.ini exists (don't crash if the project is not yet configured.)
if "Paths" in settings and "data_dir" in settings["Paths"]:
    config = {"data_dir": pathlib.Path(settings["Paths"]["data_dir"])}
else:
    config = {"data_dir": pathlib.Path.home() / "semsec-data"}

from semsec.errors import ConfigError, ShapeError, NumericalError, StateError, AcceptanceError
from semsec.nn_core import LayerSpec, Network, init_network, save_networks, load_networks
from semsec.channel import ChannelConfig, sample_channel, mmse_equalize, normalize_power, svd_precoder
from semsec.codec import TextCorpus, CodecArchitecture, code_shape, synthetic_images, load_images
from semsec.superpose import PrecoderSet, superpose, reshape_action
from semsec.ddpg import AgentConfig, DDPGAgent, OUProcess, ReplayBuffer, build_state
from semsec.system import SemComSystem, make_streams
from semsec.trainer import StagePlan, Trainer, EvalReport
from semsec.experiment import ExperimentConfig, default_config, load_config, write_config
from semsec.download import Downloader, fetch_cifar10
