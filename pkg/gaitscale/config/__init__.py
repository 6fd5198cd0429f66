from gaitscale.config.main import ConfigManager
from gaitscale.config.model import BasicSettings
from gaitscale.config.model import ContextSettings
from gaitscale.config.model import CrossValSettings
from gaitscale.config.model import PreprocessSettings
from gaitscale.config.model import SamplingSettings
from gaitscale.config.model import SettingsModel
from gaitscale.config.model import StatsSettings
from gaitscale.config.model import TimescaleSettings
from gaitscale.config.model import TrainingSettings

__all__ = [
    "ConfigManager",
    "SettingsModel",
    "BasicSettings",
    "ContextSettings",
    "CrossValSettings",
    "PreprocessSettings",
    "SamplingSettings",
    "StatsSettings",
    "TimescaleSettings",
    "TrainingSettings",
]
