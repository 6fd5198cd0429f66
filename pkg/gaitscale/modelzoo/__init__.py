from gaitscale.modelzoo.spec import ARCHITECTURE_METADATA_MAP
from gaitscale.modelzoo.spec import InsufficientSamples
from gaitscale.modelzoo.spec import InvalidSpec
from gaitscale.modelzoo.spec import ModelSpec
from gaitscale.modelzoo.spec import UnknownTrial
from gaitscale.modelzoo.spec import embedding_dim
from gaitscale.modelzoo.spec import params_for
from gaitscale.modelzoo.zoo import TrainedModel
from gaitscale.modelzoo.zoo import build_model
from gaitscale.modelzoo.zoo import fit_linear
from gaitscale.modelzoo.zoo import fit_model
