from gaitscale.crossval.evaluate import EvalCurve
from gaitscale.crossval.evaluate import FoldError
from gaitscale.crossval.evaluate import PhaseResult
from gaitscale.crossval.evaluate import TooFewPoints
from gaitscale.crossval.evaluate import evaluate_curve
from gaitscale.crossval.evaluate import nested_cv_evaluate
from gaitscale.crossval.evaluate import smooth_curve
from gaitscale.crossval.folds import FoldPlan
from gaitscale.crossval.folds import TooFewSamples
from gaitscale.crossval.folds import make_fold_plan
from gaitscale.crossval.scoring import ModelScore
from gaitscale.crossval.scoring import critical_phase
from gaitscale.crossval.scoring import model_score
from gaitscale.crossval.search import HYPERPARAM_SPACES
from gaitscale.crossval.search import search_strategy
