"""Range-vector summary trees for content pub/sub over a grid/zone overlay."""
from .arv import ARV, ArvConfig, DomainLimit, ValueInterval, build_arv, extend, merge, simplify, arv_match
from .events import Publication, Subscription, default_registry, exact_match, match_event
from .forest import SummaryForest

__version__ = "0.1.0"
