from .errors import *
from .console_log import *
from .hin_graph import *
from .propagation import *
from .node_attention import *
from .hin_models import *
from .training import *
from .evaluation import *
from .synthetic import *
from .run_config import *
from .text_formats import *
