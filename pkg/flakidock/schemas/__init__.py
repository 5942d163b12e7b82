from .build import *
from .dataset import *
from .dockerfile import *
from .embedding import *
from .logs import *
from .monitor import *
from .repair import *
from .scenario import *
