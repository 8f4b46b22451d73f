from .solve import cmd_solve
from .simulate import cmd_simulate
from .nash import cmd_nash
from .convergence import cmd_convergence
from .graphon_study import cmd_graphon_study
from .report import cmd_report

__all__ = ["cmd_solve", "cmd_simulate", "cmd_nash", "cmd_convergence", "cmd_graphon_study", "cmd_report"]
