from builtins import float, int, str
from pydantic import Field
from pydantic_settings import BaseSettings

class Settings(BaseSettings):
    # Execution
    workers: int = Field(default=1, ge=1, description="Worker processes used for distance scans")
    log_level: str = Field(default="INFO", description="Level of the 'app' logger")
    logging_config: str = Field(default="logging.conf", description="Path of the logging configuration file, relative to the project root")

    # Linear programming
    lp_feasibility_tol: float = Field(default=1e-9, gt=0, description="Constraint violation accepted as feasible, relative to the largest right-hand side")
    lp_optimality_tol: float = Field(default=1e-12, gt=0, description="Reduced cost below which the simplex stops, on the equilibrated problem")
    lp_pivot_tol: float = Field(default=1e-11, gt=0, description="Smallest tableau entry accepted as a pivot")
    lp_pivot_rule: str = Field(default="bland", pattern="^(bland|dantzig)$", description="Entering-variable rule of the simplex method")
    lp_max_iterations: int = Field(default=50000, ge=1, description="Pivot limit per simplex phase")

    # Decoy-state estimation
    default_cutoff: int = Field(default=7, ge=2, description="Photon-number cutoff M of the decoy linear programs")
    default_phase_nodes: int = Field(default=64, ge=16, description="Trapezoid nodes of the relative-phase average")
    mixture_cutoff: int = Field(default=8, ge=1, description="Photon cutoff of the Poisson-mixture residual report")
    fluctuation_sigmas: float = Field(default=5.0, gt=0, description="Standard deviations of statistical fluctuation")
    denominator_epsilon: float = Field(default=1e-12, gt=0, description="Denominator bound below which a correlator ratio is trivial")

    # Scans
    signal_grid_cap: float = Field(default=1.0, gt=0, description="Largest signal intensity the optimizer may search")
    refine_step_km: float = Field(default=1.0, gt=0, description="Distance step used when refining the secure distance")

    class Config:
        # Read from the working directory of the run.
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "CHSH_MDI_"

