"""Per-unit IPMSM drive simulation with recursive prediction-error online
identification of magnet flux linkage and stator resistance."""

from .analysis import (
    EigenPair,
    OperatingGrid,
    discrete_stability,
    eigenvalues,
    evaluate_maps,
    gradient_map,
    hessian_map,
    sensitivity_map,
    steady_state_error,
)
from .control import PiState, References, mtpa_reference, voltage_limit
from .estimator import (
    GainConfig,
    GainMatrix,
    HessianState,
    ParameterBox,
    ParameterVector,
    PredictorState,
    RpemEstimator,
    gain_schedule,
    gamma_from_T0,
    gna_update,
    gradient_dynamic_step,
    gradient_steady_state,
    phyint_update,
    prediction_error,
    predictor_step,
    project_parameters,
    pseudoinverse_2x2,
    sga_update,
)
from .plant import (
    MechanicalParams,
    PlantState,
    StepEvent,
    apply_step_events,
    electrical_derivative,
    integrate_electrical,
    measure,
    mechanical_step,
    torque,
)
from .pu import (
    BaseQuantities,
    ConfigError,
    DqVector,
    MachineParams,
    SiMachineData,
    default_machine,
    inverse_park,
    machine_from_config,
    make_base,
    park,
    to_per_unit,
)
from .runner import ConvergenceReport, RunResult, SimulationDiverged, convergence_metrics, run
from .scenario import Scenario, ScenarioError, load_scenario, preset_library, save_scenario

__version__ = "0.1.0"
