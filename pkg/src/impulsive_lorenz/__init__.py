"""Impulsive perturbations of the Lorenz flow.

Two interchangeable backends share one interface: the Lorenz equations
integrated with event detection (``"ode"``) and a closed-form geometric
Lorenz suspension (``"geometric"``).  On top of them sit the impulsive
semiflow, its Poincaré maps, invariant-measure estimators, entropy
estimators and numerical checks of hyperbolicity conditions.
"""

from .conditions import (CheckSettings, ConditionReport, check_conditions, check_H2_cones,
                         check_H6, check_L3, estimate_H3, fit_H1, fixture_map)
from .config import ExperimentConfig
from .entropy import (EntropyReport, TangentFrame, entropy_flow, entropy_from_statistics,
                      entropy_map, quotient_entropy_oracle, tangent_step)
from .errors import (ConeBroken, ConeEscape, ConfigError, DegenerateRoof, Escape, FamilyMismatch,
                     GridTooCoarse, NoReturn, NotInFlowBox, NumericalFailure, OutOfSection,
                     PoorFit, SingularInput, StepFailure, Unstable)
from .flow_core import (CLASSICAL, DEFAULT_CFG, DDPoint, Hit, IntegratorConfig, LorenzParams,
                        SectionChart, advance, chart_for, classical_chart, first_hit,
                        flow_to_section, integrate, return_map, singular_u, variational_hit)
from .geometric import (DEFAULT_GEO, GeoParams, SuspensionState, f1d, f1d_prime, geo_F,
                        geo_F_jacobian, geo_flow, geo_R)
from .impulse import (CATALOG, GeometricImpulsiveSystem, ImpulseSpec, ImpulsiveTrajectory,
                      OdeImpulsiveSystem, h_eps, impulse_apply)
from .measures import (BasinReport, EmpiricalMeasure, MeasureVector, OrbitStatistics, TestFamily,
                       birkhoff_flow_average, birkhoff_map_average, cluster_basins,
                       empirical_invariant_measure, flow_invariance_defect, orbit_statistics,
                       probe_basins, suspension_lift, weak_star_distance)
from .poincare import GeometricPoincare, OdePoincare, SectionMap, make_poincare

__version__ = "0.1.0"
