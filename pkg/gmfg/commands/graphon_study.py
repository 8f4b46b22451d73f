import logging
from pathlib import Path

from gmfg.data.run_session import run_session
from gmfg.models import DensityFlow
from gmfg.repositories.run_repository import RunRepository
from gmfg.schemas import ExperimentConfig
from gmfg.services.meanfield_service import initial_density
from .common import build_experiment

logger = logging.getLogger(__name__)


def on_labels(flow: DensityFlow, labels: int) -> DensityFlow:
    """Piecewise-constant extension in u of a flow onto a finer label grid."""
    target = flow.grids.with_labels(labels)
    cells = flow.grids.label_index(target.u)
    return DensityFlow(target, flow.p[:, cells, :])


def cmd_graphon_study(config: ExperimentConfig, out: Path) -> int:
    """Step approximations Gᵏ: cut distance to G and solution distance to a fine reference solve."""
    experiment = build_experiment(config)
    services = experiment.services
    graphons, meanfield = services.graphon_service, services.meanfield_service
    model = experiment.deterministic_model
    study = config.study
    grids = experiment.grids

    with run_session("graphon-study", out, config) as session:
        repo = RunRepository(session.path)
        initial = initial_density(grids, config.initial.mean, config.initial.std)
        reference_step = graphons.step_approximation(experiment.graphon, study.reference_labels)
        reference = meanfield.mfg_fixed_point_stepgraphon(model, reference_step, initial, grids)
        session.meta["grids"] = reference.grids.to_dict()
        logger.info(f"Reference solve on {study.reference_labels} labels: {reference.status}")

        rows, cut, distance = [], [], []
        for k in study.ks:
            step = graphons.step_approximation(experiment.graphon, k)
            cut_k = graphons.cut_convergence_metric(step, experiment.graphon)
            solution = meanfield.mfg_fixed_point_stepgraphon(model, step, initial, grids)
            distance_k = on_labels(solution.flow, study.reference_labels).l1_distance(reference.flow)
            sup_gap = graphons.lipschitz_gap(experiment.graphon, step)
            rows.append((k, cut_k, sup_gap, distance_k, int(solution.converged)))
            cut.append(cut_k)
            distance.append(distance_k)
            logger.info(f"k={k}: cut distance {cut_k:.3e}, solution L1 distance {distance_k:.3e}")

        repo.write_rows("graphon_study.csv", ["k", "cut_distance", "sup_gap", "solution_l1", "converged"], rows)
        monotone = all(b <= a + 1e-12 for a, b in zip(distance, distance[1:]))
        session.meta["study"] = {
            "reference_labels": study.reference_labels,
            "reference_status": reference.status,
            "solution_distance_monotone": monotone,
        }
        if not monotone:
            logger.warning("Solution distance is not monotone in k")
        if config.outputs.plots:
            services.plot_service.graphon_study(
                study.ks, {"cut distance": cut, "solution L1": distance}, session.file("graphon_study.svg")
            )
    return 0
