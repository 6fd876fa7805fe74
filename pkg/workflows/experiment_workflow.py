"""
Workflow LangGraph del experimento completo.

generate -> pretrain -> train -> evaluate -> compare. Desde compare se
vuelve a entrenar ("improve") mientras CHAM no mejore la MPVPE de manos de
la estrategia frozen y quede presupuesto de rondas; si no, "accept" lleva
al reporte final.
"""

import os
import traceback
from typing import Literal, Optional

from langgraph.graph import END, StateGraph

from pipeline.artifacts import build_backbones, fresh_cham, save_backbones, save_cham
from pipeline.dataset import SyntheticDataset, generate_dataset
from pipeline.evaluation import run_baseline, write_report
from training.trainer import train_cham
from utils.config import PosefuseConfig, dump_config
from utils.rich_logger import get_logger
from workflows.experiment_state import ExperimentState

TOTAL_STEPS = 6


def create_experiment_workflow():
    """
    Crea y compila el grafo del experimento.

    Returns:
        Grafo compilado; se ejecuta con .invoke(estado_inicial)
    """
    workflow = StateGraph(ExperimentState)

    workflow.add_node("generate", generate_node)
    workflow.add_node("pretrain", pretrain_node)
    workflow.add_node("train", train_node)
    workflow.add_node("evaluate", evaluate_node)
    workflow.add_node("compare", compare_node)
    workflow.add_node("report", report_node)

    workflow.set_entry_point("generate")
    workflow.add_edge("generate", "pretrain")
    workflow.add_edge("pretrain", "train")
    workflow.add_edge("train", "evaluate")
    workflow.add_edge("evaluate", "compare")

    workflow.add_conditional_edges(
        "compare",
        should_retrain,
        {
            "improve": "train",  # otra ronda de entrenamiento sobre el mismo CHAM
            "accept": "report",
        },
    )
    workflow.add_edge("report", END)

    return workflow.compile()


def _guarded(name: str, fn):
    """Envuelve un nodo para dejar el traceback en el log antes de propagar."""
    def _node(state: ExperimentState) -> ExperimentState:
        logger = get_logger()
        try:
            return fn(state)
        except Exception as e:
            logger.error(f"Error en nodo {name}: {type(e).__name__}: {str(e)}")
            logger.debug(f"Traceback:\n{traceback.format_exc()}")
            raise
    return _node


def _generate(state: ExperimentState) -> ExperimentState:
    logger = get_logger()
    logger.step("Generación del dataset", 1, TOTAL_STEPS)
    config: PosefuseConfig = state["config"]
    data_dir = state.get("data_dir") or os.path.join(state["out_dir"], "data")
    if not os.path.exists(os.path.join(data_dir, "manifest.json")):
        generate_dataset(config, state["seed"], data_dir, show_progress=state.get("show_progress", True))
    else:
        logger.info(f"Reutilizando el dataset de {data_dir}")
    dump_config(config, os.path.join(state["out_dir"], "config.json"))
    return {"data_dir": data_dir, "dataset": SyntheticDataset(data_dir)}


def _pretrain(state: ExperimentState) -> ExperimentState:
    logger = get_logger()
    logger.step("Preentrenamiento y congelado de backbones", 2, TOTAL_STEPS)
    backbones, history = build_backbones(state["dataset"], state["config"], state.get("show_progress", True))
    save_backbones(backbones, state["out_dir"])
    return {"backbones": backbones, "pretrain_history": history}


def _train(state: ExperimentState) -> ExperimentState:
    logger = get_logger()
    round_ = state.get("round", 0) + 1
    logger.step(f"Entrenamiento de CHAM - Ronda {round_}", 3, TOTAL_STEPS)
    cham = state.get("cham")
    if cham is None:
        cham = fresh_cham(state["config"])
    log_path = os.path.join(state["out_dir"], f"train_round{round_}.jsonl")
    cham, _ = train_cham(state["dataset"], state["backbones"], cham, state["config"],
                         log_path=log_path, checkpoint_dir=os.path.join(state["out_dir"], "checkpoints"),
                         show_progress=state.get("show_progress", True))
    save_cham(cham, state["out_dir"])
    return {"cham": cham, "round": round_, "training_logs": state.get("training_logs", []) + [log_path]}


def _evaluate(state: ExperimentState) -> ExperimentState:
    logger = get_logger()
    logger.step("Evaluación de estrategias sobre heldout", 4, TOTAL_STEPS)
    reports = dict(state.get("reports", {}))
    paths = dict(state.get("report_paths", {}))
    # frozen y wrist_copy no dependen de CHAM: se evalúan una sola vez
    for strategy in ("frozen", "wrist_copy", "cham"):
        if strategy != "cham" and strategy in reports:
            continue
        report = run_baseline(strategy, state["dataset"], state["backbones"], state["cham"], state["config"])
        paths[strategy] = write_report(report, os.path.join(state["out_dir"], f"metrics_{strategy}.json"))
        reports[strategy] = report.summary()
    return {"reports": reports, "report_paths": paths}


def _compare(state: ExperimentState) -> ExperimentState:
    logger = get_logger()
    logger.step("Comparación con el baseline frozen", 5, TOTAL_STEPS)
    reports = state["reports"]
    frozen, cham = reports["frozen"]["mpvpe_hands"], reports["cham"]["mpvpe_hands"]
    improved = cham < frozen
    budget_left = state.get("round", 0) < state.get("max_rounds", 1)
    decision = "accept" if improved or not budget_left else "improve"
    logger.info(f"MPVPE manos: cham {cham:.3f} mm vs frozen {frozen:.3f} mm -> {decision}")
    return {"decision": decision}


def _report(state: ExperimentState) -> ExperimentState:
    logger = get_logger()
    logger.step("Reporte final", 6, TOTAL_STEPS)
    reports = state["reports"]
    logger.table(
        ["estrategia", "MPVPE cuerpo", "MPVPE manos", "MRRPE", "PA-MPVPE", "muñeca (rad)"],
        [
            [name, f"{r['mpvpe_full']:.2f}", f"{r['mpvpe_hands']:.2f}", f"{r['mrrpe']:.2f}",
             f"{r['pa_mpvpe']:.2f}", f"{r['wrist_geodesic']:.4f}"]
            for name, r in reports.items()
        ],
    )
    logger.success(f"Reportes en {state['out_dir']}")
    return {"report_paths": state.get("report_paths", {})}


generate_node = _guarded("Generate", _generate)
pretrain_node = _guarded("Pretrain", _pretrain)
train_node = _guarded("Train", _train)
evaluate_node = _guarded("Evaluate", _evaluate)
compare_node = _guarded("Compare", _compare)
report_node = _guarded("Report", _report)


def should_retrain(state: ExperimentState) -> Literal["improve", "accept"]:
    """Decisión tomada en compare: "improve" vuelve a train, "accept" cierra el experimento."""
    return "improve" if state.get("decision") == "improve" else "accept"


def run_experiment(config: PosefuseConfig, seed: int, out_dir: str, data_dir: Optional[str] = None,
                   max_rounds: int = 1, show_progress: bool = True) -> ExperimentState:
    """
    Ejecuta el experimento completo y devuelve el estado final.

    Args:
        config: Configuración
        seed: Semilla del dataset
        out_dir: Directorio de artefactos (backbones, CHAM, métricas, logs)
        data_dir: Dataset existente a reutilizar; por defecto <out_dir>/data
        max_rounds: Rondas de entrenamiento como máximo
        show_progress: Barras de progreso
    """
    logger = get_logger()
    logger.workflow_start("Experimento posefuse", {"seed": seed, "out_dir": out_dir, "max_rounds": max_rounds})
    graph = create_experiment_workflow()
    try:
        final = graph.invoke({
            "config": config,
            "seed": seed,
            "out_dir": out_dir,
            "data_dir": data_dir,
            "show_progress": show_progress,
            "round": 0,
            "max_rounds": max_rounds,
        })
    except Exception:
        logger.workflow_complete(success=False)
        raise
    logger.workflow_complete(success=True, summary=f"{final.get('round', 0)} ronda(s) de entrenamiento")
    return final
