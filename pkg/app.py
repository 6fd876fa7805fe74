"""
CLI de posefuse.

Comandos:
- generate: dataset sintético determinista
- pretrain: backbone de mano y backbone de cuerpo preentrenado, congelados
- train: entrenamiento de CHAM con los backbones congelados
- eval: métricas de una estrategia sobre un split
- infer: inferencia de una muestra (OBJ + JSON)
- export: malla de verdad de terreno de una muestra en OBJ
- bench: tiempos por etapa del pipeline
- run: experimento completo con el workflow LangGraph

Códigos de salida: 0 éxito, 1 uso o configuración, 2 contrato o invariante,
3 fallo numérico.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

from utils.config import PosefuseConfig, config_from_dict, load_config
from utils.errors import EXIT_OK, EXIT_USAGE, PosefuseError
from utils.rich_logger import setup_logging

load_dotenv()

# Inicializar el sistema de logging
logger = setup_logging(os.environ.get("LOG_LEVEL", "INFO"))

DEFAULT_SEED = 42
DEFAULT_OUT = "runs/default"

# campo de la configuración que sobrescribe --seed; generate y run lo usan como semilla del dataset
SEED_OVERRIDES = {
    "pretrain": ("pretrain", "seed"),
    "train": ("train", "seed"),
    "eval": ("model", "cham_seed"),
    "infer": ("model", "cham_seed"),
    "bench": ("model", "cham_seed"),
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser que sale con código 1 en errores de uso."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posefuse", description="Fusión de estimadores de cuerpo y mano con CHAM")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help_text: str, data: bool = True, seed_default: Optional[int] = None,
                seed_help: str = "Sobrescribe model.cham_seed (sólo cuenta si no hay cham.json)") -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="Archivo JSON de configuración")
        p.add_argument("--out", default=DEFAULT_OUT, help="Directorio de salida")
        p.add_argument("--seed", type=int, default=seed_default, help=seed_help)
        if data:
            p.add_argument("--data", default=None, help="Directorio del dataset (por defecto <out>/data)")
        return p

    command("generate", "Genera el dataset sintético", data=False,
            seed_default=DEFAULT_SEED, seed_help="Semilla del dataset")

    command("pretrain", "Preentrena y congela los backbones", seed_help="Sobrescribe pretrain.seed")

    p = command("train", "Entrena CHAM con los backbones congelados", seed_help="Sobrescribe train.seed")
    p.add_argument("--epochs", type=int, default=None, help="Sobrescribe train.epochs")

    p = command("eval", "Evalúa una estrategia")
    p.add_argument("--strategy", choices=["frozen", "wrist_copy", "cham"], default="cham")
    p.add_argument("--split", default="heldout")
    p.add_argument("--oracle", action="store_true", help="Usar la verdad de terreno como predicción")

    p = command("infer", "Inferencia de una muestra")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--strategy", choices=["frozen", "wrist_copy", "cham"], default="cham")

    p = command("export", "Exporta la malla de verdad de terreno de una muestra",
                seed_help="Sin efecto: la malla sale tal cual del dataset")
    p.add_argument("--sample", type=int, default=0)

    p = command("bench", "Tiempos por etapa del pipeline")
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--runs", type=int, default=None, help="Sobrescribe evaluation.timing_runs")

    p = command("run", "Experimento completo (generate -> pretrain -> train -> eval)",
                seed_default=DEFAULT_SEED, seed_help="Semilla del dataset")
    p.add_argument("--epochs", type=int, default=None, help="Sobrescribe train.epochs")
    p.add_argument("--rounds", type=int, default=1, help="Rondas de entrenamiento como máximo")

    return parser


def _config(args) -> PosefuseConfig:
    config = load_config(args.config)
    updates: Dict[str, Dict[str, int]] = {}
    if getattr(args, "epochs", None) is not None:
        updates.setdefault("train", {})["epochs"] = args.epochs
    target = SEED_OVERRIDES.get(args.command)
    if target is not None and args.seed is not None:
        section, name = target
        updates.setdefault(section, {})[name] = args.seed
    if updates:
        raw = config.model_dump(mode="json")
        for section, values in updates.items():
            raw[section].update(values)
        config = config_from_dict(raw)
    return config


def _data_dir(args) -> str:
    return getattr(args, "data", None) or os.path.join(args.out, "data")


# ==================== Comandos ====================

def cmd_generate(args, config: PosefuseConfig) -> None:
    from pipeline.dataset import generate_dataset

    generate_dataset(config, args.seed, _data_dir(args))


def cmd_pretrain(args, config: PosefuseConfig) -> None:
    from pipeline.artifacts import build_backbones, save_backbones
    from pipeline.dataset import SyntheticDataset
    from utils.serialization import write_json

    backbones, history = build_backbones(SyntheticDataset(_data_dir(args)), config)
    save_backbones(backbones, args.out)
    write_json(os.path.join(args.out, "pretrain_history.json"), history)


def cmd_train(args, config: PosefuseConfig) -> None:
    from pipeline.artifacts import fresh_cham, load_backbones, save_cham
    from pipeline.dataset import SyntheticDataset
    from training.trainer import train_cham

    dataset = SyntheticDataset(_data_dir(args))
    cham, _ = train_cham(dataset, load_backbones(args.out), fresh_cham(config), config,
                         log_path=os.path.join(args.out, "train.jsonl"),
                         checkpoint_dir=os.path.join(args.out, "checkpoints"))
    save_cham(cham, args.out)


def cmd_eval(args, config: PosefuseConfig) -> None:
    from pipeline.artifacts import load_backbones, load_or_init_cham
    from pipeline.dataset import SyntheticDataset
    from pipeline.evaluation import evaluate, write_report

    dataset = SyntheticDataset(_data_dir(args))
    cham = load_or_init_cham(args.out, config) if args.strategy == "cham" else None
    report = evaluate(dataset, args.split, load_backbones(args.out), cham, config, args.strategy,
                      oracle=args.oracle, show_progress=True)
    suffix = "_oracle" if args.oracle else ""
    write_report(report, os.path.join(args.out, f"metrics_{args.strategy}{suffix}_{args.split}.json"))


def cmd_infer(args, config: PosefuseConfig) -> None:
    from pipeline.artifacts import load_backbones, load_or_init_cham
    from pipeline.dataset import SyntheticDataset
    from pipeline.export import export_inference
    from pipeline.inference import InferenceContext, infer

    dataset = SyntheticDataset(_data_dir(args))
    cham = load_or_init_cham(args.out, config) if args.strategy == "cham" else None
    context = InferenceContext.from_dataset(dataset, config.train.use_cross_attention)
    result = infer(dataset.sample(args.sample), load_backbones(args.out), cham, context, args.strategy,
                   ground_truth=dataset.ground_truth(args.sample))
    paths = export_inference(result, os.path.join(args.out, "infer"), f"{args.strategy}_{args.sample:05d}")
    logger.success(f"Inferencia escrita en {paths['mesh']} y {paths['pose']}")


def cmd_export(args, config: PosefuseConfig) -> None:
    from pipeline.dataset import SyntheticDataset
    from pipeline.export import export_obj

    dataset = SyntheticDataset(_data_dir(args))
    path = export_obj(dataset.ground_truth(args.sample).mesh,
                      os.path.join(args.out, "export", f"gt_{args.sample:05d}.obj"))
    logger.success(f"Malla exportada en {path}")


def cmd_bench(args, config: PosefuseConfig) -> None:
    from pipeline.artifacts import load_backbones, load_or_init_cham
    from pipeline.dataset import SyntheticDataset
    from pipeline.evaluation import report_timings
    from utils.serialization import write_json

    dataset = SyntheticDataset(_data_dir(args))
    report = report_timings(dataset, load_backbones(args.out), load_or_init_cham(args.out, config), config,
                            runs=args.runs, index=args.sample)
    write_json(os.path.join(args.out, "timings.json"), report.model_dump(mode="json"))


def cmd_run(args, config: PosefuseConfig) -> None:
    from workflows.experiment_workflow import run_experiment

    run_experiment(config, args.seed, args.out, data_dir=args.data, max_rounds=args.rounds)


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "export": cmd_export,
    "bench": cmd_bench,
    "run": cmd_run,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Punto de entrada; devuelve el código de salida."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        logger.error(f"Uso incorrecto: {e}")
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args, _config(args))
    except PosefuseError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
