"""
Configuración de pytest para los tests de posefuse.
"""

import copy
import os
import sys

import pytest

# Agregar el directorio raíz al path
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT_DIR not in sys.path:
    sys.path.insert(0, ROOT_DIR)

import torch  # noqa: E402

torch.set_num_threads(1)


def pytest_configure(config):
    """Configuración de pytest."""
    # Registrar markers personalizados
    config.addinivalue_line(
        "markers", "integration: tests que encadenan varios módulos"
    )
    config.addinivalue_line(
        "markers", "unit: tests unitarios rápidos y deterministas"
    )
    config.addinivalue_line(
        "markers", "slow: experimentos largos (POSEFUSE_SLOW_TESTS=1)"
    )


def pytest_collection_modifyitems(config, items):
    """Salta los tests lentos salvo que se pidan explícitamente."""
    from utils.config import slow_tests_enabled

    if slow_tests_enabled():
        return
    skip_slow = pytest.mark.skip(reason="Test lento: exporta POSEFUSE_SLOW_TESTS=1 para correrlo")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def project_root():
    """Retorna el directorio raíz del proyecto."""
    return ROOT_DIR


@pytest.fixture(autouse=True)
def setup_env(project_root):
    """Configura variables de entorno para tests."""
    # Cargar .env si existe (desde el directorio del proyecto)
    env_file = os.path.join(project_root, ".env")
    if os.path.exists(env_file):
        from dotenv import load_dotenv
        load_dotenv(env_file)

    os.environ.setdefault("LOG_LEVEL", "WARNING")


# ============================================
# Modelos de juguete (compartidos por sesión)
# ============================================

@pytest.fixture(scope="session")
def body_spec():
    """Spec del cuerpo de juguete (semilla por defecto)."""
    from articulated.toy_models import generate_toy_spec

    return generate_toy_spec("body", 7)


@pytest.fixture(scope="session")
def hand_spec():
    """Spec de la mano de juguete (semilla por defecto)."""
    from articulated.toy_models import generate_toy_spec

    return generate_toy_spec("hand", 7)


@pytest.fixture(scope="session")
def camera():
    """Cámara por defecto del dataset."""
    from articulated.kinematics import Camera

    return Camera.default()


@pytest.fixture
def small_config():
    """Configuración reducida para tests de integración rápidos."""
    from utils.config import config_from_dict

    return config_from_dict(copy.deepcopy(SMALL_CONFIG))


# ============================================
# Dataset y backbones reducidos (compartidos por sesión)
# ============================================

SMALL_CONFIG = {
    "dataset": {"train_size": 24, "heldout_size": 8},
    "model": {"depth": 2},
    "pretrain": {"steps": 20, "batch_size": 8, "max_heldout_joint_error_mm": None},
    "train": {"epochs": 1, "batch_size": 8, "eval_every_epoch": False},
    "evaluation": {"timing_runs": 3},
}


@pytest.fixture(scope="session")
def session_config():
    """Configuración reducida compartida por los fixtures de sesión."""
    from utils.config import config_from_dict

    return config_from_dict(SMALL_CONFIG)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory, session_config):
    """Dataset de 24 + 8 escenas generado una vez por sesión."""
    from pipeline.dataset import generate_dataset

    out = str(tmp_path_factory.mktemp("dataset"))
    generate_dataset(session_config, 42, out, show_progress=False)
    return out


@pytest.fixture(scope="session")
def small_dataset(small_dataset_dir):
    from pipeline.dataset import SyntheticDataset

    return SyntheticDataset(small_dataset_dir)


@pytest.fixture(scope="session")
def small_backbones(small_dataset, session_config):
    """Backbones congelados: mano con semilla, cuerpo preentrenado 20 pasos."""
    from pipeline.artifacts import build_backbones

    backbones, _ = build_backbones(small_dataset, session_config, show_progress=False)
    return backbones
