"""Pytest configuration and fixtures."""
import json
import math

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from squeeze_designer.celery_app import celery_app
from squeeze_designer.database import Base
from squeeze_designer.fock import ModeSpace, StateVector
from squeeze_designer.measurement import ClickPattern, DetectorSpec, PathRole
from squeeze_designer.objective import LossWeights, OptConfig
from squeeze_designer.ops import ParamRef, SourceKind, SourceSpec, Topology
from squeeze_designer.search import TopologyTemplate


@pytest.fixture(scope="function")
def test_engine():
    """Create an in-memory test database engine."""
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    Base.metadata.create_all(bind=engine)
    yield engine
    Base.metadata.drop_all(bind=engine)


@pytest.fixture(scope="function")
def test_db(test_engine, mocker):
    """Test database session; services and tasks open their sessions on the same engine."""
    TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=test_engine)
    mocker.patch('squeeze_designer.services.get_db_session', side_effect=TestingSessionLocal)
    mocker.patch('squeeze_designer.tasks.get_db_session', side_effect=TestingSessionLocal)
    session = TestingSessionLocal()
    try:
        yield session
    finally:
        session.close()


@pytest.fixture(scope="function")
def celery_app_test():
    """Test Celery app configuration."""
    celery_app.conf.update(
        task_always_eager=True,
        task_eager_propagates=True,
        broker_url='memory://',
        result_backend='cache+memory://'
    )
    return celery_app


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_state(rng):
    """Normalized random state on a small three-mode space."""
    space = ModeSpace((2, 3, 1), ((0, 1), (2,)))
    amplitudes = rng.normal(size=space.dimension) + 1j * rng.normal(size=space.dimension)
    return StateVector(space, amplitudes / np.linalg.norm(amplitudes))


@pytest.fixture
def pair_topology():
    """One two-mode squeezer on two single-mode paths with free r."""
    space = ModeSpace((4, 4))
    source = SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'), label='S')
    return Topology(space, (source,), ('r',), ((0.0, math.inf),))


@pytest.fixture
def pair_pattern():
    """Both paths are outputs and must click."""
    return ClickPattern((DetectorSpec.threshold(1, PathRole.OUTPUT), DetectorSpec.threshold(1, PathRole.OUTPUT)))


@pytest.fixture
def pair_target():
    """|1,1> on the two output modes."""
    return StateVector.from_terms(ModeSpace((1, 1)), {(1, 1): 1.0})


@pytest.fixture
def fast_config():
    return OptConfig(max_iters=80, restarts=0, seed=0, step_init=0.05)


@pytest.fixture
def postselected_weights():
    return LossWeights.preset('postselected')


@pytest.fixture
def two_source_template(pair_pattern):
    """A two-mode and a single-mode squeezer sharing mode 0, both fully free."""
    space = ModeSpace((7, 7))
    sources = (
        SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r_P'), theta=ParamRef('th_P'), label='P'),
        SourceSpec(SourceKind.SINGLE_MODE, (0,), r=ParamRef('r_Q'), theta=ParamRef('th_Q'), label='Q'),
    )
    bounds = ((0.0, 1.0), (-math.inf, math.inf), (0.0, 1.0), (-math.inf, math.inf))
    topology = Topology(space, sources, ('r_P', 'th_P', 'r_Q', 'th_Q'), bounds)
    return TopologyTemplate('two_source', topology, pair_pattern, (), (0.1, 0.0, 0.01, 0.0))


@pytest.fixture
def bell_pair_descriptor():
    """Two pair sources on disjoint modes, postselected on one photon per path."""
    return {
        "schema_version": 1,
        "name": "bell_pair",
        "mode": "sweep",
        "target": "bell",
        "modes": {"cutoffs": [6, 6, 6, 6], "paths": [[0, 1], [2, 3]]},
        "parameters": [{"name": "r", "init": 0.1, "bounds": [0.0, None]}],
        "sources": [
            {"label": "H", "kind": "two_mode", "modes": [0, 2], "r": {"param": "r"}, "theta": {"value": 0.0}},
            {"label": "V", "kind": "two_mode", "modes": [1, 3], "r": {"param": "r"}, "theta": {"value": 0.0}},
        ],
        "detectors": [
            {"type": "threshold", "value": 1, "role": "output"},
            {"type": "threshold", "value": 1, "role": "output"},
        ],
        "weights_preset": "postselected",
        "f0_range": [0.8, 0.9, 0.05],
        "optimizer": {"max_iters": 60, "restarts": 0},
    }


@pytest.fixture
def descriptor_file(tmp_path, bell_pair_descriptor):
    """Write a descriptor dict to a temporary JSON file."""

    def write(data=None, name='experiment.json'):
        path = tmp_path / name
        path.write_text(json.dumps(bell_pair_descriptor if data is None else data, indent=2))
        return path

    return write
