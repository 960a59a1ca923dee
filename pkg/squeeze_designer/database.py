"""Database configuration and models for archived design runs."""
from datetime import datetime

from sqlalchemy import JSON, Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import Session, declarative_base, relationship, sessionmaker

from squeeze_designer.config import Config

# Create database engine
_connect_args = {"check_same_thread": False} if Config.DATABASE_URL.startswith("sqlite") else {}
engine = create_engine(Config.DATABASE_URL, connect_args=_connect_args)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()


class Run(Base):
    """One CLI invocation: an experiment descriptor plus its summary."""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    experiment = Column(String(255), nullable=False, index=True)
    command = Column(String(50), nullable=False)
    mode = Column(String(20))
    seed = Column(Integer, default=0)
    status = Column(String(20), default="running")
    schema_version = Column(Integer, default=Config.SCHEMA_VERSION)
    weight_preset = Column(String(50))
    cutoffs = Column(JSON)
    descriptor = Column(JSON)
    summary = Column(JSON)
    error = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    # Relationships
    points = relationship("DesignPoint", back_populates="run", cascade="all, delete-orphan")


class DesignPoint(Base):
    """A (fidelity, probability) point reached by one ordering at one f0."""
    __tablename__ = "design_points"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    ordering_key = Column(String(255), nullable=False, index=True)
    f0 = Column(Float)
    fidelity = Column(Float)
    probability = Column(Float)
    counts_per_s = Column(Float)
    params = Column(JSON)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    run = relationship("Run", back_populates="points")


def get_db_session() -> Session:
    """Get database session."""
    return SessionLocal()


def create_tables():
    """Create all database tables."""
    Base.metadata.create_all(bind=engine)
