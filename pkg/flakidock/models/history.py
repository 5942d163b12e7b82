from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from flakidock.core.database import Base


class Project(Base):
    __tablename__ = "projects"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String, unique=True, index=True)
    context_dir = Column(String)
    dockerfile = Column(String)
    # 'verified' when the project is known to have built before monitoring began
    baseline = Column(String, default="verified")

    attempts = relationship("BuildAttempt", back_populates="project", order_by="BuildAttempt.id")


class BuildAttempt(Base):
    __tablename__ = "build_attempts"

    id = Column(Integer, primary_key=True, index=True)
    project_id = Column(Integer, ForeignKey("projects.id"), index=True)
    round = Column(Integer)
    dockerfile_hash = Column(String, index=True)
    status = Column(String)
    exit_code = Column(Integer, nullable=True)
    duration = Column(Float)
    started_at = Column(DateTime)
    # infrastructure / docker_server / project_source when the failure is not counted as flaky
    failure_cause = Column(String, nullable=True)
    excerpt = Column(Text, nullable=True)

    project = relationship("Project", back_populates="attempts")
