"""Estimate request / response documents exchanged with the PPE server."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .. import strict_json
from ..core_ir import ModelIr, model_from_dict, model_to_dict
from ..cost_model import AcceleratorConfig, ModelMetrics, metrics_from_dict
from ..errors import SchemaError


class Detail(str, Enum):
    TOTALS = "Totals"
    PER_OP = "PerOp"


class Status(str, Enum):
    OK = "Ok"
    INVALID_MODEL = "InvalidModel"
    INTERNAL_ERROR = "InternalError"


@dataclass(frozen=True)
class EstimateRequest:
    request_id: int
    model: ModelIr
    accel: Union[str, AcceleratorConfig, None] = None
    detail: Detail = Detail.TOTALS

    def to_dict(self):
        accel = self.accel.to_dict() if isinstance(self.accel, AcceleratorConfig) else self.accel
        return {
            "request_id": self.request_id,
            "model": model_to_dict(self.model),
            "accel": accel,
            "detail": Detail(self.detail).value,
        }

    @classmethod
    def from_dict(cls, doc):
        strict_json.check_fields(doc, "", ("request_id", "model"), ("accel", "detail"))
        rid = strict_json.get_int(doc, "request_id", "")
        if not -(2**63) <= rid < 2**64:
            raise SchemaError("request_id", "must fit in 64 bits")
        accel = doc.get("accel")
        if isinstance(accel, dict):
            accel = AcceleratorConfig.from_dict(accel, "accel")
        elif accel is not None and not isinstance(accel, str):
            raise SchemaError("accel", "expected a config name or an inline config object")
        try:
            detail = Detail(doc.get("detail", Detail.TOTALS.value))
        except ValueError:
            raise SchemaError("detail", f"expected Totals or PerOp, got {doc.get('detail')!r}") from None
        model = doc["model"]
        if not isinstance(model, dict):
            raise SchemaError("model", "expected a model document")
        return cls(rid, model_from_dict(model), accel, detail)


@dataclass(frozen=True)
class EstimateResponse:
    request_id: Optional[int]
    status: Status
    metrics: Optional[dict] = None
    error: str = ""

    @property
    def ok(self):
        return self.status is Status.OK

    def model_metrics(self) -> ModelMetrics:
        return metrics_from_dict(self.metrics)

    def to_dict(self):
        return {
            "request_id": self.request_id,
            "status": self.status.value,
            "metrics": self.metrics,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc):
        strict_json.check_fields(doc, "", ("request_id", "status"), ("metrics", "error"))
        try:
            status = Status(doc["status"])
        except ValueError:
            raise SchemaError("status", f"unknown status {doc['status']!r}") from None
        metrics = doc.get("metrics")
        if (status is Status.OK) != (metrics is not None):
            raise SchemaError("metrics", "metrics must be present exactly when status is Ok")
        return cls(doc["request_id"], status, metrics, doc.get("error") or "")
