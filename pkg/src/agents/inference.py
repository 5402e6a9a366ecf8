"""Simulated inference endpoints and the local-then-cloud fallback chain."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

from langchain_core.language_models.fake import FakeListLLM
from langchain_core.output_parsers import StrOutputParser
from langchain_core.prompts import PromptTemplate

from config import Config
from models.agent_models import EndpointKind, EndpointSpec
from prompts.inference_prompts import CLOUD_RESPONSES, INFERENCE_REQUEST_PROMPT, LOCAL_RESPONSES

logger = logging.getLogger(__name__)


class InferenceFailed(RuntimeError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class LocalModelCancelled(RuntimeError):
    """Local model refused a request larger than its context window"""

    def __init__(self, request_bytes: int, capacity: int):
        super().__init__(f"CANCELLED ({Config.LOCAL_CANCEL_STATUS}): {request_bytes} B exceeds {capacity} B context")
        self.status_code = Config.LOCAL_CANCEL_STATUS
        self.request_bytes = request_bytes


class InferenceEndpoint:
    def __init__(self, spec: EndpointSpec, llm=None):
        self.spec = spec
        responses = LOCAL_RESPONSES if spec.kind is EndpointKind.LOCAL else CLOUD_RESPONSES
        self.llm = llm or FakeListLLM(responses=list(responses))
        self.prompt_template = PromptTemplate(
            input_variables=["agent", "request_bytes", "label"],
            template=INFERENCE_REQUEST_PROMPT,
        )
        self.chain = self.prompt_template | self.llm | StrOutputParser()

    @property
    def is_local(self) -> bool:
        return self.spec.kind is EndpointKind.LOCAL

    def invoke(self, agent_id: str, request_bytes: int, label: Optional[str] = None) -> str:
        if self.is_local and request_bytes > self.spec.context_capacity_bytes:
            raise LocalModelCancelled(request_bytes, self.spec.context_capacity_bytes)
        return self.chain.invoke({"agent": agent_id, "request_bytes": request_bytes, "label": label or "none"})


@dataclass
class InferenceOutcome:
    call_id: str
    request_bytes: int
    endpoint: Optional[str] = None
    status: str = "local"  # local | cloud | failed
    reason: Optional[str] = None
    egress_bytes: int = 0
    dns_events: int = 0
    marker_published: bool = False
    attempts: List[str] = field(default_factory=list)
    text: str = ""

    def to_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "request_bytes": self.request_bytes,
            "endpoint": self.endpoint,
            "status": self.status,
            "reason": self.reason,
            "egress_bytes": self.egress_bytes,
            "dns_events": self.dns_events,
            "marker_published": self.marker_published,
            "attempts": list(self.attempts),
        }
