import logging
from typing import List

from agents.base_agent import SwarmAgent
from agents.inference import InferenceFailed
from models.agent_models import Reaction
from models.envelope import Envelope
from tools.envelope_codec import payload_json

logger = logging.getLogger(__name__)


class MobileAgent(SwarmAgent):
    """Edge node with a local model; inference requests arrive as commands"""

    def execute(self, env: Envelope, topic: str) -> List[Reaction]:
        body = payload_json(env)
        if body.get("kind") != "infer":
            return self.handle_other(env)
        label = body.get("label") if isinstance(body.get("label"), str) else None
        try:
            outcome = self.run_inference(len(env.payload), label)
        except InferenceFailed as exc:
            logger.warning("%s inference failed: %s", self.id, exc.reason)
            return [Reaction("inference_failed", {"reason": exc.reason, "correlation_id": env.correlation_id})]
        return [Reaction("inference", outcome.to_dict())]
