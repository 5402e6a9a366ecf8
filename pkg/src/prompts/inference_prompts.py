INFERENCE_REQUEST_PROMPT = """
You are {agent}, an edge agent in a home automation swarm.
Summarize the following {request_bytes}-byte sensor context for the orchestrator.

Context label: {label}
"""

# Canned completions served by the simulated endpoints, cycled in order
LOCAL_RESPONSES = [
    "local summary: all readings nominal",
    "local summary: no anomalies in window",
]

CLOUD_RESPONSES = [
    "cloud summary: readings nominal, two sensors idle",
    "cloud summary: context condensed",
]
