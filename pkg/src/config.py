import os


class Config:

    # Tool metadata
    TOOL_NAME = "swarmsec"
    TOOL_VERSION = "0.4.0"
    REPORT_SCHEMA_VERSION = 1

    # Envelope protocol
    MAX_PAYLOAD_BYTES = 1024 * 1024
    REPLAY_WINDOW = 4096
    NONCE_BYTES = 16
    MAC_BYTES = 32

    # Topic scheme
    INBOX_PREFIX = "agents/inbox"
    BROADCAST_TOPIC = "agents/broadcast"
    MIRROR_TOPIC = "agents/mirror"
    AUDIT_TOPIC = "agents/audit"
    ACTUATE_PREFIX = "iot/actuate"
    SENSOR_PREFIX = "iot/sensor"

    # Agents
    DEFAULT_HEARTBEAT_INTERVAL_US = 500_000
    DEFAULT_CONTEXT_CAPACITY_BYTES = 64 * 1024
    LOCAL_CANCEL_STATUS = 499
    ECHO_TIMEOUT_US = 5_000_000

    # Failover
    RECONNECT_MEAN_US = 9_300
    RECONNECT_SIGMA_US = 1_900

    # Trust
    DISTRUST_THRESHOLD = 5
    OOB_RESPONSE_DELAY_US = 60_000_000
    FORGED_FLOOD_SIZE = 20

    # Sovereignty
    DNS_RETRY_COUNT = 10

    # File Paths
    DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
    SCENARIO_DIR = os.path.join(DATA_DIR, "scenarios")
    PROFILES_FILE_PATH = os.path.join(DATA_DIR, "link_profiles.json")

    # Environment
    OUT_DIR_ENV = "SWARMSEC_OUT_DIR"
    LOG_LEVEL_ENV = "SWARMSEC_LOG_LEVEL"
    DEFAULT_OUT_DIR = "runs"

    # Exit codes
    EXIT_OK = 0
    EXIT_VALIDATION = 2
    EXIT_INVARIANT = 3
