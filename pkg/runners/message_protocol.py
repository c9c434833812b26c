"""
Message Protocol for Cell Results
Carries cell outcomes from worker processes back to the orchestrator
"""

import logging
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional

from utils.json_helper import safe_json_dumps, safe_json_loads

logger = logging.getLogger(__name__)


class CellMessage:
    """Message from a cell runner to the grid orchestrator"""

    def __init__(self, sender: str, receiver: str, data: Any, message_type: str = "result", metadata: Optional[Dict] = None):
        """
        Initialize cell message

        Args:
            sender: Name of the sending runner
            receiver: Name of the receiving component
            data: Message payload
            message_type: "result" or "error"
            metadata: Additional metadata such as the cell id
        """
        self.sender = sender
        self.receiver = receiver
        self.data = data
        self.message_type = message_type
        self.metadata = metadata or {}
        self.timestamp = datetime.now().isoformat()
        self.message_id = f"{sender}_{receiver}_{self.metadata.get('cell_id', 'none')}"

    @classmethod
    def from_run_result(cls, result: Dict, cell_id: str, receiver: str = "grid") -> "CellMessage":
        """Wrap a Runner.safe_run result"""
        if result["success"]:
            return cls(result["runner"], receiver, result["data"], "result", {"cell_id": cell_id})
        return cls(result["runner"], receiver, {"error": result["error"]}, "error", {"cell_id": cell_id})

    @property
    def cell_id(self) -> Optional[str]:
        return self.metadata.get("cell_id")

    def to_dict(self) -> Dict:
        return {
            "message_id": self.message_id,
            "sender": self.sender,
            "receiver": self.receiver,
            "data": self.data,
            "message_type": self.message_type,
            "metadata": self.metadata,
            "timestamp": self.timestamp,
        }

    def to_json(self) -> str:
        return safe_json_dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict) -> "CellMessage":
        message = cls(
            sender=data.get("sender", "unknown"),
            receiver=data.get("receiver", "unknown"),
            data=data.get("data", {}),
            message_type=data.get("message_type", "result"),
            metadata=data.get("metadata", {}),
        )
        if "timestamp" in data:
            message.timestamp = data["timestamp"]
        if "message_id" in data:
            message.message_id = data["message_id"]
        return message

    @classmethod
    def from_json(cls, text: str) -> "CellMessage":
        """Parse a message; unreadable text becomes an error message carrying the raw text"""
        data = safe_json_loads(text, None)
        if not isinstance(data, dict) or "message_type" not in data:
            return cls("system", "error_handler", {"error": "unreadable message", "original_data": str(text)[:1000]}, "error")
        return cls.from_dict(data)

    def is_error(self) -> bool:
        return self.message_type == "error"

    def __str__(self) -> str:
        return f"CellMessage({self.sender} -> {self.receiver}: {self.message_type} {self.cell_id})"


class MessageBus:
    """In-process bus; the orchestrator subscribes and is the only consumer"""

    def __init__(self):
        self.messages: List[CellMessage] = []
        self.subscribers: Dict[str, List[Callable[[CellMessage], None]]] = {}
        self.logger = logging.getLogger("MessageBus")

    def send_message(self, message: CellMessage) -> bool:
        """Record the message and notify the receiver's subscribers; False if a handler failed"""
        self.messages.append(message)
        self.logger.debug(f"Message sent: {message}")
        delivered = True
        for callback in self.subscribers.get(message.receiver, []):
            try:
                callback(message)
            except Exception as e:
                self.logger.error(f"Error in subscriber callback for {message}: {e}")
                delivered = False
        return delivered

    def subscribe(self, receiver: str, callback: Callable[[CellMessage], None]):
        self.subscribers.setdefault(receiver, []).append(callback)
        self.logger.debug(f"{receiver} subscribed to message bus")

    def get_messages_for(self, receiver: str) -> List[CellMessage]:
        return [msg for msg in self.messages if msg.receiver == receiver]

    def errors(self) -> List[CellMessage]:
        return [msg for msg in self.messages if msg.is_error()]
