# progress.py
import sys
import threading
from typing import Callable, Dict, Optional, TextIO

SECTIONS = {
    "mesh": "Mesh",
    "assembly": "Assembly",
    "newton": "Newton",
    "continuation": "Continuation",
    "analysis": "Analysis",
    "output": "Output",
}

MAX_LINES_PER_SECTION = 400

Progress = Optional[Callable[[str], None]]


def log(msg: str, cb: Progress = None):
    if cb:
        try:
            cb(msg)
            return
        except Exception:
            pass
    try:
        print(msg)
    except Exception:
        try:
            (sys.__stdout__ or sys.stdout).write(str(msg) + "\n")
        except Exception:
            pass


def new_log_state() -> Dict:
    return {
        "log_lines": {k: [] for k in SECTIONS},
        "seen": {k: set() for k in SECTIONS},
        "summaries": {k: "⏳ Pending" for k in SECTIONS},
        "current_section": "mesh",
    }


def set_section(state: Dict, section_key: str, summary: Optional[str] = None):
    if section_key in SECTIONS:
        state["current_section"] = section_key
        if summary is not None:
            state["summaries"][section_key] = summary


def render_log(state: Dict) -> str:
    blocks = []
    for k, title in SECTIONS.items():
        lines = state["log_lines"][k]
        blocks.append(f"== {title} | {state['summaries'][k]}")
        blocks.extend(lines if lines else ["(no logs)"])
        blocks.append("")
    return "\n".join(blocks)


def dump_log(state: Dict, path: str) -> None:
    from utils.utils_io import ensure_dir
    ensure_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_log(state))


def make_push_with_status(state: Optional[Dict] = None, stream: Optional[TextIO] = None,
                          echo: bool = True) -> Callable[[str], None]:
    """
    Progress callback that files each message under a section (picked by keyword),
    keeps a per-section summary badge, drops repeated lines and echoes to `stream`.
    Safe to share between threads. The state dict is exposed as `push.state`.
    """
    state = state if state is not None else new_log_state()
    lock = threading.Lock()

    def push(msg: str):
        if not isinstance(msg, str):
            return
        with lock:
            _push(msg)

    def _push(msg: str):
        lower = msg.lower().strip()

        # Status messages
        if "mesh" in lower and ("cells" in lower or "level" in lower):
            set_section(state, "mesh", "✅ Built")
        elif "assembl" in lower:
            set_section(state, "assembly", "⏳ Assembling")
        elif "newton" in lower or lower.startswith("ε=") or "stage" in lower:
            set_section(state, "newton", "⏳ Iterating")
            if "converged" in lower and "not converged" not in lower:
                state["summaries"]["newton"] = "✅ Converged"
        elif "continuation" in lower or "bisect" in lower:
            set_section(state, "continuation", "⏳ Marching")
            if "finished" in lower:
                state["summaries"]["continuation"] = "✅ Finished"
        elif "eoc" in lower or "diagnostic" in lower or "margin" in lower or "source check" in lower:
            set_section(state, "analysis", "✅ Computed")
        elif lower.startswith("💾") or "wrote" in lower or "saved" in lower:
            set_section(state, "output", "✅ Written")

        # Severity info
        for tag, badge in (("[error]", "🚨 ERROR"), ("[alert]", "⚠️ ALERT"), ("[warn]", "⚠️ WARN")):
            if tag in lower:
                state["summaries"][state["current_section"]] = badge
                break

        # Append log to current section
        k = state["current_section"]
        if msg not in state["seen"][k]:
            state["seen"][k].add(msg)
            state["log_lines"][k].append(msg)
            if len(state["log_lines"][k]) > MAX_LINES_PER_SECTION:
                state["log_lines"][k] = state["log_lines"][k][-MAX_LINES_PER_SECTION:]
            if echo:
                out = stream or sys.stdout
                try:
                    out.write(msg + "\n")
                except Exception:
                    pass

    push.state = state
    return push
