"""Regenerate src/guirl/data/static_fixture.json, a 40-step synthetic
annotation set covering every action kind.

Pointer targets come from the bundled app graph; three CLICK steps accept
two regions (e.g. a list item or its duplicate shortcut).
"""

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
apps = json.loads((ROOT / "src/guirl/data/apps.json").read_text())
widgets = [(s["id"], w) for s in apps["screens"] for w in s["widgets"]]


def region(w):
    cx, cy, bw, bh = w["bbox"]
    return {"cx": cx, "cy": cy, "w": bw, "h": bh}


steps = []


def add(kind, task, **kw):
    steps.append({"step_id": f"s{len(steps) + 1:03d}", "task": task, "gt_kind": kind, **kw})


clickable = [(sid, w) for sid, w in widgets if w["kind"] in ("button", "nav", "list_item")]
for sid, w in clickable[:11]:
    add("CLICK", f'Tap "{w["text"]}" on {sid}', regions=[region(w)])
# two valid regions: the named widget or the one right below it
for i in (12, 20, 30):
    (sid, a), (_, b) = clickable[i], clickable[i + 1]
    add("CLICK", f'Open "{a["text"]}" on {sid}', regions=[region(a), region(b)])
texts = ["see you at noon", "wireless earbuds", "central station", "quarterly report", "42 Elm Street", "running shoes"]
for t in texts:
    add("TYPE", f'Type "{t}"', refs=[t])
for dx, dy in [(0, -1200), (0, 1200), (-800, 0), (800, 0), (0, -600)]:
    add("SLIDE", "Scroll the list", vector=[dx, dy])
for app in ["mail", "shop", "maps", "mail"]:
    add("AWAKE", f"Open the {app} app", refs=[app])
for q, a in [("How many unread mails?", "3"), ("Which store is closest?", "Downtown Market"),
             ("What is the order total?", "$54.20"), ("When does the train leave?", "8:15 am")]:
    add("INFO", q, refs=[a])
for _ in range(3):
    add("COMPLETE", "Finish the task")
for _ in range(2):
    add("WAIT", "Wait for the page to load")
for sid, w in [x for x in widgets if x[1]["kind"] == "list_item"][:2]:
    add("LONGPRESS", f'Long-press "{w["text"]}" on {sid}', regions=[region(w)])

assert len(steps) == 40, len(steps)
(ROOT / "src/guirl/data/static_fixture.json").write_text(json.dumps(steps, indent=1, ensure_ascii=False) + "\n")
print(f"wrote {len(steps)} steps")
